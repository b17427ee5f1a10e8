#include "kiwiqe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/log.hpp"

namespace kiwiqe::metrics {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_pair(std::size_t a, std::size_t b, const char* name, std::size_t min_len) {
  if (a != b) {
    throw DimensionError(std::string(name) + ": length mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
  }
  if (a < min_len) {
    throw ContractError(std::string(name) + ": needs at least " + std::to_string(min_len) +
                        " items");
  }
}

double mcc_from_counts(double tp, double tn, double fp, double fn) {
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

double f1(double tp, double predicted, double actual) {
  if (predicted == 0.0 || actual == 0.0) return 0.0;
  const double p = tp / predicted;
  const double r = tp / actual;
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// Indices ordered by descending score, position breaking ties.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i + 1;
    while (j < idx.size() && values[idx[j]] == values[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = rank;
    i = j;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_pair(x.size(), y.size(), "pearson", 2);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    log_warning("correlation undefined for constant input");
    return kNaN;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require_pair(x.size(), y.size(), "spearman", 2);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double mae(std::span<const double> x, std::span<const double> y) {
  require_pair(x.size(), y.size(), "mae", 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}

double rmse(std::span<const double> x, std::span<const double> y) {
  require_pair(x.size(), y.size(), "rmse", 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double mcc(std::span<const Tag> predicted, std::span<const Tag> gold) {
  require_pair(predicted.size(), gold.size(), "mcc", 0);
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = predicted[i] == Tag::kBad;
    const bool g = gold[i] == Tag::kBad;
    if (p && g) {
      ++tp;
    } else if (!p && !g) {
      ++tn;
    } else if (p) {
      ++fp;
    } else {
      ++fn;
    }
  }
  return mcc_from_counts(tp, tn, fp, fn);
}

F1Scores f1_ok_bad(std::span<const Tag> predicted, std::span<const Tag> gold) {
  require_pair(predicted.size(), gold.size(), "f1_ok_bad", 0);
  double tp_bad = 0, pred_bad = 0, gold_bad = 0;
  double tp_ok = 0, pred_ok = 0, gold_ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = predicted[i] == Tag::kBad;
    const bool g = gold[i] == Tag::kBad;
    (p ? pred_bad : pred_ok) += 1;
    (g ? gold_bad : gold_ok) += 1;
    if (p && g) tp_bad += 1;
    if (!p && !g) tp_ok += 1;
  }
  return {f1(tp_ok, pred_ok, gold_ok), f1(tp_bad, pred_bad, gold_bad)};
}

double auc(std::span<const double> scores, std::span<const Tag> gold) {
  require_pair(scores.size(), gold.size(), "auc", 0);
  const auto ranks = average_ranks(scores);
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == Tag::kBad) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double neg = static_cast<double>(gold.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return kNaN;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double average_precision(std::span<const double> scores, std::span<const Tag> gold) {
  require_pair(scores.size(), gold.size(), "average_precision", 0);
  const double positives =
      static_cast<double>(std::count(gold.begin(), gold.end(), Tag::kBad));
  if (positives == 0.0) throw ContractError("average_precision needs at least one BAD token");
  const auto order = descending_order(scores);
  double ap = 0.0;
  double tp = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double group_tp = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (gold[order[j]] == Tag::kBad) group_tp += 1.0;
      ++j;
    }
    tp += group_tp;
    if (group_tp > 0.0) ap += (group_tp / positives) * (tp / static_cast<double>(j));
    i = j;
  }
  return ap;
}

std::size_t hits_at_k(std::span<const double> scores, std::span<const Tag> gold) {
  require_pair(scores.size(), gold.size(), "recall_at_k", 0);
  const auto k = static_cast<std::size_t>(std::count(gold.begin(), gold.end(), Tag::kBad));
  const auto order = descending_order(scores);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < k; ++r) {
    if (gold[order[r]] == Tag::kBad) ++hits;
  }
  return hits;
}

double recall_at_k(std::span<const double> scores, std::span<const Tag> gold) {
  const auto k = static_cast<std::size_t>(std::count(gold.begin(), gold.end(), Tag::kBad));
  if (k == 0) throw ContractError("recall_at_k needs at least one BAD token");
  return static_cast<double>(hits_at_k(scores, gold)) / static_cast<double>(k);
}

ThresholdResult mcc_best_threshold(std::span<const double> scores, std::span<const int> gold) {
  require_pair(scores.size(), gold.size(), "mcc_best_threshold", 2);
  double total_pos = 0.0;
  for (int g : gold) {
    if (g != 0 && g != 1) throw ContractError("mcc_best_threshold: labels must be 0 or 1");
    total_pos += g;
  }
  const double total_neg = static_cast<double>(gold.size()) - total_pos;
  if (total_pos == 0.0 || total_neg == 0.0) {
    throw ContractError("mcc_best_threshold needs both classes in gold");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk distinct values upwards; everything above the current midpoint is
  // predicted positive.
  ThresholdResult best{0.0, scores[order.front()]};
  bool have_candidate = false;
  double below_pos = 0.0;
  double below_neg = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (gold[order[j]] == 1 ? below_pos : below_neg) += 1.0;
      ++j;
    }
    if (j == order.size()) break;
    const double threshold = 0.5 * (scores[order[i]] + scores[order[j]]);
    const double tp = total_pos - below_pos;
    const double fp = total_neg - below_neg;
    const double value = mcc_from_counts(tp, below_neg, fp, below_pos);
    if (!have_candidate || value > best.mcc) {
      best = {value, threshold};
      have_candidate = true;
    }
    i = j;
  }
  return best;
}

ExplainabilityScores explainability_scores(std::span<const std::vector<double>> word_scores,
                                           std::span<const std::vector<Tag>> gold,
                                           RecallAggregation recall) {
  require_pair(word_scores.size(), gold.size(), "explainability_scores", 0);
  ExplainabilityScores out;
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  double ap_sum = 0.0;
  double r_sum = 0.0;
  std::size_t hits = 0;
  std::size_t total_k = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold[s];
    require_pair(word_scores[s].size(), g.size(), "explainability_scores", 0);
    const auto k = static_cast<std::size_t>(std::count(g.begin(), g.end(), Tag::kBad));
    if (k == 0) continue;
    ++out.sentences;
    if (k < g.size()) {
      auc_sum += auc(word_scores[s], g);
      ++auc_count;
    }
    ap_sum += average_precision(word_scores[s], g);
    const std::size_t h = hits_at_k(word_scores[s], g);
    hits += h;
    total_k += k;
    r_sum += static_cast<double>(h) / static_cast<double>(k);
  }
  if (out.sentences == 0) return out;
  out.auc = auc_count == 0 ? kNaN : auc_sum / static_cast<double>(auc_count);
  out.ap = ap_sum / static_cast<double>(out.sentences);
  out.recall_at_k = recall == RecallAggregation::kMacro
                        ? r_sum / static_cast<double>(out.sentences)
                        : static_cast<double>(hits) / static_cast<double>(total_k);
  return out;
}

nlohmann::json EvalReport::to_json() const {
  auto number = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::json out;
  out["schema_version"] = 1;
  nlohmann::json lps = nlohmann::json::object();
  for (const auto& [lp, values] : per_lp) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [name, v] : values) m[name] = number(v);
    lps[lp] = m;
  }
  out["per_lp"] = lps;
  nlohmann::json avg = nlohmann::json::object();
  for (const auto& [name, v] : average) avg[name] = number(v);
  out["average"] = avg;
  return out;
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << "lp\tmetric\tvalue\n";
  for (const auto& [lp, values] : per_lp) {
    for (const auto& [name, v] : values) os << lp << '\t' << name << '\t' << format_number(v) << '\n';
  }
  for (const auto& [name, v] : average) os << "avg\t" << name << '\t' << format_number(v) << '\n';
  return os.str();
}

namespace {

std::map<std::string, double> evaluate_subset(std::span<const QEExample> gold,
                                              const SystemOutput& out,
                                              std::span<const std::size_t> rows,
                                              RecallAggregation recall) {
  std::map<std::string, double> m;
  if (!out.scores.empty() && rows.size() >= 2) {
    std::vector<double> pred;
    std::vector<double> ref;
    for (std::size_t r : rows) {
      pred.push_back(out.scores[r]);
      ref.push_back(gold[r].score);
    }
    m["spearman"] = spearman(pred, ref);
    m["pearson"] = pearson(pred, ref);
    m["mae"] = mae(pred, ref);
    m["rmse"] = rmse(pred, ref);
  }
  if (!out.tags.empty()) {
    std::vector<Tag> pred;
    std::vector<Tag> ref;
    for (std::size_t r : rows) {
      if (!gold[r].tags) continue;
      pred.insert(pred.end(), out.tags[r].begin(), out.tags[r].end());
      ref.insert(ref.end(), gold[r].tags->begin(), gold[r].tags->end());
    }
    if (!ref.empty()) {
      m["mcc"] = mcc(pred, ref);
      const F1Scores f = f1_ok_bad(pred, ref);
      m["f1_ok"] = f.ok;
      m["f1_bad"] = f.bad;
    }
  }
  if (!out.word_scores.empty()) {
    std::vector<std::vector<double>> scores;
    std::vector<std::vector<Tag>> ref;
    for (std::size_t r : rows) {
      if (!gold[r].tags) continue;
      scores.push_back(out.word_scores[r]);
      ref.push_back(*gold[r].tags);
    }
    const ExplainabilityScores e = explainability_scores(scores, ref, recall);
    if (e.sentences > 0) {
      m["auc"] = e.auc;
      m["ap"] = e.ap;
      m["recall_at_k"] = e.recall_at_k;
      m["explain_mean"] = e.mean();
    }
  }
  return m;
}

}  // namespace

EvalReport evaluate(std::span<const QEExample> gold, const SystemOutput& output,
                    RecallAggregation recall) {
  auto check = [&](std::size_t n, const char* what) {
    if (n != 0 && n != gold.size()) {
      throw DimensionError(std::string("evaluate: ") + what + " has " + std::to_string(n) +
                           " rows but gold has " + std::to_string(gold.size()));
    }
  };
  check(output.scores.size(), "scores");
  check(output.tags.size(), "tags");
  check(output.word_scores.size(), "word scores");
  for (std::size_t r = 0; r < gold.size(); ++r) {
    if (!gold[r].tags) continue;
    if (!output.tags.empty() && output.tags[r].size() != gold[r].tags->size()) {
      throw DimensionError("evaluate: row " + std::to_string(r + 1) + " has " +
                           std::to_string(output.tags[r].size()) + " predicted tags for " +
                           std::to_string(gold[r].tags->size()) + " gold tags");
    }
    if (!output.word_scores.empty() && output.word_scores[r].size() != gold[r].tags->size()) {
      throw DimensionError("evaluate: row " + std::to_string(r + 1) +
                           " word score count differs from gold");
    }
  }

  EvalReport report;
  std::map<std::string, std::vector<std::size_t>> by_lp;
  for (std::size_t r = 0; r < gold.size(); ++r) by_lp[gold[r].lp].push_back(r);
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& [lp, rows] : by_lp) {
    report.per_lp[lp] = evaluate_subset(gold, output, rows, recall);
    for (const auto& [name, v] : report.per_lp[lp]) {
      if (std::isnan(v)) continue;
      sums[name].first += v;
      sums[name].second += 1;
    }
  }
  for (const auto& [name, acc] : sums) {
    report.average[name] = acc.first / static_cast<double>(acc.second);
  }
  std::vector<std::size_t> all(gold.size());
  std::iota(all.begin(), all.end(), 0);
  report.per_lp["all"] = evaluate_subset(gold, output, all, recall);
  return report;
}

}  // namespace kiwiqe::metrics
