#include "kiwiqe/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/log.hpp"
#include "kiwiqe/metrics.hpp"
#include "kiwiqe/rng.hpp"
#include "kiwiqe/simplex.hpp"

namespace kiwiqe {
namespace {

double weight_total(std::span<const double> weights, std::size_t expected, const char* what) {
  if (weights.size() != expected) {
    throw DimensionError(std::string(what) + ": " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(expected) + " members");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ContractError(std::string(what) + ": weights must be finite and nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw ContractError(std::string(what) + ": weights are all zero");
  return total;
}

std::uint64_t lp_key(const std::string& lp) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : lp) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double comparable(double metric) {
  return std::isnan(metric) ? -std::numeric_limits<double>::infinity() : metric;
}

bool has_scores(std::span<const MemberPredictions> m) { return !m.empty() && !m.front().scores.empty(); }

std::vector<Tag> member_tags(const MemberPredictions& m, std::size_t i, double threshold) {
  if (!m.tags.empty()) return m.tags.at(i);
  if (!m.logits.empty()) return tags_from_logits(m.logits.at(i), threshold);
  throw ContractError("member " + m.id + " has no word-level predictions");
}

// The metric family a best-only spec is judged by.
EnsembleStrategy best_only_basis(std::span<const MemberPredictions> members) {
  if (has_scores(members)) return EnsembleStrategy::kScores;
  return !members.front().tags.empty() ? EnsembleStrategy::kTags : EnsembleStrategy::kLogits;
}

EnsembleOutput combine(EnsembleStrategy strategy, const LpWeights& lw,
                       std::span<const MemberPredictions> members, std::span<const std::size_t> rows,
                       double threshold) {
  EnsembleOutput out;
  const std::size_t k = members.size();
  std::vector<double> xs(k);
  std::vector<Tensor> ls(k);
  std::vector<std::vector<Tag>> ts(k);
  for (std::size_t i : rows) {
    switch (strategy) {
      case EnsembleStrategy::kScores:
        for (std::size_t m = 0; m < k; ++m) xs[m] = members[m].scores.at(i);
        out.scores.push_back(ensemble_scores(xs, lw.weights));
        break;
      case EnsembleStrategy::kLogits:
        for (std::size_t m = 0; m < k; ++m) ls[m] = members[m].logits.at(i);
        out.tags.push_back(tags_from_logits(ensemble_logits(ls, lw.weights), threshold));
        break;
      case EnsembleStrategy::kTags:
        for (std::size_t m = 0; m < k; ++m) ts[m] = members[m].tags.at(i);
        out.tags.push_back(ensemble_tags(ts, lw.weights, lw.alpha));
        break;
      case EnsembleStrategy::kBestOnly: {
        const auto best = static_cast<std::size_t>(
            std::max_element(lw.weights.begin(), lw.weights.end()) - lw.weights.begin());
        const MemberPredictions& m = members[best];
        if (!m.scores.empty()) out.scores.push_back(m.scores.at(i));
        if (!m.tags.empty() || !m.logits.empty()) out.tags.push_back(member_tags(m, i, threshold));
        break;
      }
    }
  }
  return out;
}

double metric_on(EnsembleStrategy strategy, const EnsembleOutput& out, std::span<const QEExample> gold,
                 std::span<const std::size_t> rows) {
  std::vector<QEExample> subset;
  subset.reserve(rows.size());
  for (std::size_t i : rows) subset.push_back(gold[i]);
  return ensemble_metric(strategy, out, subset);
}

LpWeights one_hot(std::size_t k, std::size_t index) {
  LpWeights w;
  w.weights.assign(k, 0.0);
  w.weights[index] = 1.0;
  return w;
}

}  // namespace

std::string_view to_string(EnsembleStrategy s) {
  switch (s) {
    case EnsembleStrategy::kBestOnly: return "best_only";
    case EnsembleStrategy::kScores: return "scores";
    case EnsembleStrategy::kLogits: return "logits";
    case EnsembleStrategy::kTags: return "tags";
  }
  return "scores";
}

EnsembleStrategy parse_ensemble_strategy(std::string_view name) {
  if (name == "best_only") return EnsembleStrategy::kBestOnly;
  if (name == "scores") return EnsembleStrategy::kScores;
  if (name == "logits") return EnsembleStrategy::kLogits;
  if (name == "tags") return EnsembleStrategy::kTags;
  throw ConfigError("unknown ensemble strategy '" + std::string(name) + "'");
}

double ensemble_scores(std::span<const double> predictions, std::span<const double> weights) {
  const double total = weight_total(weights, predictions.size(), "ensemble_scores");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) acc += weights[i] * predictions[i];
  return acc / total;
}

Tensor ensemble_logits(std::span<const Tensor> logits, std::span<const double> weights) {
  const double total = weight_total(weights, logits.size(), "ensemble_logits");
  Tensor out = Tensor::zeros_like(logits.front());
  for (std::size_t m = 0; m < logits.size(); ++m) {
    if (logits[m].shape() != out.shape()) throw DimensionError("ensemble_logits: member shapes differ");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += weights[m] * logits[m][j];
  }
  for (double& v : out.values()) v /= total;
  return out;
}

std::vector<Tag> tags_from_logits(const Tensor& logits, double threshold) {
  std::vector<Tag> out;
  if (logits.size() == 0) return out;
  if (logits.cols() != 2) throw DimensionError("tags_from_logits: expected two columns");
  double probs[2];
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    softmax(logits.row(i), probs);
    out.push_back(probs[1] >= threshold ? Tag::kBad : Tag::kOk);
  }
  return out;
}

std::vector<Tag> ensemble_tags(std::span<const std::vector<Tag>> tags, std::span<const double> weights,
                               double alpha) {
  const double total = weight_total(weights, tags.size(), "ensemble_tags");
  if (!(alpha > 0.0)) throw ContractError("ensemble_tags: alpha must be positive");
  const std::size_t n = tags.front().size();
  std::vector<Tag> out(n);
  for (const auto& t : tags) {
    if (t.size() != n) throw DimensionError("ensemble_tags: members tag different lengths");
  }
  for (std::size_t j = 0; j < n; ++j) {
    double votes = 0.0;
    for (std::size_t m = 0; m < tags.size(); ++m) {
      if (tags[m][j] == Tag::kBad) votes += weights[m];
    }
    out[j] = alpha * votes / total >= 0.5 ? Tag::kBad : Tag::kOk;
  }
  return out;
}

const LpWeights& EnsembleSpec::weights_for(const std::string& lp) const {
  if (auto it = per_lp.find(lp); it != per_lp.end()) return it->second;
  if (auto it = per_lp.find(kPooledLp); it != per_lp.end()) return it->second;
  throw ContractError("ensemble spec has no weights for " + lp);
}

nlohmann::json EnsembleSpec::to_json() const {
  nlohmann::json lps = nlohmann::json::object();
  for (const auto& [lp, w] : per_lp) {
    lps[lp] = {{"weights", w.weights},
               {"alpha", w.alpha},
               {"dev_metric", std::isfinite(w.dev_metric) ? nlohmann::json(w.dev_metric) : nlohmann::json()},
               {"fallback", w.fallback}};
  }
  return {{"schema_version", 1},
          {"members", members},
          {"strategy", std::string(to_string(strategy))},
          {"per_lp", std::move(lps)}};
}

EnsembleSpec EnsembleSpec::from_json(const nlohmann::json& j) {
  EnsembleSpec s;
  try {
    if (j.at("schema_version").get<int>() != 1) throw ParseError("ensemble spec", 0, "unsupported schema_version");
    s.members = j.at("members").get<std::vector<std::string>>();
    s.strategy = parse_ensemble_strategy(j.at("strategy").get<std::string>());
    for (const auto& [lp, w] : j.at("per_lp").items()) {
      LpWeights lw;
      lw.weights = w.at("weights").get<std::vector<double>>();
      lw.alpha = w.value("alpha", 1.0);
      lw.dev_metric = w.contains("dev_metric") && w.at("dev_metric").is_number() ? w.at("dev_metric").get<double>()
                                                                                   : std::nan("");
      lw.fallback = w.value("fallback", false);
      weight_total(lw.weights, s.members.size(), "ensemble spec");
      s.per_lp.emplace(lp, std::move(lw));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("ensemble spec", 0, e.what());
  }
  if (s.members.empty()) throw ParseError("ensemble spec", 0, "no members");
  return s;
}

double ensemble_metric(EnsembleStrategy strategy, const EnsembleOutput& output,
                       std::span<const QEExample> gold) {
  const bool use_scores = strategy == EnsembleStrategy::kScores ||
                          (strategy == EnsembleStrategy::kBestOnly && !output.scores.empty());
  if (use_scores) {
    if (output.scores.size() != gold.size()) throw DimensionError("ensemble_metric: score count differs from gold");
    std::vector<double> g;
    for (const auto& e : gold) g.push_back(e.score);
    const LogLevel saved = log_level();
    set_log_level(LogLevel::kQuiet);
    const double r = gold.size() >= 2 ? metrics::spearman(output.scores, g) : std::nan("");
    set_log_level(saved);
    return r;
  }
  if (output.tags.size() != gold.size()) throw DimensionError("ensemble_metric: tag rows differ from gold");
  std::vector<Tag> p, g;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!gold[i].tags) throw ContractError("ensemble_metric: gold word tags missing");
    if (gold[i].tags->size() != output.tags[i].size()) {
      throw DimensionError("ensemble_metric: tag count differs from gold in row " + std::to_string(i + 1));
    }
    p.insert(p.end(), output.tags[i].begin(), output.tags[i].end());
    g.insert(g.end(), gold[i].tags->begin(), gold[i].tags->end());
  }
  return metrics::mcc(p, g);
}

EnsembleOutput apply_ensemble(const EnsembleSpec& spec, std::span<const MemberPredictions> members,
                              std::span<const QEExample> examples, double threshold) {
  if (members.size() != spec.members.size()) {
    throw DimensionError("apply_ensemble: spec lists " + std::to_string(spec.members.size()) + " members, got " +
                         std::to_string(members.size()));
  }
  EnsembleOutput out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::size_t row[] = {i};
    EnsembleOutput one = combine(spec.strategy, spec.weights_for(examples[i].lp), members, row, threshold);
    out.scores.insert(out.scores.end(), one.scores.begin(), one.scores.end());
    for (auto& t : one.tags) out.tags.push_back(std::move(t));
  }
  return out;
}

EnsembleSpec search_weights(std::span<const MemberPredictions> members, std::span<const QEExample> dev,
                            EnsembleStrategy strategy, const SearchConfig& config) {
  if (members.empty()) throw ContractError("search_weights: no members");
  if (dev.empty()) throw ContractError("search_weights: empty dev set");
  if (config.grid < 2) throw ConfigError("search grid needs at least two points");
  if (!(config.alpha_min > 0.0 && config.alpha_min <= config.alpha_max)) {
    throw ConfigError("alpha range must satisfy 0 < alpha_min <= alpha_max");
  }
  EnsembleSpec spec;
  spec.strategy = strategy;
  for (const auto& m : members) spec.members.push_back(m.id);
  const std::size_t k = members.size();
  const EnsembleStrategy judged = strategy == EnsembleStrategy::kBestOnly ? best_only_basis(members) : strategy;

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    groups[dev[i].lp].push_back(i);
    groups[kPooledLp].push_back(i);
  }
  for (const auto& [lp, rows] : groups) {
    auto score = [&](const LpWeights& w) {
      return comparable(metric_on(judged, combine(judged, w, members, rows, 0.5), dev, rows));
    };
    LpWeights best_single = one_hot(k, 0);
    best_single.dev_metric = score(best_single);
    for (std::size_t m = 1; m < k; ++m) {
      LpWeights w = one_hot(k, m);
      w.dev_metric = score(w);
      if (w.dev_metric > best_single.dev_metric) best_single = w;
    }
    best_single.fallback = true;
    if (strategy == EnsembleStrategy::kBestOnly || config.budget == 0 || k == 1) {
      spec.per_lp[lp] = best_single;
      continue;
    }
    const bool tune_alpha = strategy == EnsembleStrategy::kTags;
    Rng rng(mix_seed(config.seed, lp_key(lp)));
    LpWeights best;
    best.dev_metric = -std::numeric_limits<double>::infinity();
    for (std::size_t trial = 0; trial < config.budget; ++trial) {
      LpWeights w;
      double total = 0.0;
      while (!(total > 0.0)) {
        w.weights.assign(k, 0.0);
        total = 0.0;
        for (double& x : w.weights) total += (x = rng.uniform());
      }
      w.alpha = tune_alpha ? rng.uniform(config.alpha_min, config.alpha_max) : 1.0;
      w.dev_metric = score(w);
      if (best.weights.empty() || w.dev_metric > best.dev_metric) best = w;
    }
    for (int sweep = 0; sweep < config.sweeps; ++sweep) {
      for (std::size_t c = 0; c < k + (tune_alpha ? 1 : 0); ++c) {
        for (std::size_t g = 0; g < config.grid; ++g) {
          const double t = static_cast<double>(g) / static_cast<double>(config.grid - 1);
          LpWeights w = best;
          if (c < k) {
            w.weights[c] = t;
            if (std::all_of(w.weights.begin(), w.weights.end(), [](double x) { return x == 0.0; })) continue;
          } else {
            w.alpha = config.alpha_min + t * (config.alpha_max - config.alpha_min);
          }
          w.dev_metric = score(w);
          if (w.dev_metric > best.dev_metric) best = w;
        }
      }
    }
    spec.per_lp[lp] = best.dev_metric < best_single.dev_metric ? best_single : best;
  }
  return spec;
}

}  // namespace kiwiqe
