#include "kiwiqe/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/log.hpp"
#include "kiwiqe/metrics.hpp"
#include "kiwiqe/rng.hpp"

namespace kiwiqe {
namespace {

bool better(double candidate, double incumbent) {
  if (std::isnan(candidate)) return false;
  return std::isnan(incumbent) || candidate > incumbent;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

nlohmann::json dev_to_json(const DevMetrics& m) {
  return {{"spearman", number_or_null(m.spearman)}, {"mcc", number_or_null(m.mcc)}, {"examples", m.examples}};
}

}  // namespace

std::string_view to_string(EarlyStopMetric m) {
  switch (m) {
    case EarlyStopMetric::kAuto: return "auto";
    case EarlyStopMetric::kSpearman: return "spearman";
    case EarlyStopMetric::kMcc: return "mcc";
    case EarlyStopMetric::kCombined: return "combined";
  }
  return "auto";
}

EarlyStopMetric parse_early_stop_metric(std::string_view name) {
  if (name == "auto") return EarlyStopMetric::kAuto;
  if (name == "spearman") return EarlyStopMetric::kSpearman;
  if (name == "mcc") return EarlyStopMetric::kMcc;
  if (name == "combined") return EarlyStopMetric::kCombined;
  throw ConfigError("unknown early-stop metric '" + std::string(name) + "'");
}

EarlyStopMetric resolve_early_stop(EarlyStopMetric m, const LossConfig& loss) {
  if (m != EarlyStopMetric::kAuto) return m;
  if (loss.lambda_word == 0.0) return EarlyStopMetric::kSpearman;
  if (loss.lambda_sent == 0.0) return EarlyStopMetric::kMcc;
  return EarlyStopMetric::kCombined;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (patience < 0) throw ConfigError("patience must be nonnegative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  loss.validate();
}

void AdamOptimizer::step(ParameterSet& params, const ParameterSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!grads.contains(name)) continue;
    const Tensor& g = grads.at(name);
    if (!m_.contains(name)) {
      m_.set(name, Tensor::zeros_like(p));
      v_.set(name, Tensor::zeros_like(p));
    }
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

DevMetrics evaluate_dev(const QeModel& model, std::span<const QEExample> dev) {
  DevMetrics out;
  out.examples = dev.size();
  if (dev.empty()) {
    out.spearman = out.mcc = std::nan("");
    return out;
  }
  const auto preds = model.predict(dev);
  std::vector<double> gold, pred;
  std::vector<Tag> gold_tags, pred_tags;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    gold.push_back(dev[i].score);
    pred.push_back(preds[i].sentence_score);
    if (dev[i].tags) {
      gold_tags.insert(gold_tags.end(), dev[i].tags->begin(), dev[i].tags->end());
      pred_tags.insert(pred_tags.end(), preds[i].word_tags.begin(), preds[i].word_tags.end());
    }
  }
  const LogLevel saved = log_level();
  set_log_level(LogLevel::kQuiet);
  out.spearman = dev.size() >= 2 ? metrics::spearman(pred, gold) : std::nan("");
  set_log_level(saved);
  out.mcc = gold_tags.empty() ? std::nan("") : metrics::mcc(pred_tags, gold_tags);
  return out;
}

double select_metric(const DevMetrics& m, EarlyStopMetric metric) {
  switch (metric) {
    case EarlyStopMetric::kSpearman: return m.spearman;
    case EarlyStopMetric::kMcc: return m.mcc;
    case EarlyStopMetric::kCombined:
    case EarlyStopMetric::kAuto: return 0.5 * (m.spearman + m.mcc);
  }
  return m.spearman;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"train_loss", number_or_null(train_loss)},
          {"dev", dev_to_json(dev)},
          {"dev_metric", number_or_null(dev_metric)},
          {"improved", improved}};
}

double batch_loss(const QeModel& model, std::span<const QEExample> batch, const LossConfig& loss) {
  std::vector<TokenizedInput> inputs;
  for (const auto& e : batch) inputs.push_back(model.tokenize(e));
  ad::Tape tape;
  const Binding bound(tape, model.params(), false);
  const BatchGraph g = model.forward(bound, inputs);
  return model.loss(g, batch, loss).value().item();
}

double batch_gradients(const QeModel& model, std::span<const QEExample> batch,
                       const LossConfig& loss, ParameterSet& grads) {
  std::vector<TokenizedInput> inputs;
  for (const auto& e : batch) inputs.push_back(model.tokenize(e));
  ad::Tape tape;
  const Binding bound(tape, model.params(), true);
  const BatchGraph g = model.forward(bound, inputs);
  const ad::Var l = model.loss(g, batch, loss);
  const double value = l.value().item();
  if (!std::isfinite(value)) return value;
  tape.backward(l);
  grads = bound.gradients();
  return value;
}

TrainResult train(const QeModel& initial, std::span<const QEExample> train_set,
                  std::span<const QEExample> dev_set, const TrainConfig& config) {
  config.validate();
  TrainResult result{initial, 0, {}};
  if (config.epochs == 0) return result;
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (dev_set.empty()) throw ContractError("train: empty dev set");
  if (config.loss.lambda_word > 0.0) {
    for (const auto& e : train_set) {
      if (!e.tags) throw ContractError("train: word tags required when lambda_word > 0");
    }
  }
  const EarlyStopMetric metric = resolve_early_stop(config.early_stop, config.loss);

  QeModel model = initial;
  AdamOptimizer opt(config.learning_rate, config.adam);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::nan("");
  int since_best = 0;
  std::vector<QEExample> batch;
  ParameterSet grads;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train_set[order[i]]);
      const double l = batch_gradients(model, batch, config.loss, grads);
      if (!std::isfinite(l)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(steps + 1) + "; try a smaller learning rate");
      }
      opt.step(model.params(), grads);
      loss_sum += l;
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(steps);
    rec.dev = evaluate_dev(model, dev_set);
    rec.dev_metric = select_metric(rec.dev, metric);
    rec.improved = result.best_epoch == 0 || better(rec.dev_metric, best);
    if (rec.improved) {
      best = rec.dev_metric;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else {
      ++since_best;
    }
    log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.train_loss) +
             " dev spearman " + std::to_string(rec.dev.spearman) + " mcc " + std::to_string(rec.dev.mcc));
    result.history.push_back(rec);
    if (config.patience > 0 && since_best >= config.patience) break;
    if (rec.dev_metric >= config.target_metric) break;
  }
  return result;
}

void write_history_jsonl(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : history) out << r.to_json().dump() << '\n';
}

nlohmann::json FewShotReport::to_json() const {
  nlohmann::json lps = nlohmann::json::object();
  for (const auto& [lp, c] : per_lp) {
    lps[lp] = {{"before", dev_to_json(c.before)}, {"after", dev_to_json(c.after)}};
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history) hist.push_back(r.to_json());
  return {{"adapted_lp", adapted_lp},
          {"per_lp", std::move(lps)},
          {"guard_band", guard_band},
          {"guard_violations", guard_violations},
          {"history", std::move(hist)}};
}

FewShotResult finetune_fewshot(const QeModel& model, std::span<const QEExample> adaptation,
                               std::span<const QEExample> validation,
                               std::span<const QEExample> monitor, const TrainConfig& config,
                               double guard_band) {
  FewShotResult out{model, {}};
  out.report.guard_band = guard_band;
  const auto adapted = language_pairs(adaptation.empty() ? validation : adaptation);
  out.report.adapted_lp = adapted.size() == 1 ? adapted.front() : std::string();

  std::map<std::string, std::vector<QEExample>> groups;
  for (const auto& e : validation) groups[e.lp].push_back(e);
  for (const auto& e : monitor) groups[e.lp].push_back(e);
  for (const auto& [lp, examples] : groups) out.report.per_lp[lp].before = evaluate_dev(model, examples);

  if (!adaptation.empty()) {
    TrainResult r = train(model, adaptation, validation.empty() ? adaptation : validation, config);
    out.model = std::move(r.model);
    out.report.history = std::move(r.history);
  }
  for (const auto& [lp, examples] : groups) {
    LpComparison& c = out.report.per_lp[lp];
    c.after = adaptation.empty() ? c.before : evaluate_dev(out.model, examples);
    const bool monitored = std::find(adapted.begin(), adapted.end(), lp) == adapted.end();
    if (monitored && c.before.spearman - c.after.spearman > guard_band) {
      out.report.guard_violations.push_back(lp);
      log_warning("few-shot adaptation lowered " + lp + " Spearman by more than the guard band");
    }
  }
  return out;
}

}  // namespace kiwiqe
