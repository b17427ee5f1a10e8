#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kiwiqe/qe_model.hpp"

namespace kiwiqe {

// kAuto resolves to spearman for sentence-only losses, mcc for word-only
// losses and combined (their mean) otherwise.
enum class EarlyStopMetric { kAuto, kSpearman, kMcc, kCombined };

std::string_view to_string(EarlyStopMetric m);
EarlyStopMetric parse_early_stop_metric(std::string_view name);
EarlyStopMetric resolve_early_stop(EarlyStopMetric m, const LossConfig& loss);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  AdamConfig adam;
  LossConfig loss;
  EarlyStopMetric early_stop = EarlyStopMetric::kAuto;
  int patience = 5;  // epochs without improvement; 0 disables early stopping
  std::uint64_t seed = 1;
  // Stop as soon as the dev metric reaches this value.
  double target_metric = std::numeric_limits<double>::infinity();

  void validate() const;
};

// Adam over a ParameterSet; moment buffers are created on first use.
class AdamOptimizer {
 public:
  AdamOptimizer(double learning_rate, AdamConfig config) : lr_(learning_rate), config_(config) {}
  void step(ParameterSet& params, const ParameterSet& grads);
  long steps() const { return t_; }

 private:
  double lr_;
  AdamConfig config_;
  long t_ = 0;
  ParameterSet m_;
  ParameterSet v_;
};

struct DevMetrics {
  double spearman = 0.0;  // NaN when undefined
  double mcc = 0.0;
  std::size_t examples = 0;
};

// Spearman of predicted vs gold scores and MCC over all tagged words.
DevMetrics evaluate_dev(const QeModel& model, std::span<const QEExample> dev);
double select_metric(const DevMetrics& m, EarlyStopMetric metric);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  DevMetrics dev;
  double dev_metric = 0.0;
  bool improved = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  QeModel model;  // checkpoint with the best dev metric
  int best_epoch = 0;  // 0: the initial checkpoint
  std::vector<EpochRecord> history;
};

// Mean loss over one batch.
double batch_loss(const QeModel& model, std::span<const QEExample> batch, const LossConfig& loss);
// Loss and parameter gradients for one batch.
double batch_gradients(const QeModel& model, std::span<const QEExample> batch,
                       const LossConfig& loss, ParameterSet& grads);

TrainResult train(const QeModel& initial, std::span<const QEExample> train_set,
                  std::span<const QEExample> dev_set, const TrainConfig& config);

void write_history_jsonl(const std::filesystem::path& path, std::span<const EpochRecord> history);

struct LpComparison {
  DevMetrics before;
  DevMetrics after;
};

struct FewShotReport {
  std::string adapted_lp;
  std::map<std::string, LpComparison> per_lp;  // adapted lp plus every monitored lp
  double guard_band = 0.02;
  // Monitored LPs whose Spearman dropped by more than guard_band.
  std::vector<std::string> guard_violations;
  std::vector<EpochRecord> history;

  nlohmann::json to_json() const;
};

struct FewShotResult {
  QeModel model;
  FewShotReport report;
};

// Continues training on the adaptation half, selects on the validation
// half, and measures every LP in `monitor` before and after. An empty
// adaptation set returns the input model unchanged.
FewShotResult finetune_fewshot(const QeModel& model, std::span<const QEExample> adaptation,
                               std::span<const QEExample> validation,
                               std::span<const QEExample> monitor, const TrainConfig& config,
                               double guard_band = 0.02);

}  // namespace kiwiqe
