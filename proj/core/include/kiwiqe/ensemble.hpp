#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kiwiqe/dataset.hpp"
#include "kiwiqe/tensor.hpp"

namespace kiwiqe {

enum class EnsembleStrategy { kBestOnly, kScores, kLogits, kTags };

std::string_view to_string(EnsembleStrategy s);
EnsembleStrategy parse_ensemble_strategy(std::string_view name);

// Sum of w_i * x_i divided by the sum of weights. Throws ContractError when
// the weights are all zero or any weight is negative.
double ensemble_scores(std::span<const double> predictions, std::span<const double> weights);
// Weighted mean of n x 2 logit matrices.
Tensor ensemble_logits(std::span<const Tensor> logits, std::span<const double> weights);
// BAD iff softmax(logits)[BAD] >= threshold.
std::vector<Tag> tags_from_logits(const Tensor& logits, double threshold = 0.5);
// s_j = alpha * sum_i w_i c_ij / sum_i w_i; BAD iff s_j >= 0.5.
std::vector<Tag> ensemble_tags(std::span<const std::vector<Tag>> tags, std::span<const double> weights,
                               double alpha);

// One member's outputs on a dataset; unused members may stay empty.
struct MemberPredictions {
  std::string id;
  std::vector<double> scores;
  std::vector<Tensor> logits;  // per example, n x 2
  std::vector<std::vector<Tag>> tags;
};

struct LpWeights {
  std::vector<double> weights;
  double alpha = 1.0;
  double dev_metric = 0.0;
  bool fallback = false;  // search lost to the best single member
};

struct EnsembleSpec {
  std::vector<std::string> members;
  EnsembleStrategy strategy = EnsembleStrategy::kScores;
  // Per language pair; "*" is fitted on the pooled dev set and used for
  // language pairs that have no entry.
  std::map<std::string, LpWeights> per_lp;

  const LpWeights& weights_for(const std::string& lp) const;
  nlohmann::json to_json() const;
  static EnsembleSpec from_json(const nlohmann::json& j);
};

inline constexpr const char* kPooledLp = "*";

struct SearchConfig {
  std::size_t budget = 128;  // random samples; 0 selects the best single member
  int sweeps = 2;            // coordinate-descent passes
  std::size_t grid = 11;     // points per coordinate over [0, 1]
  double alpha_min = 0.5;
  double alpha_max = 4.0;
  std::uint64_t seed = 1;
};

struct EnsembleOutput {
  std::vector<double> scores;
  std::vector<std::vector<Tag>> tags;
};

// Spearman for scores, MCC for logits and tags.
double ensemble_metric(EnsembleStrategy strategy, const EnsembleOutput& output,
                       std::span<const QEExample> gold);

EnsembleOutput apply_ensemble(const EnsembleSpec& spec, std::span<const MemberPredictions> members,
                              std::span<const QEExample> examples, double threshold = 0.5);

// Per-LP random search plus coordinate refinement. An LP whose searched
// weights score below its best single member falls back to that member.
EnsembleSpec search_weights(std::span<const MemberPredictions> members, std::span<const QEExample> dev,
                            EnsembleStrategy strategy, const SearchConfig& config);

}  // namespace kiwiqe
