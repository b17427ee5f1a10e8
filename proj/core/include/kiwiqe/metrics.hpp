#pragma once

#include <cstddef>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "kiwiqe/dataset.hpp"

// Shared-task evaluation metrics. BAD is the positive class throughout.
namespace kiwiqe::metrics {

// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of average ranks. Constant input yields NaN and a
// warning.
double spearman(std::span<const double> x, std::span<const double> y);
double pearson(std::span<const double> x, std::span<const double> y);
double mae(std::span<const double> x, std::span<const double> y);
double rmse(std::span<const double> x, std::span<const double> y);

// Matthews correlation; 0 when any marginal is empty.
double mcc(std::span<const Tag> predicted, std::span<const Tag> gold);

struct F1Scores {
  double ok = 0.0;
  double bad = 0.0;
};
F1Scores f1_ok_bad(std::span<const Tag> predicted, std::span<const Tag> gold);

// Probability that a BAD token outscores an OK token, ties counted half.
// NaN unless both classes are present.
double auc(std::span<const double> scores, std::span<const Tag> gold);
// Precision-weighted recall increments over descending score groups.
double average_precision(std::span<const double> scores, std::span<const Tag> gold);
// K = number of gold BAD tokens. Equal scores are ordered by position.
double recall_at_k(std::span<const double> scores, std::span<const Tag> gold);
// Number of gold-BAD tokens among the K highest scores (same ordering).
std::size_t hits_at_k(std::span<const double> scores, std::span<const Tag> gold);

struct ThresholdResult {
  double mcc = 0.0;
  double threshold = 0.0;
};

// Sweeps every midpoint between sorted distinct scores (positive iff
// score > threshold) and keeps the best MCC, lowest threshold on ties.
ThresholdResult mcc_best_threshold(std::span<const double> scores, std::span<const int> gold);

enum class RecallAggregation { kMacro, kMicro };

struct ExplainabilityScores {
  double auc = 0.0;
  double ap = 0.0;
  double recall_at_k = 0.0;
  std::size_t sentences = 0;  // sentences with at least one BAD word

  double mean() const { return (auc + ap + recall_at_k) / 3.0; }
};

// Corpus explainability scores over sentences that contain errors. AUC is
// averaged over the sentences that also contain an OK word.
ExplainabilityScores explainability_scores(std::span<const std::vector<double>> word_scores,
                                           std::span<const std::vector<Tag>> gold,
                                           RecallAggregation recall = RecallAggregation::kMacro);

// Everything a system produced for a gold set; empty members are skipped.
struct SystemOutput {
  std::vector<double> scores;
  std::vector<std::vector<Tag>> tags;
  std::vector<std::vector<double>> word_scores;
};

struct EvalReport {
  // lp -> metric name -> value. "all" holds the pooled corpus.
  std::map<std::string, std::map<std::string, double>> per_lp;
  // metric name -> unweighted mean over language pairs.
  std::map<std::string, double> average;

  nlohmann::json to_json() const;
  std::string to_tsv() const;
};

EvalReport evaluate(std::span<const QEExample> gold, const SystemOutput& output,
                    RecallAggregation recall = RecallAggregation::kMacro);

}  // namespace kiwiqe::metrics
