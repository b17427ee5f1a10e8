#pragma once

// Slow, independent reference implementations used to check the library.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kiwiqe/autodiff.hpp"
#include "kiwiqe/dataset.hpp"
#include "kiwiqe/rng.hpp"

namespace oracle {

// Euclidean projection onto the simplex, found by bisecting the threshold
// tau of sum_i max(z_i - tau, 0) = 1.
std::vector<double> simplex_projection(std::span<const double> z);

// exp(z_i) / sum exp(z_j) in long double.
std::vector<double> softmax(std::span<const double> z);

// rank_i = #{j : x_j < x_i} + (#{j : x_j == x_i} + 1) / 2
std::vector<double> ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
double mcc(std::span<const kiwiqe::Tag> pred, std::span<const kiwiqe::Tag> gold);
// (f1_ok, f1_bad)
std::pair<double, double> f1(std::span<const kiwiqe::Tag> pred, std::span<const kiwiqe::Tag> gold);
// Exhaustive pair counting.
double auc(std::span<const double> scores, std::span<const kiwiqe::Tag> gold);
// Recomputes precision and recall from scratch at every distinct threshold.
double average_precision(std::span<const double> scores, std::span<const kiwiqe::Tag> gold);
double recall_at_k(std::span<const double> scores, std::span<const kiwiqe::Tag> gold);
struct Best {
  double mcc;
  double threshold;
};
Best mcc_best_threshold(std::span<const double> scores, std::span<const int> gold);

// Levenshtein distance by full dynamic-programming table.
std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Builds a scalar loss from fresh leaves. Called repeatedly on new tapes.
using GraphFn = std::function<kiwiqe::ad::Var(kiwiqe::ad::Tape&, std::span<const kiwiqe::ad::Var>)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
};

// Compares tape gradients with central differences of step h. The error is
// max|analytic - numeric| over every leaf entry divided by the largest
// magnitude of either gradient (floored at 1e-8).
GradCheck check_gradients(const GraphFn& fn, const std::vector<kiwiqe::Tensor>& leaves, double h = 1e-5);

kiwiqe::Tensor random_tensor(kiwiqe::Rng& rng, kiwiqe::Shape shape, double lo = -1.0, double hi = 1.0);

}  // namespace oracle
