#include "kiwiqe/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "kiwiqe/errors.hpp"

namespace kiwiqe {

std::string_view to_string(SimplexTransform t) {
  return t == SimplexTransform::kSoftmax ? "softmax" : "sparsemax";
}

SimplexTransform parse_simplex_transform(std::string_view name) {
  if (name == "softmax") return SimplexTransform::kSoftmax;
  if (name == "sparsemax") return SimplexTransform::kSparsemax;
  throw ConfigError("unknown simplex transform '" + std::string(name) + "'");
}

void softmax(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) return;
  const double max = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    total += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= total;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax(logits, out);
  return out;
}

double sparsemax(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) return 0.0;
  std::vector<double> sorted(logits.begin(), logits.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  // Support size k is the largest k with 1 + k * z_(k) > sum_{j<=k} z_(j).
  double cumsum = 0.0;
  double support_sum = sorted[0];
  std::size_t support = 1;
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    cumsum += sorted[k - 1];
    if (1.0 + static_cast<double>(k) * sorted[k - 1] > cumsum) {
      support = k;
      support_sum = cumsum;
    } else {
      break;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(support);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::max(logits[i] - tau, 0.0);
  return tau;
}

std::vector<double> sparsemax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  sparsemax(logits, out);
  return out;
}

void apply_transform(SimplexTransform t, std::span<const double> logits,
                     std::span<double> out) {
  if (t == SimplexTransform::kSoftmax) {
    softmax(logits, out);
  } else {
    sparsemax(logits, out);
  }
}

SimplexWeights SimplexWeights::from_logits(std::vector<double> logits, SimplexTransform t) {
  SimplexWeights w;
  w.probs.resize(logits.size());
  apply_transform(t, logits, w.probs);
  w.logits = std::move(logits);
  w.transform = t;
  return w;
}

}  // namespace kiwiqe
