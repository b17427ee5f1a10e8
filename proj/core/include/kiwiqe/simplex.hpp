#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kiwiqe {

// Maps a logit vector onto the probability simplex.
enum class SimplexTransform { kSoftmax, kSparsemax };

std::string_view to_string(SimplexTransform t);
SimplexTransform parse_simplex_transform(std::string_view name);

// Row-max shifted softmax.
void softmax(std::span<const double> logits, std::span<double> out);
std::vector<double> softmax(std::span<const double> logits);

// Euclidean projection onto the simplex by sorting and thresholding.
// Returns the threshold tau; out[i] = max(z[i] - tau, 0).
double sparsemax(std::span<const double> logits, std::span<double> out);
std::vector<double> sparsemax(std::span<const double> logits);

void apply_transform(SimplexTransform t, std::span<const double> logits,
                     std::span<double> out);

struct SimplexWeights {
  std::vector<double> logits;
  std::vector<double> probs;
  SimplexTransform transform = SimplexTransform::kSparsemax;

  static SimplexWeights from_logits(std::vector<double> logits, SimplexTransform t);
};

}  // namespace kiwiqe
