#include "kiwiqe/ter.hpp"

#include <algorithm>
#include <vector>

#include "kiwiqe/errors.hpp"

namespace kiwiqe {

std::size_t word_edit_distance(std::span<const std::string> hypothesis,
                               std::span<const std::string> reference) {
  std::vector<std::size_t> prev(reference.size() + 1);
  std::vector<std::size_t> cur(reference.size() + 1);
  for (std::size_t j = 0; j <= reference.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hypothesis.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hypothesis[i - 1] == reference[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[reference.size()];
}

double compute_ter(std::span<const std::string> target_words,
                   std::span<const std::string> postedit_words) {
  if (postedit_words.empty()) throw ContractError("TER needs a non-empty post-edit");
  const double edits = static_cast<double>(word_edit_distance(target_words, postedit_words));
  return std::min(1.0, edits / static_cast<double>(postedit_words.size()));
}

}  // namespace kiwiqe
