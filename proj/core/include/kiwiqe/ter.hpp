#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace kiwiqe {

// Word-level Levenshtein distance (unit-cost insert, delete, substitute).
std::size_t word_edit_distance(std::span<const std::string> hypothesis,
                               std::span<const std::string> reference);

// Edit distance from the MT output to its post-edit divided by the post-edit
// length, capped at 1. Block shifts are not searched.
double compute_ter(std::span<const std::string> target_words,
                   std::span<const std::string> postedit_words);

}  // namespace kiwiqe
