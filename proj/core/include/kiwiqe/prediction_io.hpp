#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kiwiqe/dataset.hpp"
#include "kiwiqe/tensor.hpp"

// Plain-text prediction files, one line per sentence:
//   scores  - one number
//   tags    - space-separated OK/BAD
//   logits  - space-separated "ok,bad" logit pairs, one per word
//   word scores - space-separated numbers, one per word
// Numbers use the shortest representation that round-trips.
namespace kiwiqe {

std::string format_number(double v);

void write_scores(const std::filesystem::path& path, std::span<const double> scores);
std::vector<double> read_scores(const std::filesystem::path& path);

void write_tags(const std::filesystem::path& path, std::span<const std::vector<Tag>> tags);
std::vector<std::vector<Tag>> read_tags(const std::filesystem::path& path);

void write_logits(const std::filesystem::path& path, std::span<const Tensor> logits);
std::vector<Tensor> read_logits(const std::filesystem::path& path);

void write_word_scores(const std::filesystem::path& path, std::span<const std::vector<double>> scores);
std::vector<std::vector<double>> read_word_scores(const std::filesystem::path& path);

}  // namespace kiwiqe
