#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kiwiqe {

// BAD is the positive class everywhere.
enum class Tag : std::uint8_t { kOk = 0, kBad = 1 };

std::string_view to_string(Tag tag);
Tag parse_tag(std::string_view text);

struct QEExample {
  std::string lp;  // language pair, e.g. "en-de"
  std::string source;
  std::string target;
  std::optional<std::string> reference;
  double score = 0.0;  // DA z-score, MQM score or HTER
  std::optional<std::vector<Tag>> tags;  // one per target word

  bool operator==(const QEExample&) const = default;
};

// What the score column holds. kHter additionally requires scores in [0, 1];
// kTags requires the tags column.
enum class ScoreSchema { kDa, kHter, kMqm, kTags };

ScoreSchema parse_score_schema(std::string_view name);

// Reads `lp<TAB>src<TAB>mt<TAB>score[<TAB>tags][<TAB>ref]` with a header row.
// Errors carry the 1-based line number.
std::vector<QEExample> parse_qe_tsv(const std::filesystem::path& path, ScoreSchema schema);
std::vector<QEExample> parse_qe_tsv(std::istream& in, ScoreSchema schema,
                                    const std::string& source_name = "<stream>");

void write_qe_tsv(const std::filesystem::path& path, std::span<const QEExample> examples);
void write_qe_tsv(std::ostream& out, std::span<const QEExample> examples);

// (OK ratio, BAD ratio) over all tagged words.
std::pair<double, double> tag_distribution(std::span<const QEExample> examples);

// Seeded disjoint halves; the first gets the extra element of an odd count.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_half_indices(std::size_t n,
                                                                                 std::uint64_t seed);
std::pair<std::vector<QEExample>, std::vector<QEExample>> split_halves(
    std::span<const QEExample> dataset, std::uint64_t seed);

std::vector<QEExample> filter_lp(std::span<const QEExample> examples, std::string_view lp);
std::vector<std::string> language_pairs(std::span<const QEExample> examples);

}  // namespace kiwiqe
