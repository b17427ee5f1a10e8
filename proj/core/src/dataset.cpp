#include "kiwiqe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/rng.hpp"
#include "kiwiqe/tokenizer.hpp"

namespace kiwiqe {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

double parse_score(const std::string& text, const std::string& source, std::size_t line) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw ParseError(source, line, "non-numeric score '" + text + "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(Tag tag) { return tag == Tag::kBad ? "BAD" : "OK"; }

Tag parse_tag(std::string_view text) {
  if (text == "OK") return Tag::kOk;
  if (text == "BAD") return Tag::kBad;
  throw ContractError("invalid tag '" + std::string(text) + "'");
}

ScoreSchema parse_score_schema(std::string_view name) {
  if (name == "da") return ScoreSchema::kDa;
  if (name == "hter") return ScoreSchema::kHter;
  if (name == "mqm") return ScoreSchema::kMqm;
  if (name == "tags") return ScoreSchema::kTags;
  throw ConfigError("unknown score schema '" + std::string(name) + "'");
}

std::vector<QEExample> parse_qe_tsv(const std::filesystem::path& path, ScoreSchema schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_qe_tsv(in, schema, path.string());
}

std::vector<QEExample> parse_qe_tsv(std::istream& in, ScoreSchema schema,
                                    const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source_name, 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_tabs(line);
  if (header.size() < 4 || header[0] != "lp" || header[1] != "src" || header[2] != "mt" ||
      header[3] != "score") {
    throw ParseError(source_name, 1, "header must start with lp, src, mt, score");
  }
  int tags_col = -1;
  int ref_col = -1;
  for (std::size_t c = 4; c < header.size(); ++c) {
    if (header[c] == "tags" && tags_col < 0 && ref_col < 0) {
      tags_col = static_cast<int>(c);
    } else if (header[c] == "ref" && ref_col < 0) {
      ref_col = static_cast<int>(c);
    } else {
      throw ParseError(source_name, 1, "unexpected header column '" + header[c] + "'");
    }
  }
  if (schema == ScoreSchema::kTags && tags_col < 0) {
    throw ParseError(source_name, 1, "tags schema requires a tags column");
  }

  std::vector<QEExample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != header.size()) {
      throw ParseError(source_name, line_no,
                       "expected " + std::to_string(header.size()) + " columns, found " +
                           std::to_string(cols.size()));
    }
    QEExample ex;
    ex.lp = cols[0];
    ex.source = cols[1];
    ex.target = cols[2];
    ex.score = parse_score(cols[3], source_name, line_no);
    if (schema == ScoreSchema::kHter && (ex.score < 0.0 || ex.score > 1.0)) {
      throw ParseError(source_name, line_no, "HTER score outside [0, 1]");
    }
    if (tags_col >= 0) {
      std::vector<Tag> tags;
      std::istringstream ts(cols[static_cast<std::size_t>(tags_col)]);
      std::string tok;
      while (ts >> tok) {
        if (tok == "OK") {
          tags.push_back(Tag::kOk);
        } else if (tok == "BAD") {
          tags.push_back(Tag::kBad);
        } else {
          throw ParseError(source_name, line_no, "invalid tag '" + tok + "'");
        }
      }
      const std::size_t words = split_words(ex.target).size();
      if (tags.size() != words) {
        throw ParseError(source_name, line_no,
                         "tag/word misalignment: " + std::to_string(tags.size()) + " tags for " +
                             std::to_string(words) + " target words");
      }
      ex.tags = std::move(tags);
    }
    if (ref_col >= 0) ex.reference = cols[static_cast<std::size_t>(ref_col)];
    out.push_back(std::move(ex));
  }
  return out;
}

void write_qe_tsv(const std::filesystem::path& path, std::span<const QEExample> examples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_qe_tsv(out, examples);
}

void write_qe_tsv(std::ostream& out, std::span<const QEExample> examples) {
  const bool with_tags = std::any_of(examples.begin(), examples.end(),
                                     [](const QEExample& e) { return e.tags.has_value(); });
  const bool with_ref = std::any_of(examples.begin(), examples.end(),
                                    [](const QEExample& e) { return e.reference.has_value(); });
  out << "lp\tsrc\tmt\tscore";
  if (with_tags) out << "\ttags";
  if (with_ref) out << "\tref";
  out << '\n';
  char buf[64];
  for (const QEExample& e : examples) {
    auto res = std::to_chars(buf, buf + sizeof(buf), e.score);
    out << e.lp << '\t' << e.source << '\t' << e.target << '\t'
        << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    if (with_tags) {
      out << '\t';
      if (e.tags) {
        for (std::size_t i = 0; i < e.tags->size(); ++i) {
          if (i > 0) out << ' ';
          out << to_string((*e.tags)[i]);
        }
      }
    }
    if (with_ref) out << '\t' << e.reference.value_or("");
    out << '\n';
  }
}

std::pair<double, double> tag_distribution(std::span<const QEExample> examples) {
  std::size_t ok = 0;
  std::size_t bad = 0;
  for (const QEExample& e : examples) {
    if (!e.tags) continue;
    for (Tag t : *e.tags) (t == Tag::kBad ? bad : ok)++;
  }
  const std::size_t total = ok + bad;
  if (total == 0) return {0.0, 0.0};
  return {static_cast<double>(ok) / static_cast<double>(total),
          static_cast<double>(bad) / static_cast<double>(total)};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_half_indices(
    std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ContractError("split_halves needs at least two examples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed(seed, 0x5B117));
  rng.shuffle(std::span<std::size_t>(idx));
  const std::size_t first = (n + 1) / 2;
  std::vector<std::size_t> a(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(first));
  std::vector<std::size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(first), idx.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

std::pair<std::vector<QEExample>, std::vector<QEExample>> split_halves(
    std::span<const QEExample> dataset, std::uint64_t seed) {
  if (dataset.empty()) throw ContractError("split_halves on an empty dataset");
  auto [ia, ib] = split_half_indices(dataset.size(), seed);
  std::vector<QEExample> a;
  std::vector<QEExample> b;
  for (std::size_t i : ia) a.push_back(dataset[i]);
  for (std::size_t i : ib) b.push_back(dataset[i]);
  return {std::move(a), std::move(b)};
}

std::vector<QEExample> filter_lp(std::span<const QEExample> examples, std::string_view lp) {
  std::vector<QEExample> out;
  for (const QEExample& e : examples) {
    if (e.lp == lp) out.push_back(e);
  }
  return out;
}

std::vector<std::string> language_pairs(std::span<const QEExample> examples) {
  std::set<std::string> lps;
  for (const QEExample& e : examples) lps.insert(e.lp);
  return {lps.begin(), lps.end()};
}

}  // namespace kiwiqe
