#include "kiwiqe/prediction_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/tokenizer.hpp"

namespace kiwiqe {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

double parse_number(std::string_view text, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ParseError(path.string(), line, "not a finite number: '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

void write_scores(const std::filesystem::path& path, std::span<const double> scores) {
  auto out = open_out(path);
  for (double s : scores) out << format_number(s) << '\n';
}

std::vector<double> read_scores(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<double> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto words = split_words(lines[i]);
    if (words.size() != 1) throw ParseError(path.string(), i + 1, "expected one score");
    out.push_back(parse_number(words[0], path, i + 1));
  }
  return out;
}

void write_tags(const std::filesystem::path& path, std::span<const std::vector<Tag>> tags) {
  auto out = open_out(path);
  for (const auto& row : tags) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << to_string(row[i]);
    out << '\n';
  }
}

std::vector<std::vector<Tag>> read_tags(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<std::vector<Tag>> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<Tag> row;
    for (const auto& w : split_words(lines[i])) {
      try {
        row.push_back(parse_tag(w));
      } catch (const Error& e) {
        throw ParseError(path.string(), i + 1, e.what());
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

void write_logits(const std::filesystem::path& path, std::span<const Tensor> logits) {
  auto out = open_out(path);
  for (const auto& m : logits) {
    const std::size_t n = m.size() / 2;
    for (std::size_t i = 0; i < n; ++i) {
      out << (i ? " " : "") << format_number(m[2 * i]) << ',' << format_number(m[2 * i + 1]);
    }
    out << '\n';
  }
}

std::vector<Tensor> read_logits(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto pairs = split_words(lines[i]);
    Tensor m = Tensor::matrix(pairs.size(), 2);
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      const auto comma = pairs[j].find(',');
      if (comma == std::string::npos) throw ParseError(path.string(), i + 1, "expected an ok,bad logit pair");
      m(j, 0) = parse_number(std::string_view(pairs[j]).substr(0, comma), path, i + 1);
      m(j, 1) = parse_number(std::string_view(pairs[j]).substr(comma + 1), path, i + 1);
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_word_scores(const std::filesystem::path& path, std::span<const std::vector<double>> scores) {
  auto out = open_out(path);
  for (const auto& row : scores) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? " " : "") << format_number(row[i]);
    out << '\n';
  }
}

std::vector<std::vector<double>> read_word_scores(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<double> row;
    for (const auto& w : split_words(lines[i])) row.push_back(parse_number(w, path, i + 1));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace kiwiqe
