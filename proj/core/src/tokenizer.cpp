#include "kiwiqe/tokenizer.hpp"

#include <algorithm>
#include <fstream>

#include "kiwiqe/errors.hpp"

namespace kiwiqe {
namespace {

constexpr std::string_view kContinuation = "##";

std::size_t utf8_char_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

void append_segment(TokenizedInput& out, const std::vector<std::string>& words,
                    const Vocabulary& vocab, const TokenizerConfig& config, bool is_target) {
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto pieces = word_pieces(words[w], config.max_piece_chars);
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      if (is_target) {
        if (p == 0) out.first_piece_index.push_back(out.token_ids.size());
        out.target_piece_word.push_back(w);
      }
      out.token_ids.push_back(vocab.id(pieces[p]));
      out.pieces.push_back(pieces[p]);
    }
  }
}

void push_special(TokenizedInput& out, std::string_view piece, const Vocabulary& vocab) {
  out.token_ids.push_back(vocab.id(piece));
  out.pieces.emplace_back(piece);
}

}  // namespace

Vocabulary::Vocabulary() {
  for (std::string_view s : {kPad, kUnk, kCls, kSep, kEos}) add(s);
}

int Vocabulary::add(std::string_view piece) {
  auto it = index_.find(std::string(piece));
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(pieces_.size());
  pieces_.emplace_back(piece);
  index_.emplace(std::string(piece), id);
  return id;
}

bool Vocabulary::contains(std::string_view piece) const {
  return index_.contains(std::string(piece));
}

int Vocabulary::id(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? unk_id() : it->second;
}

const std::string& Vocabulary::piece(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw ContractError("piece id " + std::to_string(id) + " outside vocabulary");
  }
  return pieces_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::lp_token(std::string_view lp) { return "<" + std::string(lp) + ">"; }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const std::string& p : pieces_) out << p << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) pieces.push_back(line);
  }
  return from_pieces(pieces);
}

Vocabulary Vocabulary::from_pieces(std::span<const std::string> pieces) {
  Vocabulary v;
  const std::size_t specials = v.size();
  if (pieces.size() < specials) throw ParseError("vocabulary", 1, "missing special tokens");
  for (std::size_t i = 0; i < specials; ++i) {
    if (pieces[i] != v.pieces_[i]) {
      throw ParseError("vocabulary", i + 1, "expected special token " + v.pieces_[i]);
    }
  }
  for (std::size_t i = specials; i < pieces.size(); ++i) {
    if (v.contains(pieces[i])) throw ParseError("vocabulary", i + 1, "duplicate piece " + pieces[i]);
    v.add(pieces[i]);
  }
  return v;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> word_pieces(std::string_view word, std::size_t max_chars) {
  if (max_chars == 0) throw ConfigError("max_piece_chars must be positive");
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    std::string piece = out.empty() ? std::string() : std::string(kContinuation);
    std::size_t chars = 0;
    while (i < word.size() && chars < max_chars) {
      const std::size_t len = std::min(utf8_char_len(static_cast<unsigned char>(word[i])),
                                       word.size() - i);
      piece.append(word.substr(i, len));
      i += len;
      ++chars;
    }
    out.push_back(std::move(piece));
  }
  return out;
}

std::vector<std::string> detokenize_target(const TokenizedInput& input) {
  std::vector<std::string> words;
  for (std::size_t pos = input.target_begin; pos < input.target_end; ++pos) {
    const std::size_t w = input.target_piece_word[pos - input.target_begin];
    if (w >= words.size()) words.resize(w + 1);
    std::string_view p = input.pieces[pos];
    if (p.starts_with(kContinuation)) p.remove_prefix(kContinuation.size());
    words[w].append(p);
  }
  return words;
}

TokenizedInput tokenize_pair(const QEExample& example, const Vocabulary& vocab,
                             const TokenizerConfig& config) {
  const auto target = split_words(example.target);
  const auto source = split_words(example.source);
  if (target.empty()) throw ContractError("empty target segment");
  if (source.empty()) throw ContractError("empty source segment");
  const std::string lp = Vocabulary::lp_token(example.lp);
  if (config.use_lp_prefix && !vocab.contains(lp)) {
    throw ContractError("vocabulary has no prefix token " + lp);
  }

  TokenizedInput out;
  out.cls_index = 0;
  push_special(out, Vocabulary::kCls, vocab);
  if (config.use_lp_prefix) push_special(out, lp, vocab);
  out.target_begin = out.token_ids.size();
  append_segment(out, target, vocab, config, true);
  out.target_end = out.token_ids.size();
  push_special(out, Vocabulary::kSep, vocab);
  if (config.use_lp_prefix) push_special(out, lp, vocab);
  out.source_begin = out.token_ids.size();
  append_segment(out, source, vocab, config, false);
  out.source_end = out.token_ids.size();
  push_special(out, Vocabulary::kEos, vocab);
  if (config.use_reference && example.reference) {
    const auto reference = split_words(*example.reference);
    push_special(out, Vocabulary::kSep, vocab);
    out.reference_begin = out.token_ids.size();
    append_segment(out, reference, vocab, config, false);
    out.reference_end = out.token_ids.size();
    push_special(out, Vocabulary::kEos, vocab);
  }
  return out;
}

void extend_vocabulary(Vocabulary& vocab, std::span<const QEExample> examples,
                       const TokenizerConfig& config) {
  for (const std::string& lp : language_pairs(examples)) vocab.add(Vocabulary::lp_token(lp));
  auto add_text = [&](std::string_view text) {
    for (const std::string& w : split_words(text)) {
      for (const std::string& p : word_pieces(w, config.max_piece_chars)) vocab.add(p);
    }
  };
  for (const QEExample& e : examples) {
    add_text(e.target);
    add_text(e.source);
    if (config.use_reference && e.reference) add_text(*e.reference);
  }
}

Vocabulary build_vocabulary(std::span<const QEExample> examples, const TokenizerConfig& config) {
  Vocabulary vocab;
  extend_vocabulary(vocab, examples, config);
  return vocab;
}

}  // namespace kiwiqe
