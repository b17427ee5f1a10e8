#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kiwiqe/dataset.hpp"

namespace kiwiqe {

class Vocabulary {
 public:
  static constexpr std::string_view kPad = "[pad]";
  static constexpr std::string_view kUnk = "[unk]";
  static constexpr std::string_view kCls = "[cls]";
  static constexpr std::string_view kSep = "[sep]";
  static constexpr std::string_view kEos = "[eos]";

  // Starts with the five special tokens at ids 0..4.
  Vocabulary();

  int add(std::string_view piece);
  bool contains(std::string_view piece) const;
  // Unknown pieces map to [unk].
  int id(std::string_view piece) const;
  const std::string& piece(int id) const;
  std::size_t size() const { return pieces_.size(); }
  const std::vector<std::string>& pieces() const { return pieces_; }

  int unk_id() const { return 1; }
  int cls_id() const { return 2; }
  int sep_id() const { return 3; }
  int eos_id() const { return 4; }

  static std::string lp_token(std::string_view lp);

  // One piece per line; the special tokens must come first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_pieces(std::span<const std::string> pieces);

  bool operator==(const Vocabulary& other) const { return pieces_ == other.pieces_; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

struct TokenizerConfig {
  std::size_t max_piece_chars = 4;
  bool use_lp_prefix = false;
  bool use_reference = false;

  bool operator==(const TokenizerConfig&) const = default;
};

// Layout [cls] (<lp>) target [sep] (<lp>) source [eos] ([sep] reference [eos]).
struct TokenizedInput {
  std::vector<int> token_ids;
  std::vector<std::string> pieces;
  // Position of the first piece of every target word.
  std::vector<std::size_t> first_piece_index;
  // Target word index of every token in [target_begin, target_end).
  std::vector<std::size_t> target_piece_word;
  std::size_t cls_index = 0;
  std::size_t target_begin = 0;
  std::size_t target_end = 0;
  std::size_t source_begin = 0;
  std::size_t source_end = 0;
  std::size_t reference_begin = 0;
  std::size_t reference_end = 0;

  std::size_t num_target_words() const { return first_piece_index.size(); }
};

std::vector<std::string> split_words(std::string_view text);

// Splits a word into pieces of at most max_chars code points; continuation
// pieces carry a "##" prefix.
std::vector<std::string> word_pieces(std::string_view word, std::size_t max_chars);

// Rebuilds the target words from the target span of a tokenized input.
std::vector<std::string> detokenize_target(const TokenizedInput& input);

TokenizedInput tokenize_pair(const QEExample& example, const Vocabulary& vocab,
                             const TokenizerConfig& config);

// Specials, every lp prefix token, then pieces in first-seen order.
Vocabulary build_vocabulary(std::span<const QEExample> examples, const TokenizerConfig& config);
void extend_vocabulary(Vocabulary& vocab, std::span<const QEExample> examples,
                       const TokenizerConfig& config);

}  // namespace kiwiqe
