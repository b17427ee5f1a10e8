#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kiwiqe/dataset.hpp"
#include "kiwiqe/rng.hpp"
#include "kiwiqe/tokenizer.hpp"

namespace kiwiqe {

// Planted-signal QE data. Every shard is a "language pair" with its own
// source and target lexicons and a one-to-one dictionary between them.
// Target words carry a hidden weight q in (-1, 1). Errors are either noise
// words (reserved "qx" prefix, shared by all shards) or mistranslations (a
// target word borrowed from another shard's lexicon); both are tagged BAD. The sentence score is the mean over target words of 0.5*q for
// OK words and -1 for BAD words.
struct SyntheticConfig {
  std::size_t num_shards = 4;
  std::size_t lexicon_size = 48;
  std::size_t noise_words = 24;
  std::size_t min_words = 4;
  std::size_t max_words = 9;
  double max_error_rate = 0.35;
  double noise_fraction = 0.6;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticShard {
  std::string lp;
  std::vector<std::string> source_words;
  std::vector<std::string> target_words;  // target_words[i] translates source_words[i]
  std::vector<double> weights;            // q per target word
};

class SyntheticTask {
 public:
  explicit SyntheticTask(SyntheticConfig config);

  const SyntheticConfig& config() const { return config_; }
  const std::vector<SyntheticShard>& shards() const { return shards_; }
  const std::vector<std::string>& noise_words() const { return noise_; }

  // Deterministic in (config.seed, shard, stream).
  std::vector<QEExample> generate(std::size_t shard, std::size_t count, std::uint64_t stream) const;
  // Round-robin over the listed shards.
  std::vector<QEExample> generate_mixed(std::span<const std::size_t> shards, std::size_t count,
                                        std::uint64_t stream) const;

  // Every piece any shard can produce, plus all lp prefix tokens.
  Vocabulary vocabulary(const TokenizerConfig& tokenizer) const;

 private:
  const std::string& foreign_word(std::size_t shard, Rng& rng) const;

  SyntheticConfig config_;
  std::vector<SyntheticShard> shards_;
  std::vector<std::string> noise_;
};

}  // namespace kiwiqe
