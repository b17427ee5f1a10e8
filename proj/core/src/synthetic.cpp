#include "kiwiqe/synthetic.hpp"

#include <set>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/rng.hpp"

namespace kiwiqe {
namespace {

char random_letter(Rng& rng) { return static_cast<char>('a' + rng.below(26)); }

std::vector<std::string> make_words(Rng& rng, const std::string& prefix, std::size_t count,
                                    std::set<std::string>& taken) {
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w = prefix;
    w += random_letter(rng);
    w += random_letter(rng);
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (num_shards == 0 || num_shards > 26) throw ConfigError("num_shards must be in [1, 26]");
  if (lexicon_size < 2 || lexicon_size > 676) throw ConfigError("lexicon_size must be in [2, 676]");
  if (noise_words == 0 || noise_words > 676) throw ConfigError("noise_words must be in [1, 676]");
  if (min_words == 0 || min_words > max_words) throw ConfigError("need 1 <= min_words <= max_words");
  if (max_error_rate < 0.0 || max_error_rate > 1.0) throw ConfigError("max_error_rate must be in [0, 1]");
  if (noise_fraction < 0.0 || noise_fraction > 1.0) throw ConfigError("noise_fraction must be in [0, 1]");
}

SyntheticTask::SyntheticTask(SyntheticConfig config) : config_(config) {
  config_.validate();
  Rng rng(mix_seed(config_.seed, 0x1E71C0));
  std::set<std::string> taken;
  noise_ = make_words(rng, "qx", config_.noise_words, taken);
  for (std::size_t s = 0; s < config_.num_shards; ++s) {
    const char letter = static_cast<char>('a' + s);
    SyntheticShard shard;
    shard.lp = std::string{'s', letter, '-', 't', letter};
    shard.source_words = make_words(rng, std::string{'s', letter}, config_.lexicon_size, taken);
    shard.target_words = make_words(rng, std::string{'t', letter}, config_.lexicon_size, taken);
    for (std::size_t i = 0; i < config_.lexicon_size; ++i) shard.weights.push_back(rng.uniform(-1.0, 1.0));
    shards_.push_back(std::move(shard));
  }
}

const std::string& SyntheticTask::foreign_word(std::size_t shard, Rng& rng) const {
  if (shards_.size() == 1) return noise_[rng.below(noise_.size())];
  const std::size_t other = (shard + 1 + rng.below(shards_.size() - 1)) % shards_.size();
  const auto& words = shards_[other].target_words;
  return words[rng.below(words.size())];
}

std::vector<QEExample> SyntheticTask::generate(std::size_t shard, std::size_t count,
                                               std::uint64_t stream) const {
  if (shard >= shards_.size()) throw ContractError("no synthetic shard " + std::to_string(shard));
  const SyntheticShard& sh = shards_[shard];
  Rng rng(mix_seed(mix_seed(config_.seed, shard + 1), stream));
  const std::size_t lex = sh.target_words.size();
  std::vector<QEExample> out;
  out.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    const std::size_t n = config_.min_words + rng.below(config_.max_words - config_.min_words + 1);
    const double error_rate = rng.uniform(0.0, config_.max_error_rate);
    QEExample ex;
    ex.lp = sh.lp;
    ex.tags.emplace();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t w = rng.below(lex);
      if (i > 0) {
        ex.source += ' ';
        ex.target += ' ';
      }
      ex.source += sh.source_words[w];
      if (rng.uniform() < error_rate) {
        if (rng.uniform() < config_.noise_fraction) {
          ex.target += noise_[rng.below(noise_.size())];
        } else {
          ex.target += foreign_word(shard, rng);
        }
        ex.tags->push_back(Tag::kBad);
        total -= 1.0;
      } else {
        ex.target += sh.target_words[w];
        ex.tags->push_back(Tag::kOk);
        total += 0.5 * sh.weights[w];
      }
    }
    ex.score = total / static_cast<double>(n);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<QEExample> SyntheticTask::generate_mixed(std::span<const std::size_t> shards,
                                                     std::size_t count, std::uint64_t stream) const {
  if (shards.empty()) throw ContractError("generate_mixed: no shards");
  std::vector<std::vector<QEExample>> parts;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    const std::size_t share = count / shards.size() + (i < count % shards.size() ? 1 : 0);
    parts.push_back(generate(shards[i], share, stream));
  }
  std::vector<QEExample> out;
  out.reserve(count);
  for (std::size_t k = 0; out.size() < count; ++k) {
    for (auto& p : parts) {
      if (k < p.size()) out.push_back(std::move(p[k]));
    }
  }
  return out;
}

Vocabulary SyntheticTask::vocabulary(const TokenizerConfig& tokenizer) const {
  Vocabulary vocab;
  for (const auto& sh : shards_) vocab.add(Vocabulary::lp_token(sh.lp));
  auto add_word = [&](const std::string& w) {
    for (const std::string& p : word_pieces(w, tokenizer.max_piece_chars)) vocab.add(p);
  };
  for (const auto& w : noise_) add_word(w);
  for (const auto& sh : shards_) {
    for (const auto& w : sh.source_words) add_word(w);
    for (const auto& w : sh.target_words) add_word(w);
  }
  return vocab;
}

}  // namespace kiwiqe
