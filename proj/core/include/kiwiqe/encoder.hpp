#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kiwiqe/autodiff.hpp"
#include "kiwiqe/parameters.hpp"
#include "kiwiqe/tensor.hpp"

namespace kiwiqe {

// Pre-norm transformer encoder. Defaults are desk scale.
struct EncoderConfig {
  int num_layers = 4;
  int num_heads = 4;
  int model_dim = 64;
  int ffn_dim = 128;
  int vocab_size = 0;
  int max_positions = 128;
  std::uint64_t seed = 1;

  int head_dim() const { return model_dim / num_heads; }
  // Throws ConfigError on an inconsistent configuration.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

// Everything one forward pass exposes for a single sequence of n tokens.
struct EncoderTrace {
  std::vector<Tensor> hidden_states;                // L+1 entries, n x d; [0] is the embedding layer
  std::vector<std::vector<Tensor>> attentions;      // [L][H], n x n, rows on the simplex
  std::vector<std::vector<Tensor>> values;          // [L][H], n x d/H
  std::vector<std::vector<Tensor>> head_outputs;    // [L][H], n x d (head output times its W^O slice)
  std::vector<std::vector<Tensor>> value_grads;     // [L][H], n x d/H, only when requested

  std::size_t num_layers() const { return attentions.size(); }
  std::size_t num_heads() const { return attentions.empty() ? 0 : attentions[0].size(); }
  std::size_t length() const { return hidden_states.empty() ? 0 : hidden_states[0].rows(); }
  bool has_value_grads() const { return !value_grads.empty(); }
};

// Several sequences concatenated row-wise. Attention never crosses segments,
// which is equivalent to padding every sequence to the batch maximum and
// masking the padded keys.
struct PackedSequences {
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> positions;
  std::vector<ad::Segment> segments;

  static PackedSequences pack(std::span<const std::vector<int>> sequences);
  std::size_t total_rows() const { return token_ids.size(); }
};

// Tape-level view of a packed forward pass.
struct EncoderGraph {
  std::vector<ad::Var> hidden_states;                       // L+1, T x d
  std::vector<std::vector<ad::Var>> values;                 // [L][H], T x d/H
  std::vector<std::vector<ad::Var>> head_outputs;           // [L][H], T x d
  std::vector<std::vector<std::vector<Tensor>>> attentions; // [L][H][segment]
};

struct EncodeOptions {
  // Track value vectors so d(output)/dV is available after backward().
  bool watch_values = false;
};

// Uniform(-1/sqrt(d), 1/sqrt(d)) weights, unit layer-norm gains, zero
// biases; reproducible from config.seed.
void init_encoder_params(const EncoderConfig& config, ParameterSet& params);

EncoderGraph encode_graph(const EncoderConfig& config, const Binding& params,
                          const PackedSequences& batch, const EncodeOptions& options = {});

// Slices per-sequence traces out of a packed graph. Value gradients are
// copied when the tape has them.
std::vector<EncoderTrace> extract_traces(const EncoderGraph& graph, const PackedSequences& batch,
                                         bool with_value_grads);

EncoderTrace encode(std::span<const int> token_ids, const EncoderConfig& config,
                    const ParameterSet& params);

struct AttentionResult {
  Tensor output;   // n x d'
  Tensor weights;  // n x m
};

// softmax(q k^T / sqrt(d')) v for one head.
AttentionResult attention_head(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace kiwiqe
