#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "kiwiqe/autodiff.hpp"
#include "kiwiqe/dataset.hpp"
#include "kiwiqe/encoder.hpp"
#include "kiwiqe/parameters.hpp"
#include "kiwiqe/simplex.hpp"
#include "kiwiqe/tokenizer.hpp"

namespace kiwiqe {

// How layer representations are pooled before the heads.
enum class MixMode { kScalar, kHead };

std::string_view to_string(MixMode mode);
MixMode parse_mix_mode(std::string_view name);

struct ModelConfig {
  EncoderConfig encoder;
  TokenizerConfig tokenizer;
  MixMode mix = MixMode::kScalar;
  SimplexTransform transform = SimplexTransform::kSparsemax;
  // A word is BAD iff p(BAD) >= bad_threshold.
  double bad_threshold = 0.5;

  bool operator==(const ModelConfig&) const = default;
};

struct LossConfig {
  double lambda_sent = 1.0;
  double lambda_word = 1.0;
  std::array<double, 2> class_weights{1.0, 1.0};  // (OK, BAD)

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// H_mix = lambda * sum_l beta_l H_l with beta = transform(phi).
struct ScalarMixParams {
  double lambda = 1.0;
  std::vector<double> phi;
  SimplexTransform transform = SimplexTransform::kSparsemax;

  std::vector<double> beta() const;
};

// H_mix = lambda * sum_l beta_l sum_h gamma_{l,h} h_{l,h}. Layer 0 has no
// heads and contributes beta_0 * H_0.
struct HeadMixParams {
  double lambda = 1.0;
  std::vector<double> phi;                 // L + 1
  std::vector<std::vector<double>> theta;  // L x H
  SimplexTransform transform = SimplexTransform::kSparsemax;

  std::vector<double> beta() const;
  std::vector<std::vector<double>> gamma() const;
};

struct Prediction {
  double sentence_score = 0.0;
  Tensor word_logits;  // n x 2, columns (OK, BAD)
  Tensor word_probs;   // n x 2
  std::vector<Tag> word_tags;
};

// Plain-value versions of the head computations, for single traces.
Tensor scalar_mix(const EncoderTrace& trace, const ScalarMixParams& params);
Tensor head_mix_forward(const EncoderTrace& trace, const HeadMixParams& params);
double sentence_head(const Tensor& h_mix, std::size_t cls_index, const ParameterSet& params);
Tensor word_head(const Tensor& h_mix, std::span<const std::size_t> first_piece_index,
                 const ParameterSet& params);
std::vector<Tag> tags_from_probs(const Tensor& word_probs, double bad_threshold);

double sentence_loss(double gold, double predicted);
// Weighted mean negative log-likelihood of the gold classes.
double word_loss(std::span<const Tag> gold, const Tensor& word_probs,
                 const std::array<double, 2>& class_weights);
double combined_loss(double sentence, double word, const LossConfig& config);
double combined_loss(const QEExample& example, const Prediction& prediction,
                     const LossConfig& config);

// Tape-level outputs of one packed batch.
struct BatchGraph {
  PackedSequences packed;
  EncoderGraph encoder;
  ad::Var h_mix;
  ad::Var scores;       // B x 1
  ad::Var word_logits;  // (sum of words) x 2
  std::vector<std::size_t> word_offsets;  // B + 1 prefix offsets into word_logits
};

struct ForwardOptions {
  bool watch_values = false;
};

class QeModel {
 public:
  QeModel(ModelConfig config, Vocabulary vocab);
  QeModel(ModelConfig config, Vocabulary vocab, ParameterSet params);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  TokenizedInput tokenize(const QEExample& example) const;

  BatchGraph forward(const Binding& params, std::span<const TokenizedInput> inputs,
                     const ForwardOptions& options = {}) const;

  // Mean combined loss over the batch.
  ad::Var loss(const BatchGraph& graph, std::span<const QEExample> examples,
               const LossConfig& config) const;

  std::vector<Prediction> predict(std::span<const QEExample> examples,
                                  std::size_t batch_size = 32) const;

  // Per-example traces; with value_grads, the gradient of the predicted
  // sentence score w.r.t. every value matrix is attached.
  std::vector<EncoderTrace> traces(std::span<const QEExample> examples, bool value_grads,
                                   std::size_t batch_size = 32) const;

  ScalarMixParams scalar_mix_params() const;
  HeadMixParams head_mix_params() const;

 private:
  void init_head_params();

  ModelConfig config_;
  Vocabulary vocab_;
  ParameterSet params_;
};

}  // namespace kiwiqe
