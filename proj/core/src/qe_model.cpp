#include "kiwiqe/qe_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/parallel.hpp"
#include "kiwiqe/rng.hpp"

namespace kiwiqe {
namespace {

ad::Var to_simplex(ad::Var logits, SimplexTransform t) {
  return t == SimplexTransform::kSoftmax ? ad::softmax_rows(logits) : ad::sparsemax_rows(logits);
}

std::vector<double> row_to_simplex(std::span<const double> logits, SimplexTransform t) {
  std::vector<double> out(logits.size());
  apply_transform(t, logits, out);
  return out;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

void add_scaled(Tensor& acc, const Tensor& x, double w) {
  if (acc.shape() != x.shape()) throw DimensionError("mix: layer shapes differ");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * x[i];
}

}  // namespace

std::string_view to_string(MixMode mode) { return mode == MixMode::kHead ? "head" : "scalar"; }

MixMode parse_mix_mode(std::string_view name) {
  if (name == "scalar") return MixMode::kScalar;
  if (name == "head") return MixMode::kHead;
  throw ConfigError("unknown mix mode '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (lambda_sent < 0.0 || lambda_word < 0.0) throw ConfigError("loss weights must be nonnegative");
  if (lambda_sent + lambda_word <= 0.0) throw ConfigError("lambda_sent + lambda_word must be positive");
  if (class_weights[0] <= 0.0 || class_weights[1] <= 0.0) {
    throw ConfigError("class weights must be positive");
  }
}

std::vector<double> ScalarMixParams::beta() const { return row_to_simplex(phi, transform); }

std::vector<double> HeadMixParams::beta() const { return row_to_simplex(phi, transform); }

std::vector<std::vector<double>> HeadMixParams::gamma() const {
  std::vector<std::vector<double>> out;
  for (const auto& row : theta) out.push_back(row_to_simplex(row, transform));
  return out;
}

Tensor scalar_mix(const EncoderTrace& trace, const ScalarMixParams& params) {
  if (params.phi.size() != trace.hidden_states.size()) {
    throw DimensionError("scalar_mix: " + std::to_string(params.phi.size()) + " layer weights for " +
                         std::to_string(trace.hidden_states.size()) + " hidden states");
  }
  const auto beta = params.beta();
  Tensor out = Tensor::zeros_like(trace.hidden_states.front());
  for (std::size_t l = 0; l < beta.size(); ++l) add_scaled(out, trace.hidden_states[l], beta[l]);
  for (double& v : out.values()) v *= params.lambda;
  return out;
}

Tensor head_mix_forward(const EncoderTrace& trace, const HeadMixParams& params) {
  const std::size_t layers = trace.num_layers();
  if (params.phi.size() != layers + 1 || params.theta.size() != layers) {
    throw DimensionError("head_mix: parameters do not match a " + std::to_string(layers) +
                         "-layer trace");
  }
  const auto beta = params.beta();
  const auto gamma = params.gamma();
  Tensor out = Tensor::zeros_like(trace.hidden_states.front());
  add_scaled(out, trace.hidden_states[0], beta[0]);
  for (std::size_t l = 1; l <= layers; ++l) {
    if (gamma[l - 1].size() != trace.head_outputs[l - 1].size()) {
      throw DimensionError("head_mix: head count mismatch in layer " + std::to_string(l));
    }
    for (std::size_t h = 0; h < gamma[l - 1].size(); ++h) {
      add_scaled(out, trace.head_outputs[l - 1][h], beta[l] * gamma[l - 1][h]);
    }
  }
  for (double& v : out.values()) v *= params.lambda;
  return out;
}

double sentence_head(const Tensor& h_mix, std::size_t cls_index, const ParameterSet& params) {
  if (cls_index >= h_mix.rows()) throw DimensionError("sentence_head: cls row missing");
  Tensor cls = Tensor::matrix(1, h_mix.cols());
  std::copy_n(h_mix.row(cls_index).begin(), h_mix.cols(), cls.values().begin());
  Tensor hidden = matmul_plain(cls, params.at("sentence.w1"));
  const Tensor& b1 = params.at("sentence.b1");
  for (std::size_t j = 0; j < hidden.size(); ++j) hidden[j] = std::tanh(hidden[j] + b1[j]);
  const Tensor out = matmul_plain(hidden, params.at("sentence.w2"));
  return out[0] + params.at("sentence.b2")[0];
}

Tensor word_head(const Tensor& h_mix, std::span<const std::size_t> first_piece_index,
                 const ParameterSet& params) {
  const Tensor& w = params.at("word.w");
  const Tensor& b = params.at("word.b");
  Tensor logits = Tensor::matrix(first_piece_index.size(), 2);
  for (std::size_t i = 0; i < first_piece_index.size(); ++i) {
    const std::size_t r = first_piece_index[i];
    if (r >= h_mix.rows()) {
      throw DimensionError("word_head: first-piece index " + std::to_string(r) + " out of range");
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < h_mix.cols(); ++k) acc += h_mix(r, k) * w(k, c);
      logits(i, c) = acc;
    }
  }
  return logits;
}

std::vector<Tag> tags_from_probs(const Tensor& word_probs, double bad_threshold) {
  std::vector<Tag> tags;
  if (word_probs.size() == 0) return tags;
  for (std::size_t i = 0; i < word_probs.rows(); ++i) {
    tags.push_back(word_probs(i, 1) >= bad_threshold ? Tag::kBad : Tag::kOk);
  }
  return tags;
}

double sentence_loss(double gold, double predicted) {
  const double d = gold - predicted;
  return 0.5 * d * d;
}

double word_loss(std::span<const Tag> gold, const Tensor& word_probs,
                 const std::array<double, 2>& class_weights) {
  const std::size_t n = gold.size();
  const std::size_t rows = word_probs.size() == 0 ? 0 : word_probs.rows();
  if (rows != n) {
    throw DimensionError("word_loss: " + std::to_string(n) + " gold tags for " +
                         std::to_string(rows) + " predictions");
  }
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(gold[i]);
    acc -= class_weights[c] * std::log(word_probs(i, c));
  }
  return acc / static_cast<double>(n);
}

double combined_loss(double sentence, double word, const LossConfig& config) {
  if (config.lambda_word == 0.0) return config.lambda_sent * sentence;
  if (config.lambda_sent == 0.0) return config.lambda_word * word;
  return config.lambda_sent * sentence + config.lambda_word * word;
}

double combined_loss(const QEExample& example, const Prediction& prediction,
                     const LossConfig& config) {
  if (config.lambda_word > 0.0 && !example.tags) {
    throw ContractError("combined_loss: word tags required when lambda_word > 0");
  }
  const double ls = sentence_loss(example.score, prediction.sentence_score);
  const double lw = example.tags ? word_loss(*example.tags, prediction.word_probs,
                                             config.class_weights)
                                 : 0.0;
  return combined_loss(ls, lw, config);
}

QeModel::QeModel(ModelConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.encoder.vocab_size = static_cast<int>(vocab_.size());
  init_encoder_params(config_.encoder, params_);
  init_head_params();
}

QeModel::QeModel(ModelConfig config, Vocabulary vocab, ParameterSet params)
    : config_(std::move(config)), vocab_(std::move(vocab)), params_(std::move(params)) {
  config_.encoder.validate();
  if (static_cast<std::size_t>(config_.encoder.vocab_size) != vocab_.size()) {
    throw ConfigError("checkpoint vocabulary size does not match encoder config");
  }
  const QeModel reference(config_, vocab_);
  if (reference.params_.num_tensors() != params_.num_tensors()) {
    throw ConfigError("parameter set does not match the model configuration");
  }
  for (const auto& [name, t] : reference.params_) {
    if (!params_.contains(name)) throw ConfigError("missing parameter " + name);
    if (params_.at(name).shape() != t.shape()) {
      throw DimensionError("parameter " + name + " has shape " + shape_string(params_.at(name).shape()) +
                           ", expected " + shape_string(t.shape()));
    }
  }
}

void QeModel::init_head_params() {
  const auto d = static_cast<std::size_t>(config_.encoder.model_dim);
  const auto layers = static_cast<std::size_t>(config_.encoder.num_layers);
  const auto heads = static_cast<std::size_t>(config_.encoder.num_heads);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(mix_seed(config_.encoder.seed, 0x4EAD));
  auto uniform = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
  };
  params_.set("mix.lambda", Tensor::scalar(1.0));
  params_.set("mix.phi", Tensor({layers + 1}));
  if (config_.mix == MixMode::kHead) params_.set("mix.theta", Tensor({layers, heads}));
  params_.set("sentence.w1", uniform({d, d}));
  params_.set("sentence.b1", Tensor({d}));
  params_.set("sentence.w2", uniform({d, 1}));
  params_.set("sentence.b2", Tensor({1}));
  params_.set("word.w", uniform({d, 2}));
  params_.set("word.b", Tensor({2}));
}

TokenizedInput QeModel::tokenize(const QEExample& example) const {
  return tokenize_pair(example, vocab_, config_.tokenizer);
}

BatchGraph QeModel::forward(const Binding& params, std::span<const TokenizedInput> inputs,
                            const ForwardOptions& options) const {
  BatchGraph g;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(inputs.size());
  for (const auto& in : inputs) seqs.push_back(in.token_ids);
  g.packed = PackedSequences::pack(seqs);
  EncodeOptions enc_opts;
  enc_opts.watch_values = options.watch_values;
  g.encoder = encode_graph(config_.encoder, params, g.packed, enc_opts);

  const ad::Var beta = to_simplex(params["mix.phi"], config_.transform);
  ad::Var mixed;
  if (config_.mix == MixMode::kScalar) {
    mixed = ad::weighted_sum(g.encoder.hidden_states, beta);
  } else {
    const ad::Var gamma = to_simplex(params["mix.theta"], config_.transform);
    const auto heads = static_cast<std::size_t>(config_.encoder.num_heads);
    std::vector<ad::Var> terms{g.encoder.hidden_states[0]};
    for (std::size_t l = 0; l < g.encoder.head_outputs.size(); ++l) {
      const std::size_t row[] = {l};
      const ad::Var gl = ad::reshape(ad::gather_rows(gamma, row), {heads});
      terms.push_back(ad::weighted_sum(g.encoder.head_outputs[l], gl));
    }
    mixed = ad::weighted_sum(terms, beta);
  }
  g.h_mix = ad::scale_by(mixed, params["mix.lambda"]);

  std::vector<std::size_t> cls_rows;
  std::vector<std::size_t> word_rows;
  g.word_offsets.push_back(0);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const std::size_t base = g.packed.segments[b].begin;
    cls_rows.push_back(base + inputs[b].cls_index);
    for (std::size_t fp : inputs[b].first_piece_index) word_rows.push_back(base + fp);
    g.word_offsets.push_back(word_rows.size());
  }
  const ad::Var cls = ad::gather_rows(g.h_mix, cls_rows);
  const ad::Var hidden =
      ad::tanh(ad::add_row(ad::matmul(cls, params["sentence.w1"]), params["sentence.b1"]));
  g.scores = ad::add_row(ad::matmul(hidden, params["sentence.w2"]), params["sentence.b2"]);
  const ad::Var words = ad::gather_rows(g.h_mix, word_rows);
  g.word_logits = ad::add_row(ad::matmul(words, params["word.w"]), params["word.b"]);
  return g;
}

ad::Var QeModel::loss(const BatchGraph& graph, std::span<const QEExample> examples,
                      const LossConfig& config) const {
  config.validate();
  ad::Tape& tape = graph.scores.tape();
  const std::size_t batch = examples.size();
  if (batch == 0 || batch + 1 != graph.word_offsets.size()) {
    throw ContractError("loss: batch does not match forward graph");
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  ad::Var total;
  if (config.lambda_sent > 0.0) {
    std::vector<double> gold(batch);
    for (std::size_t b = 0; b < batch; ++b) gold[b] = examples[b].score;
    const ad::Var diff =
        ad::sub(ad::reshape(graph.scores, {batch}), tape.constant(Tensor::vector(gold)));
    total = ad::scale(ad::sum(ad::square(diff)), 0.5 * inv_b * config.lambda_sent);
  }
  if (config.lambda_word > 0.0) {
    std::vector<int> targets;
    std::vector<double> row_scale;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t n = graph.word_offsets[b + 1] - graph.word_offsets[b];
      if (!examples[b].tags) {
        throw ContractError("loss: word tags required when lambda_word > 0");
      }
      if (examples[b].tags->size() != n) {
        throw DimensionError("loss: tag count differs from target words");
      }
      for (Tag t : *examples[b].tags) {
        targets.push_back(static_cast<int>(t));
        row_scale.push_back(inv_b / static_cast<double>(n));
      }
    }
    const ad::Var logp = ad::log_softmax_rows(graph.word_logits);
    const ad::Var lw = ad::scale(ad::weighted_nll(logp, targets, config.class_weights, row_scale),
                                 config.lambda_word);
    total = total.valid() ? ad::add(total, lw) : lw;
  }
  return total;
}

std::vector<Prediction> QeModel::predict(std::span<const QEExample> examples,
                                         std::size_t batch_size) const {
  if (batch_size == 0) batch_size = 1;
  std::vector<Prediction> out(examples.size());
  const std::size_t num_batches = (examples.size() + batch_size - 1) / batch_size;
  parallel_for(num_batches, [&](std::size_t bi) {
    const std::size_t begin = bi * batch_size;
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    std::vector<TokenizedInput> inputs;
    for (std::size_t i = begin; i < end; ++i) inputs.push_back(tokenize(examples[i]));
    ad::Tape tape;
    const Binding bound(tape, params_, false);
    const BatchGraph g = forward(bound, inputs);
    const Tensor& scores = g.scores.value();
    const Tensor& logits = g.word_logits.value();
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      Prediction& p = out[begin + b];
      p.sentence_score = scores[b];
      const std::size_t w0 = g.word_offsets[b];
      const std::size_t n = g.word_offsets[b + 1] - w0;
      p.word_logits = Tensor::matrix(n, 2);
      p.word_probs = Tensor::matrix(n, 2);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 2; ++c) p.word_logits(i, c) = logits(w0 + i, c);
        softmax(p.word_logits.row(i), p.word_probs.row(i));
      }
      p.word_tags = tags_from_probs(p.word_probs, config_.bad_threshold);
    }
  });
  return out;
}

std::vector<EncoderTrace> QeModel::traces(std::span<const QEExample> examples, bool value_grads,
                                          std::size_t batch_size) const {
  if (batch_size == 0) batch_size = 1;
  std::vector<EncoderTrace> out(examples.size());
  const std::size_t num_batches = (examples.size() + batch_size - 1) / batch_size;
  parallel_for(num_batches, [&](std::size_t bi) {
    const std::size_t begin = bi * batch_size;
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    std::vector<TokenizedInput> inputs;
    for (std::size_t i = begin; i < end; ++i) inputs.push_back(tokenize(examples[i]));
    ad::Tape tape;
    const Binding bound(tape, params_, false);
    ForwardOptions opts;
    opts.watch_values = value_grads;
    const BatchGraph g = forward(bound, inputs, opts);
    // Each score depends only on its own segment, so one backward pass of
    // the summed scores yields every per-sentence value gradient.
    if (value_grads) tape.backward(ad::sum(g.scores));
    auto batch_traces = extract_traces(g.encoder, g.packed, value_grads);
    for (std::size_t b = 0; b < batch_traces.size(); ++b) out[begin + b] = std::move(batch_traces[b]);
  });
  return out;
}

ScalarMixParams QeModel::scalar_mix_params() const {
  ScalarMixParams p;
  p.lambda = params_.at("mix.lambda").item();
  p.phi = params_.at("mix.phi").values();
  p.transform = config_.transform;
  return p;
}

HeadMixParams QeModel::head_mix_params() const {
  if (config_.mix != MixMode::kHead) throw ContractError("model does not use head mix");
  HeadMixParams p;
  p.lambda = params_.at("mix.lambda").item();
  p.phi = params_.at("mix.phi").values();
  const Tensor& theta = params_.at("mix.theta");
  for (std::size_t l = 0; l < theta.rows(); ++l) {
    p.theta.emplace_back(theta.row(l).begin(), theta.row(l).end());
  }
  p.transform = config_.transform;
  return p;
}

}  // namespace kiwiqe
