#include "kiwiqe/encoder.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/rng.hpp"

namespace kiwiqe {
namespace {

std::string layer_key(int layer, const char* name) {
  return "layers." + std::to_string(layer) + "." + name;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out = Tensor::matrix(count, t.cols());
  std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(begin * t.cols()),
              count * t.cols(), out.values().begin());
  return out;
}

}  // namespace

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("encoder needs at least one layer");
  if (num_heads < 1) throw ConfigError("encoder needs at least one head");
  if (model_dim < 1 || model_dim % num_heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) +
                      " must be a positive multiple of num_heads " + std::to_string(num_heads));
  }
  if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
  if (vocab_size < 1) throw ConfigError("vocab_size must be positive");
  if (max_positions < 1) throw ConfigError("max_positions must be positive");
}

PackedSequences PackedSequences::pack(std::span<const std::vector<int>> sequences) {
  PackedSequences out;
  for (const auto& seq : sequences) {
    out.segments.push_back({out.token_ids.size(), seq.size()});
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] < 0) throw ContractError("negative token id");
      out.token_ids.push_back(static_cast<std::size_t>(seq[i]));
      out.positions.push_back(i);
    }
  }
  return out;
}

void init_encoder_params(const EncoderConfig& config, ParameterSet& params) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto f = static_cast<std::size_t>(config.ffn_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(mix_seed(config.seed, 0xE4C0DE));

  params.set("embed.tokens", uniform_tensor({static_cast<std::size_t>(config.vocab_size), d}, bound, rng));
  params.set("embed.positions",
             uniform_tensor({static_cast<std::size_t>(config.max_positions), d}, bound, rng));
  for (int l = 0; l < config.num_layers; ++l) {
    params.set(layer_key(l, "ln1.gain"), Tensor::vector(std::vector<double>(d, 1.0)));
    params.set(layer_key(l, "ln1.bias"), Tensor({d}));
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      params.set(layer_key(l, w), uniform_tensor({d, d}, bound, rng));
    }
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
      params.set(layer_key(l, b), Tensor({d}));
    }
    params.set(layer_key(l, "ln2.gain"), Tensor::vector(std::vector<double>(d, 1.0)));
    params.set(layer_key(l, "ln2.bias"), Tensor({d}));
    params.set(layer_key(l, "ffn.w1"), uniform_tensor({d, f}, bound, rng));
    params.set(layer_key(l, "ffn.b1"), Tensor({f}));
    params.set(layer_key(l, "ffn.w2"),
               uniform_tensor({f, d}, 1.0 / std::sqrt(static_cast<double>(f)), rng));
    params.set(layer_key(l, "ffn.b2"), Tensor({d}));
  }
}

EncoderGraph encode_graph(const EncoderConfig& config, const Binding& params,
                          const PackedSequences& batch, const EncodeOptions& options) {
  config.validate();
  for (std::size_t id : batch.token_ids) {
    if (id >= static_cast<std::size_t>(config.vocab_size)) {
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(config.vocab_size));
    }
  }
  for (const auto& s : batch.segments) {
    if (s.length > static_cast<std::size_t>(config.max_positions)) {
      throw ContractError("sequence of length " + std::to_string(s.length) +
                          " exceeds max_positions " + std::to_string(config.max_positions));
    }
  }

  const auto heads = static_cast<std::size_t>(config.num_heads);
  const auto dh = static_cast<std::size_t>(config.head_dim());
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  EncoderGraph g;
  ad::Var x = ad::add(ad::gather_rows(params["embed.tokens"], batch.token_ids),
                      ad::gather_rows(params["embed.positions"], batch.positions));
  g.hidden_states.push_back(x);

  std::vector<std::vector<std::size_t>> wo_rows(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    wo_rows[h].resize(dh);
    std::iota(wo_rows[h].begin(), wo_rows[h].end(), h * dh);
  }

  for (int l = 0; l < config.num_layers; ++l) {
    auto p = [&](const char* name) { return params[layer_key(l, name)]; };
    ad::Var xn = ad::layer_norm_rows(x, p("ln1.gain"), p("ln1.bias"));
    ad::Var q = ad::add_row(ad::matmul(xn, p("attn.wq")), p("attn.bq"));
    ad::Var k = ad::add_row(ad::matmul(xn, p("attn.wk")), p("attn.bk"));
    ad::Var v = ad::add_row(ad::matmul(xn, p("attn.wv")), p("attn.bv"));
    ad::Var wo = p("attn.wo");

    std::vector<ad::Var> layer_values;
    std::vector<ad::Var> layer_heads;
    std::vector<std::vector<Tensor>> layer_attn(heads);
    ad::Var attn_sum;
    for (std::size_t h = 0; h < heads; ++h) {
      ad::Var qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
      ad::Var kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
      ad::Var vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
      if (options.watch_values) vh = ad::watch(vh);
      ad::Var oh = ad::segment_attention(qh, kh, vh, batch.segments, att_scale, &layer_attn[h]);
      ad::Var head_out = ad::matmul(oh, ad::gather_rows(wo, wo_rows[h]));
      layer_values.push_back(vh);
      layer_heads.push_back(head_out);
      attn_sum = h == 0 ? head_out : ad::add(attn_sum, head_out);
    }
    ad::Var mid = ad::add(x, ad::add_row(attn_sum, p("attn.bo")));
    ad::Var mn = ad::layer_norm_rows(mid, p("ln2.gain"), p("ln2.bias"));
    ad::Var ff = ad::gelu(ad::add_row(ad::matmul(mn, p("ffn.w1")), p("ffn.b1")));
    ff = ad::add_row(ad::matmul(ff, p("ffn.w2")), p("ffn.b2"));
    x = ad::add(mid, ff);

    g.hidden_states.push_back(x);
    g.values.push_back(std::move(layer_values));
    g.head_outputs.push_back(std::move(layer_heads));
    g.attentions.push_back(std::move(layer_attn));
  }
  return g;
}

std::vector<EncoderTrace> extract_traces(const EncoderGraph& graph, const PackedSequences& batch,
                                         bool with_value_grads) {
  std::vector<EncoderTrace> traces(batch.segments.size());
  const std::size_t layers = graph.values.size();
  for (std::size_t s = 0; s < batch.segments.size(); ++s) {
    const auto seg = batch.segments[s];
    EncoderTrace& tr = traces[s];
    for (const ad::Var& hs : graph.hidden_states) {
      tr.hidden_states.push_back(slice_rows(hs.value(), seg.begin, seg.length));
    }
    tr.attentions.resize(layers);
    tr.values.resize(layers);
    tr.head_outputs.resize(layers);
    if (with_value_grads) tr.value_grads.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t heads = graph.values[l].size();
      for (std::size_t h = 0; h < heads; ++h) {
        tr.attentions[l].push_back(graph.attentions[l][h][s]);
        tr.values[l].push_back(slice_rows(graph.values[l][h].value(), seg.begin, seg.length));
        tr.head_outputs[l].push_back(
            slice_rows(graph.head_outputs[l][h].value(), seg.begin, seg.length));
        if (with_value_grads) {
          const ad::Var vh = graph.values[l][h];
          tr.value_grads[l].push_back(slice_rows(vh.tape().grad(vh), seg.begin, seg.length));
        }
      }
    }
  }
  return traces;
}

EncoderTrace encode(std::span<const int> token_ids, const EncoderConfig& config,
                    const ParameterSet& params) {
  std::vector<std::vector<int>> one{std::vector<int>(token_ids.begin(), token_ids.end())};
  const PackedSequences batch = PackedSequences::pack(one);
  ad::Tape tape;
  const Binding bound(tape, params, false);
  const EncoderGraph graph = encode_graph(config, bound, batch);
  return std::move(extract_traces(graph, batch, false).front());
}

AttentionResult attention_head(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows() || q.cols() == 0) {
    throw DimensionError("attention_head: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  ad::Tape tape;
  const ad::Var qv = tape.constant(q);
  const ad::Var kv = tape.constant(k);
  const ad::Var vv = tape.constant(v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const ad::Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(qv, kv), scale));
  const ad::Var out = ad::matmul(w, vv);
  return {out.value(), w.value()};
}

}  // namespace kiwiqe
