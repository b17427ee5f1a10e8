#include "kiwiqe/explain.hpp"

#include <algorithm>
#include <cmath>

#include "kiwiqe/errors.hpp"

namespace kiwiqe {
namespace {

std::vector<double> row_norms(const Tensor& m) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v * v;
    out[r] = std::sqrt(s);
  }
  return out;
}

void check_head(const EncoderTrace& trace, const TokenizedInput& input, HeadId head) {
  if (head.layer < 0 || static_cast<std::size_t>(head.layer) >= trace.num_layers() || head.head < 0 ||
      static_cast<std::size_t>(head.head) >= trace.num_heads()) {
    throw ContractError("head " + to_string(head) + " outside the trace");
  }
  if (trace.length() != input.token_ids.size()) {
    throw DimensionError("trace length " + std::to_string(trace.length()) + " does not match " +
                         std::to_string(input.token_ids.size()) + " tokens");
  }
}

Explanation explain_with_norms(const EncoderTrace& trace, const TokenizedInput& input, HeadId head,
                               const std::vector<double>& norms, bool cls_row_only,
                               std::string_view method) {
  const Tensor& a = trace.attentions[head.layer][head.head];
  const std::size_t cls = input.cls_index;
  const auto rel = attention_relevance(a, norms, cls_row_only ? &cls : nullptr);
  Explanation e;
  e.token_scores.assign(rel.begin() + static_cast<std::ptrdiff_t>(input.target_begin),
                        rel.begin() + static_cast<std::ptrdiff_t>(input.target_end));
  e.piece_word = input.target_piece_word;
  e.word_scores = aggregate_subwords(e.token_scores, e.piece_word, input.num_target_words());
  e.provenance = std::string(method) + ":" + to_string(head);
  return e;
}

}  // namespace

std::string to_string(HeadId id) {
  return "(" + std::to_string(id.layer) + "," + std::to_string(id.head) + ")";
}

std::string_view to_string(ExplainMethod m) {
  return m == ExplainMethod::kAttnNorm ? "attn_norm" : "attn_gradnorm";
}

ExplainMethod parse_explain_method(std::string_view name) {
  if (name == "attn_norm") return ExplainMethod::kAttnNorm;
  if (name == "attn_gradnorm") return ExplainMethod::kAttnGradNorm;
  throw ConfigError("unknown explain method '" + std::string(name) + "'");
}

std::vector<double> attention_relevance(const Tensor& weights, std::span<const double> norms,
                                        const std::size_t* query_row) {
  const std::size_t n = weights.rows();
  const std::size_t m = weights.cols();
  if (norms.size() != m) throw DimensionError("attention_relevance: norm count differs from keys");
  std::vector<double> out(m, 0.0);
  if (query_row != nullptr) {
    if (*query_row >= n) throw ContractError("attention_relevance: query row out of range");
    for (std::size_t j = 0; j < m; ++j) out[j] = weights(*query_row, j) * norms[j];
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j] += weights(i, j);
  }
  for (std::size_t j = 0; j < m; ++j) out[j] = out[j] / static_cast<double>(n) * norms[j];
  return out;
}

std::vector<double> aggregate_subwords(std::span<const double> token_scores,
                                       std::span<const std::size_t> piece_word, std::size_t num_words) {
  if (token_scores.size() != piece_word.size()) {
    throw DimensionError("aggregate_subwords: every token needs a word");
  }
  std::vector<double> out(num_words, 0.0);
  for (std::size_t i = 0; i < token_scores.size(); ++i) {
    if (piece_word[i] >= num_words) {
      throw ContractError("aggregate_subwords: token " + std::to_string(i) + " maps past the last word");
    }
    out[piece_word[i]] += token_scores[i];
  }
  return out;
}

Explanation attn_norm_explain(const EncoderTrace& trace, const TokenizedInput& input, HeadId head,
                              bool cls_row_only) {
  check_head(trace, input, head);
  return explain_with_norms(trace, input, head, row_norms(trace.values[head.layer][head.head]),
                            cls_row_only, to_string(ExplainMethod::kAttnNorm));
}

Explanation attn_gradnorm_explain(const EncoderTrace& trace, const TokenizedInput& input, HeadId head,
                                  bool cls_row_only) {
  check_head(trace, input, head);
  if (!trace.has_value_grads()) throw ContractError("attn_gradnorm needs a trace with value gradients");
  return explain_with_norms(trace, input, head, row_norms(trace.value_grads[head.layer][head.head]),
                            cls_row_only, to_string(ExplainMethod::kAttnGradNorm));
}

Explanation explain_head(const EncoderTrace& trace, const TokenizedInput& input, HeadId head,
                         const ExplainOptions& options) {
  return options.method == ExplainMethod::kAttnNorm
             ? attn_norm_explain(trace, input, head, options.cls_row_only)
             : attn_gradnorm_explain(trace, input, head, options.cls_row_only);
}

std::vector<double> min_max_normalize(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  if (scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *lo) / range;
  return out;
}

Explanation ensemble_explanations(std::span<const Explanation> members) {
  if (members.empty()) throw ContractError("ensemble_explanations: no members");
  const std::size_t n = members.front().token_scores.size();
  std::vector<std::vector<double>> normalized;
  for (const auto& m : members) {
    if (m.token_scores.size() != n || m.piece_word != members.front().piece_word) {
      throw DimensionError("ensemble_explanations: members cover different tokens");
    }
    normalized.push_back(min_max_normalize(m.token_scores));
  }
  Explanation out;
  out.piece_word = members.front().piece_word;
  out.token_scores.resize(n);
  std::vector<double> column(members.size());
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < members.size(); ++k) column[k] = normalized[k][j];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    out.token_scores[j] = s / static_cast<double>(members.size());
  }
  const std::size_t words = members.front().word_scores.size();
  out.word_scores = aggregate_subwords(out.token_scores, out.piece_word, words);
  std::vector<std::string> names;
  for (const auto& m : members) names.push_back(m.provenance);
  std::sort(names.begin(), names.end());
  out.provenance = "ensemble[";
  for (std::size_t k = 0; k < names.size(); ++k) out.provenance += (k ? " " : "") + names[k];
  out.provenance += "]";
  return out;
}

std::vector<Explanation> explain_examples(const QeModel& model, std::span<const QEExample> examples,
                                          std::span<const HeadId> heads, const ExplainOptions& options) {
  if (heads.empty()) throw ContractError("explain_examples: no heads");
  const bool grads = options.method == ExplainMethod::kAttnGradNorm;
  const auto traces = model.traces(examples, grads);
  std::vector<Explanation> out;
  out.reserve(examples.size());
  std::vector<Explanation> members;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const TokenizedInput input = model.tokenize(examples[i]);
    members.clear();
    for (HeadId h : heads) members.push_back(explain_head(traces[i], input, h, options));
    out.push_back(ensemble_explanations(members));
  }
  return out;
}

std::vector<HeadScore> rank_heads(const QeModel& model, std::span<const QEExample> dev,
                                  const ExplainOptions& options) {
  std::vector<std::vector<Tag>> gold;
  std::vector<QEExample> kept;
  for (const auto& e : dev) {
    if (!e.tags) throw ContractError("rank_heads: dev examples need word tags");
    if (std::find(e.tags->begin(), e.tags->end(), Tag::kBad) == e.tags->end()) continue;
    kept.push_back(e);
    gold.push_back(*e.tags);
  }
  if (kept.empty()) throw ContractError("rank_heads: no dev sentence contains an error");
  const bool grads = options.method == ExplainMethod::kAttnGradNorm;
  const auto traces = model.traces(kept, grads);
  std::vector<TokenizedInput> inputs;
  for (const auto& e : kept) inputs.push_back(model.tokenize(e));

  std::vector<HeadScore> out;
  const auto layers = static_cast<int>(model.config().encoder.num_layers);
  const auto heads = static_cast<int>(model.config().encoder.num_heads);
  std::vector<std::vector<double>> word_scores(kept.size());
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) {
      const HeadId id{l, h};
      for (std::size_t i = 0; i < kept.size(); ++i) {
        const Explanation e = explain_head(traces[i], inputs[i], id, options);
        word_scores[i] = ensemble_explanations(std::span(&e, 1)).word_scores;
      }
      HeadScore s;
      s.head = id;
      s.detail = metrics::explainability_scores(word_scores, gold);
      s.score = s.detail.mean();
      out.push_back(s);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const HeadScore& a, const HeadScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.head < b.head;
  });
  return out;
}

std::vector<HeadId> top_heads(std::span<const HeadScore> ranking, std::size_t k) {
  std::vector<HeadId> out;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) out.push_back(ranking[i].head);
  return out;
}

std::vector<HeadId> select_heads_zero_shot(const std::map<std::string, std::vector<HeadScore>>& per_lp,
                                           std::size_t k) {
  if (per_lp.empty()) throw ContractError("select_heads_zero_shot: no language-pair ensembles");
  struct Tally {
    std::size_t count = 0;
    double score_sum = 0.0;
  };
  std::map<HeadId, Tally> tally;
  for (const auto& [lp, heads] : per_lp) {
    for (const auto& h : heads) {
      Tally& t = tally[h.head];
      ++t.count;
      t.score_sum += h.score;
    }
  }
  std::vector<std::pair<HeadId, Tally>> items(tally.begin(), tally.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    const double ma = a.second.score_sum / static_cast<double>(a.second.count);
    const double mb = b.second.score_sum / static_cast<double>(b.second.count);
    if (ma != mb) return ma > mb;
    return a.first < b.first;
  });
  std::vector<HeadId> out;
  for (std::size_t i = 0; i < std::min(k, items.size()); ++i) out.push_back(items[i].first);
  return out;
}

std::vector<HeadScore> rank_heads_by_mix(const HeadMixParams& params) {
  const auto beta = params.beta();
  const auto gamma = params.gamma();
  std::vector<HeadScore> out;
  for (std::size_t l = 0; l < gamma.size(); ++l) {
    for (std::size_t h = 0; h < gamma[l].size(); ++h) {
      HeadScore s;
      s.head = {static_cast<int>(l), static_cast<int>(h)};
      s.score = beta[l + 1] * gamma[l][h];
      out.push_back(s);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const HeadScore& a, const HeadScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.head < b.head;
  });
  return out;
}

nlohmann::json heads_to_json(std::span<const HeadScore> heads, ExplainMethod method) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& h : heads) {
    list.push_back({{"layer", h.head.layer},
                    {"head", h.head.head},
                    {"score", h.score},
                    {"auc", h.detail.auc},
                    {"ap", h.detail.ap},
                    {"recall_at_k", h.detail.recall_at_k},
                    {"sentences", h.detail.sentences}});
  }
  return {{"method", std::string(to_string(method))}, {"heads", std::move(list)}};
}

std::vector<HeadScore> heads_from_json(const nlohmann::json& j) {
  std::vector<HeadScore> out;
  try {
    for (const auto& item : j.at("heads")) {
      HeadScore s;
      s.head = {item.at("layer").get<int>(), item.at("head").get<int>()};
      s.score = item.value("score", 0.0);
      s.detail.auc = item.value("auc", 0.0);
      s.detail.ap = item.value("ap", 0.0);
      s.detail.recall_at_k = item.value("recall_at_k", 0.0);
      s.detail.sentences = item.value("sentences", std::size_t{0});
      out.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("heads", 0, e.what());
  }
  return out;
}

}  // namespace kiwiqe
