#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kiwiqe/encoder.hpp"
#include "kiwiqe/metrics.hpp"
#include "kiwiqe/qe_model.hpp"
#include "kiwiqe/tokenizer.hpp"

namespace kiwiqe {

// Attention head address; layer is 0-based over the attention layers.
struct HeadId {
  int layer = 0;
  int head = 0;

  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(HeadId id);

enum class ExplainMethod { kAttnNorm, kAttnGradNorm };

std::string_view to_string(ExplainMethod m);
ExplainMethod parse_explain_method(std::string_view name);

struct ExplainOptions {
  ExplainMethod method = ExplainMethod::kAttnGradNorm;
  // Use only the [cls] query row instead of the mean over all queries.
  bool cls_row_only = false;
};

struct Explanation {
  std::vector<double> token_scores;      // one per target piece
  std::vector<std::size_t> piece_word;   // target word of every piece
  std::vector<double> word_scores;       // one per target word
  std::string provenance;
};

// Relevance of key token j: mean over query rows i of weights[i, j] * norms[j],
// or only row `query_row` when one is given.
std::vector<double> attention_relevance(const Tensor& weights, std::span<const double> norms,
                                        const std::size_t* query_row = nullptr);

// Word score = sum of its pieces' scores.
std::vector<double> aggregate_subwords(std::span<const double> token_scores,
                                       std::span<const std::size_t> piece_word,
                                       std::size_t num_words);

Explanation attn_norm_explain(const EncoderTrace& trace, const TokenizedInput& input, HeadId head,
                              bool cls_row_only = false);
// Throws ContractError when the trace carries no value gradients.
Explanation attn_gradnorm_explain(const EncoderTrace& trace, const TokenizedInput& input, HeadId head,
                                  bool cls_row_only = false);
Explanation explain_head(const EncoderTrace& trace, const TokenizedInput& input, HeadId head,
                         const ExplainOptions& options);

// Per-sentence min-max scaling to [0, 1]; a constant vector maps to zeros.
std::vector<double> min_max_normalize(std::span<const double> scores);

// Mean of min-max normalized members. Members are summed in sorted order
// per token, so the result does not depend on member order.
Explanation ensemble_explanations(std::span<const Explanation> members);

struct HeadScore {
  HeadId head;
  double score = 0.0;  // mean of AUC, AP and R@K
  metrics::ExplainabilityScores detail;
};

// Word-level explanations of every example for a fixed set of heads (an
// ensemble when more than one head is given).
std::vector<Explanation> explain_examples(const QeModel& model, std::span<const QEExample> examples,
                                          std::span<const HeadId> heads, const ExplainOptions& options);

// Scores every head on error-containing dev sentences; sorted by score
// descending, ties by (layer, head).
std::vector<HeadScore> rank_heads(const QeModel& model, std::span<const QEExample> dev,
                                  const ExplainOptions& options);

std::vector<HeadId> top_heads(std::span<const HeadScore> ranking, std::size_t k = 5);

// Heads most frequent across per-LP ensembles; ties by mean dev score, then
// (layer, head).
std::vector<HeadId> select_heads_zero_shot(const std::map<std::string, std::vector<HeadScore>>& per_lp,
                                           std::size_t k = 5);

// Heads ordered by their head-mix weight beta_{l+1} * gamma_{l,h}.
std::vector<HeadScore> rank_heads_by_mix(const HeadMixParams& params);

nlohmann::json heads_to_json(std::span<const HeadScore> heads, ExplainMethod method);
std::vector<HeadScore> heads_from_json(const nlohmann::json& j);

}  // namespace kiwiqe
