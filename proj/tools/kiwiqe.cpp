// kiwiqe command-line driver.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "kiwiqe/checkpoint.hpp"
#include "kiwiqe/ensemble.hpp"
#include "kiwiqe/errors.hpp"
#include "kiwiqe/explain.hpp"
#include "kiwiqe/log.hpp"
#include "kiwiqe/metrics.hpp"
#include "kiwiqe/prediction_io.hpp"
#include "kiwiqe/synthetic.hpp"
#include "kiwiqe/training.hpp"

namespace fs = std::filesystem;
using namespace kiwiqe;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kConfigSchemaVersion = 1;

struct UsageError : Error {
  using Error::Error;
};

struct ModelOptions {
  int layers = 4;
  int heads = 4;
  int dim = 64;
  int ffn = 128;
  int max_positions = 128;
  std::uint64_t model_seed = 1;
  std::string mix = "scalar";
  std::string transform = "sparsemax";
  std::size_t piece_chars = 4;
  bool lp_prefix = false;
  bool use_reference = false;
  double bad_threshold = 0.5;

  ModelConfig build() const {
    ModelConfig c;
    c.encoder.num_layers = layers;
    c.encoder.num_heads = heads;
    c.encoder.model_dim = dim;
    c.encoder.ffn_dim = ffn;
    c.encoder.max_positions = max_positions;
    c.encoder.seed = model_seed;
    c.mix = parse_mix_mode(mix);
    c.transform = parse_simplex_transform(transform);
    c.tokenizer.max_piece_chars = piece_chars;
    c.tokenizer.use_lp_prefix = lp_prefix;
    c.tokenizer.use_reference = use_reference;
    c.bad_threshold = bad_threshold;
    return c;
  }
};

struct TrainOptions {
  int epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string early_stop = "auto";
  int patience = 5;
  std::uint64_t seed = 1;

  TrainConfig build(const LossConfig& loss) const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.adam = {beta1, beta2, eps};
    c.early_stop = parse_early_stop_metric(early_stop);
    c.patience = patience;
    c.seed = seed;
    c.loss = loss;
    c.validate();
    return c;
  }
};

struct LossOptions {
  double lambda_s = 1.0;
  double lambda_w = 1.0;
  double weight_ok = 1.0;
  double weight_bad = 1.0;

  LossConfig build() const {
    LossConfig c;
    c.lambda_sent = lambda_s;
    c.lambda_word = lambda_w;
    c.class_weights = {weight_ok, weight_bad};
    c.validate();
    return c;
  }
};

void add_model_options(CLI::App* app, ModelOptions& o) {
  app->add_option("--layers", o.layers, "Encoder layers")->capture_default_str();
  app->add_option("--heads", o.heads, "Attention heads per layer")->capture_default_str();
  app->add_option("--dim", o.dim, "Model dimension (divisible by --heads)")->capture_default_str();
  app->add_option("--ffn", o.ffn, "Feed-forward hidden width")->capture_default_str();
  app->add_option("--max-positions", o.max_positions, "Longest input in tokens")->capture_default_str();
  app->add_option("--model-seed", o.model_seed, "Parameter initialisation seed")->capture_default_str();
  app->add_option("--mix", o.mix, "Layer pooling: scalar or head")
      ->check(CLI::IsMember({"scalar", "head"}))
      ->capture_default_str();
  app->add_option("--transform", o.transform, "Mixing weights transform: softmax or sparsemax")
      ->check(CLI::IsMember({"softmax", "sparsemax"}))
      ->capture_default_str();
  app->add_option("--piece-chars", o.piece_chars, "Maximum characters per word piece")->capture_default_str();
  app->add_flag("--lp-prefix", o.lp_prefix, "Prepend a language-pair token to target and source");
  app->add_flag("--use-reference", o.use_reference, "Append the reference segment when present");
  app->add_option("--bad-threshold", o.bad_threshold, "Tag BAD iff p(BAD) >= threshold")->capture_default_str();
}

void add_train_options(CLI::App* app, TrainOptions& o) {
  app->add_option("--epochs", o.epochs, "Maximum epochs")->capture_default_str();
  app->add_option("--batch-size", o.batch_size, "Examples per optimiser step")->capture_default_str();
  app->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--beta1", o.beta1, "Adam beta1")->capture_default_str();
  app->add_option("--beta2", o.beta2, "Adam beta2")->capture_default_str();
  app->add_option("--eps", o.eps, "Adam epsilon")->capture_default_str();
  app->add_option("--early-stop", o.early_stop, "Dev metric: auto, spearman, mcc or combined")
      ->check(CLI::IsMember({"auto", "spearman", "mcc", "combined"}))
      ->capture_default_str();
  app->add_option("--patience", o.patience, "Epochs without improvement before stopping (0 = never)")
      ->capture_default_str();
  app->add_option("--seed", o.seed, "Shuffling seed")->capture_default_str();
}

void add_loss_options(CLI::App* app, LossOptions& o) {
  app->add_option("--lambda-s", o.lambda_s, "Sentence loss weight")->capture_default_str();
  app->add_option("--lambda-w", o.lambda_w, "Word loss weight")->capture_default_str();
  app->add_option("--weight-ok", o.weight_ok, "Word loss class weight for OK")->capture_default_str();
  app->add_option("--weight-bad", o.weight_bad, "Word loss class weight for BAD")->capture_default_str();
}

CLI::Option* add_schema(CLI::App* app, std::string& schema) {
  return app->add_option("--schema", schema, "Score column: da, hter, mqm or tags")
      ->check(CLI::IsMember({"da", "hter", "mqm", "tags"}))
      ->capture_default_str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<HeadId> parse_head_list(const std::string& text) {
  std::vector<HeadId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("--heads entries look like layer:head, got '" + item + "'");
    try {
      out.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
    } catch (const std::exception&) {
      throw UsageError("--heads entries look like layer:head, got '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--heads is empty");
  return out;
}

std::string dev_summary(const DevMetrics& m) {
  return "spearman " + format_number(m.spearman) + " mcc " + format_number(m.mcc);
}

// ---- gen-synthetic ----

struct GenOptions {
  fs::path out;
  SyntheticConfig synth;
  std::size_t holdout_shards = 1;
  std::size_t train_size = 2000;
  std::size_t dev_size = 500;
  std::size_t test_size = 500;
  std::size_t holdout_size = 1000;
  std::size_t holdout_test_size = 500;
  std::size_t piece_chars = 4;
};

int cmd_gen_synthetic(const GenOptions& o) {
  const SyntheticTask task(o.synth);
  if (o.holdout_shards >= o.synth.num_shards) throw ConfigError("need at least one non-held-out shard");
  std::vector<std::size_t> main_shards, held;
  for (std::size_t s = 0; s < o.synth.num_shards; ++s) {
    (s + o.holdout_shards < o.synth.num_shards ? main_shards : held).push_back(s);
  }
  ensure_dir(o.out);
  write_qe_tsv(o.out / "train.tsv", task.generate_mixed(main_shards, o.train_size, 1));
  write_qe_tsv(o.out / "dev.tsv", task.generate_mixed(main_shards, o.dev_size, 2));
  write_qe_tsv(o.out / "test.tsv", task.generate_mixed(main_shards, o.test_size, 3));
  if (!held.empty()) {
    write_qe_tsv(o.out / "holdout.tsv", task.generate_mixed(held, o.holdout_size, 4));
    write_qe_tsv(o.out / "holdout_test.tsv", task.generate_mixed(held, o.holdout_test_size, 5));
  }
  TokenizerConfig tok;
  tok.max_piece_chars = o.piece_chars;
  task.vocabulary(tok).save(o.out / "vocab.txt");
  nlohmann::json shards = nlohmann::json::array();
  for (std::size_t s = 0; s < task.shards().size(); ++s) {
    shards.push_back({{"lp", task.shards()[s].lp}, {"held_out", s + o.holdout_shards >= o.synth.num_shards}});
  }
  write_json(o.out / "synthetic.json", {{"seed", o.synth.seed},
                                        {"lexicon_size", o.synth.lexicon_size},
                                        {"noise_fraction", o.synth.noise_fraction},
                                        {"max_error_rate", o.synth.max_error_rate},
                                        {"shards", shards}});
  std::cout << "wrote synthetic corpus to " << o.out.string() << '\n';
  return 0;
}

// ---- train ----

struct TrainCmd {
  fs::path train, dev, out, vocab;
  std::string schema = "da";
  ModelOptions model;
  TrainOptions train_opts;
  LossOptions loss;
};

int cmd_train(const TrainCmd& o) {
  const ModelConfig mc = o.model.build();
  const LossConfig loss = o.loss.build();
  const TrainConfig tc = o.train_opts.build(loss);
  const ScoreSchema schema = parse_score_schema(o.schema);
  const auto train_set = parse_qe_tsv(o.train, schema);
  const auto dev_set = parse_qe_tsv(o.dev, schema);
  Vocabulary vocab = o.vocab.empty() ? build_vocabulary(train_set, mc.tokenizer) : Vocabulary::load(o.vocab);
  for (const auto& lp : language_pairs(dev_set)) vocab.add(Vocabulary::lp_token(lp));
  ensure_dir(o.out);
  const QeModel model(mc, vocab);
  const TrainResult r = kiwiqe::train(model, train_set, dev_set, tc);
  save_checkpoint(o.out / "checkpoint.json", r.model, loss);
  write_history_jsonl(o.out / "history.jsonl", r.history);
  r.model.vocab().save(o.out / "vocab.txt");
  std::cout << "best epoch " << r.best_epoch;
  if (r.best_epoch > 0) std::cout << " dev " << dev_summary(r.history[r.best_epoch - 1].dev);
  std::cout << '\n';
  return 0;
}

// ---- finetune ----

struct FinetuneCmd {
  fs::path checkpoint, data, monitor, out;
  std::string schema = "da";
  std::uint64_t split_seed = 1;
  double guard_band = 0.02;
  TrainOptions train_opts;
};

int cmd_finetune(const FinetuneCmd& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const TrainConfig tc = o.train_opts.build(ck.loss);
  const ScoreSchema schema = parse_score_schema(o.schema);
  const auto data = parse_qe_tsv(o.data, schema);
  if (data.size() == 1) throw ContractError("few-shot data needs at least two examples");
  std::vector<QEExample> adapt, validate;
  if (!data.empty()) std::tie(adapt, validate) = split_halves(data, o.split_seed);
  std::vector<QEExample> monitor;
  if (!o.monitor.empty()) monitor = parse_qe_tsv(o.monitor, schema);
  const QeModel model = ck.model();
  const FewShotResult r = finetune_fewshot(model, adapt, validate, monitor, tc, o.guard_band);
  ensure_dir(o.out);
  save_checkpoint(o.out / "checkpoint.json", r.model, ck.loss);
  write_history_jsonl(o.out / "history.jsonl", r.report.history);
  write_json(o.out / "fewshot_report.json", r.report.to_json());
  for (const auto& [lp, c] : r.report.per_lp) {
    std::cout << lp << " before " << dev_summary(c.before) << " after " << dev_summary(c.after) << '\n';
  }
  return 0;
}

// ---- predict ----

struct PredictCmd {
  fs::path checkpoint, data, out;
  std::string schema = "da";
  std::size_t batch_size = 32;
};

int cmd_predict(const PredictCmd& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto data = parse_qe_tsv(o.data, parse_score_schema(o.schema));
  const QeModel model = ck.model();
  const auto preds = model.predict(data, o.batch_size);
  std::vector<double> scores;
  std::vector<std::vector<Tag>> tags;
  std::vector<Tensor> logits;
  for (const auto& p : preds) {
    scores.push_back(p.sentence_score);
    tags.push_back(p.word_tags);
    logits.push_back(p.word_logits);
  }
  ensure_dir(o.out);
  write_scores(o.out / "scores.txt", scores);
  write_tags(o.out / "tags.txt", tags);
  write_logits(o.out / "logits.txt", logits);
  std::cout << "predicted " << preds.size() << " segments\n";
  return 0;
}

// ---- rank-heads ----

struct RankCmd {
  fs::path checkpoint, dev, out;
  std::string schema = "tags";
  std::string method = "attn_gradnorm";
  bool cls_row_only = false;
  bool by_mix = false;
  std::size_t top_k = 5;
};

int cmd_rank_heads(const RankCmd& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const QeModel model = ck.model();
  ExplainOptions opts;
  opts.method = parse_explain_method(o.method);
  opts.cls_row_only = o.cls_row_only;
  nlohmann::json result;
  if (o.by_mix) {
    const auto ranking = rank_heads_by_mix(model.head_mix_params());
    result = heads_to_json(ranking, opts.method);
    result["source"] = "head_mix";
  } else {
    const auto dev = parse_qe_tsv(o.dev, parse_score_schema(o.schema));
    const auto ranking = rank_heads(model, dev, opts);
    result = heads_to_json(ranking, opts.method);
    result["source"] = "dev";
    const auto lps = language_pairs(dev);
    if (lps.size() > 1) {
      std::map<std::string, std::vector<HeadScore>> per_lp;
      nlohmann::json per_lp_json = nlohmann::json::object();
      for (const auto& lp : lps) {
        const auto subset = filter_lp(dev, lp);
        auto r = rank_heads(model, subset, opts);
        r.resize(std::min(r.size(), o.top_k));
        per_lp_json[lp] = heads_to_json(r, opts.method)["heads"];
        per_lp[lp] = std::move(r);
      }
      nlohmann::json zero_shot = nlohmann::json::object();
      for (const auto& lp : lps) {
        auto others = per_lp;
        others.erase(lp);
        nlohmann::json heads = nlohmann::json::array();
        for (HeadId h : select_heads_zero_shot(others, o.top_k)) heads.push_back({{"layer", h.layer}, {"head", h.head}});
        zero_shot[lp] = std::move(heads);
      }
      result["per_lp"] = std::move(per_lp_json);
      result["zero_shot"] = std::move(zero_shot);
    }
  }
  result["cls_row_only"] = o.cls_row_only;
  if (o.out.has_parent_path()) ensure_dir(o.out.parent_path());
  write_json(o.out, result);
  for (const auto& h : result["heads"]) {
    std::cout << h["layer"].get<int>() << ':' << h["head"].get<int>() << '\t' << format_number(h["score"].get<double>())
              << '\n';
  }
  return 0;
}

// ---- explain ----

struct ExplainCmd {
  fs::path checkpoint, data, out, ranking;
  std::string schema = "da";
  std::string method = "attn_gradnorm";
  std::string heads = "top5";
  bool cls_row_only = false;
};

int cmd_explain(const ExplainCmd& o) {
  std::vector<HeadId> heads;
  if (o.heads.rfind("top", 0) == 0) {
    std::size_t k = 0;
    try {
      k = static_cast<std::size_t>(std::stoul(o.heads.substr(3)));
    } catch (const std::exception&) {
      throw UsageError("--heads topK needs a number, got '" + o.heads + "'");
    }
    if (o.ranking.empty()) throw UsageError("--heads " + o.heads + " needs --ranking (output of rank-heads)");
    const auto ranking = heads_from_json(read_json(o.ranking));
    if (ranking.size() < k) throw ContractError("ranking lists fewer than " + std::to_string(k) + " heads");
    heads = top_heads(ranking, k);
  } else {
    heads = parse_head_list(o.heads);
  }
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const QeModel model = ck.model();
  const auto data = parse_qe_tsv(o.data, parse_score_schema(o.schema));
  ExplainOptions opts;
  opts.method = parse_explain_method(o.method);
  opts.cls_row_only = o.cls_row_only;
  const auto explanations = explain_examples(model, data, heads, opts);
  std::vector<std::vector<double>> word_scores;
  for (const auto& e : explanations) word_scores.push_back(e.word_scores);
  ensure_dir(o.out);
  write_word_scores(o.out / "explanations.txt", word_scores);
  nlohmann::json members = nlohmann::json::array();
  for (HeadId h : heads) members.push_back({{"layer", h.layer}, {"head", h.head}});
  write_json(o.out / "ensemble.json", {{"schema_version", 1},
                                       {"method", std::string(to_string(opts.method))},
                                       {"cls_row_only", o.cls_row_only},
                                       {"normalization", "min_max"},
                                       {"members", members}});
  std::cout << "explained " << explanations.size() << " segments with " << heads.size() << " heads\n";
  return 0;
}

// ---- ensemble ----

struct EnsembleCmd {
  std::vector<fs::path> members;
  fs::path dev, data, spec, out;
  std::string schema = "da";
  std::string strategy = "scores";
  std::optional<double> alpha;
  std::size_t budget = 128;
  int sweeps = 2;
  std::uint64_t seed = 1;
  double threshold = 0.5;
};

MemberPredictions load_member(const fs::path& dir) {
  MemberPredictions m;
  m.id = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  if (fs::exists(dir / "scores.txt")) m.scores = read_scores(dir / "scores.txt");
  if (fs::exists(dir / "tags.txt")) m.tags = read_tags(dir / "tags.txt");
  if (fs::exists(dir / "logits.txt")) m.logits = read_logits(dir / "logits.txt");
  return m;
}

// Row-aligns member predictions with a dataset.
std::vector<MemberPredictions> slice_members(const std::vector<MemberPredictions>& members, std::size_t begin,
                                             std::size_t count) {
  std::vector<MemberPredictions> out;
  for (const auto& m : members) {
    MemberPredictions s;
    s.id = m.id;
    auto take = [&](const auto& v, auto& dst) {
      if (v.empty()) return;
      if (v.size() < begin + count) throw DimensionError("member " + m.id + " has too few prediction rows");
      dst.assign(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(begin + count));
    };
    take(m.scores, s.scores);
    take(m.tags, s.tags);
    take(m.logits, s.logits);
    out.push_back(std::move(s));
  }
  return out;
}

void check_member_rows(const std::vector<MemberPredictions>& members, std::size_t rows, const std::string& what) {
  for (const auto& m : members) {
    for (std::size_t n : {m.scores.size(), m.tags.size(), m.logits.size()}) {
      if (n != 0 && n != rows) {
        throw DimensionError("member " + m.id + " has " + std::to_string(n) + " rows but " + what + " has " +
                             std::to_string(rows));
      }
    }
  }
}

int cmd_ensemble(const EnsembleCmd& o) {
  std::vector<MemberPredictions> dev_members;
  for (const auto& dir : o.members) dev_members.push_back(load_member(dir));
  const ScoreSchema schema = parse_score_schema(o.schema);
  EnsembleSpec spec;
  if (!o.spec.empty()) {
    spec = EnsembleSpec::from_json(read_json(o.spec));
  } else {
    if (o.dev.empty()) throw UsageError("ensemble needs --dev to search weights, or --spec");
    const auto dev = parse_qe_tsv(o.dev, schema);
    check_member_rows(dev_members, dev.size(), o.dev.string());
    SearchConfig sc;
    sc.budget = o.budget;
    sc.sweeps = o.sweeps;
    sc.seed = o.seed;
    if (o.alpha) sc.alpha_min = sc.alpha_max = *o.alpha;
    spec = search_weights(dev_members, dev, parse_ensemble_strategy(o.strategy), sc);
  }
  ensure_dir(o.out);
  write_json(o.out / "spec.json", spec.to_json());
  const fs::path apply_path = o.data.empty() ? o.dev : o.data;
  if (!apply_path.empty()) {
    const auto data = parse_qe_tsv(apply_path, schema);
    check_member_rows(dev_members, data.size(), apply_path.string());
    const auto members = slice_members(dev_members, 0, data.size());
    const EnsembleOutput out = apply_ensemble(spec, members, data, o.threshold);
    if (!out.scores.empty()) write_scores(o.out / "scores.txt", out.scores);
    if (!out.tags.empty()) write_tags(o.out / "tags.txt", out.tags);
  }
  for (const auto& [lp, w] : spec.per_lp) {
    std::cout << lp << "\tmetric " << format_number(w.dev_metric) << (w.fallback ? "\t(best single member)" : "")
              << '\n';
  }
  return 0;
}

// ---- evaluate ----

struct EvaluateCmd {
  fs::path gold, pred, scores, tags, word_scores, out, tsv;
  std::string schema = "da";
  std::string recall = "macro";
};

int cmd_evaluate(const EvaluateCmd& o) {
  const auto gold = parse_qe_tsv(o.gold, parse_score_schema(o.schema));
  metrics::SystemOutput sys;
  auto pick = [&](const fs::path& explicit_path, const char* name) -> fs::path {
    if (!explicit_path.empty()) return explicit_path;
    if (!o.pred.empty() && fs::exists(o.pred / name)) return o.pred / name;
    return {};
  };
  if (auto p = pick(o.scores, "scores.txt"); !p.empty()) sys.scores = read_scores(p);
  if (auto p = pick(o.tags, "tags.txt"); !p.empty()) sys.tags = read_tags(p);
  if (auto p = pick(o.word_scores, "explanations.txt"); !p.empty()) sys.word_scores = read_word_scores(p);
  if (sys.scores.empty() && sys.tags.empty() && sys.word_scores.empty()) {
    throw UsageError("nothing to evaluate: give --pred or one of --scores, --tags, --word-scores");
  }
  const auto report = metrics::evaluate(gold, sys,
                                        o.recall == "micro" ? metrics::RecallAggregation::kMicro
                                                            : metrics::RecallAggregation::kMacro);
  const std::string tsv = report.to_tsv();
  std::cout << tsv;
  if (!o.out.empty()) {
    if (o.out.has_parent_path()) ensure_dir(o.out.parent_path());
    write_json(o.out, report.to_json());
  }
  if (!o.tsv.empty()) {
    std::ofstream f(o.tsv);
    if (!f) throw Error("cannot write " + o.tsv.string());
    f << tsv;
  }
  return 0;
}

// ---- config merging ----

// Turns a flat JSON object into command-line tokens. Keys name long flags
// without the leading dashes.
std::vector<std::string> config_tokens(const nlohmann::json& j, CLI::App* sub, const fs::path& path) {
  if (!j.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  std::vector<std::string> tokens;
  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version") {
      if (!value.is_number_integer() || value.get<int>() != kConfigSchemaVersion) {
        throw ConfigError(path.string() + ": unsupported schema_version");
      }
      continue;
    }
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw ConfigError(path.string() + ": unknown key '" + key + "' for " + sub->get_name());
    }
    auto push = [&](const nlohmann::json& v) {
      if (v.is_string()) {
        tokens.push_back("--" + key);
        tokens.push_back(v.get<std::string>());
      } else if (v.is_boolean()) {
        if (opt->get_expected_min() != 0) throw ConfigError(path.string() + ": '" + key + "' is not a flag");
        if (v.get<bool>()) tokens.push_back("--" + key);
      } else if (v.is_number()) {
        tokens.push_back("--" + key);
        tokens.push_back(v.dump());
      } else {
        throw ConfigError(path.string() + ": unsupported value for '" + key + "'");
      }
    };
    if (value.is_array()) {
      for (const auto& v : value) push(v);
    } else {
      push(value);
    }
  }
  return tokens;
}

std::vector<std::string> with_config(const std::vector<std::string>& args, CLI::App& app) {
  std::size_t sub_index = args.size();
  CLI::App* sub = nullptr;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (CLI::App* s = app.get_subcommand_no_throw(args[i]); s != nullptr) {
      sub_index = i;
      sub = s;
      break;
    }
  }
  if (sub == nullptr) return args;
  std::optional<fs::path> config;
  for (std::size_t i = sub_index + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (!config) return args;
  if (!fs::is_regular_file(*config)) throw ConfigError("--config: file does not exist: " + config->string());
  nlohmann::json j;
  {
    std::ifstream in(*config);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(config->string() + ": " + e.what());
    }
  }
  const auto tokens = config_tokens(j, sub, *config);
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_index) + 1);
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(sub_index) + 1, args.end());
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"kiwiqe: translation quality estimation with a small transformer"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");
  fs::path config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON file of option values; flags given here win")
        ->check(CLI::ExistingFile);
  };

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a planted-signal synthetic corpus");
  add_config(gen_cmd);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.synth.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--shards", gen.synth.num_shards, "Synthetic language pairs")->capture_default_str();
  gen_cmd->add_option("--holdout-shards", gen.holdout_shards, "Trailing shards kept out of train/dev/test")
      ->capture_default_str();
  gen_cmd->add_option("--lexicon", gen.synth.lexicon_size, "Words per shard lexicon")->capture_default_str();
  gen_cmd->add_option("--noise-words", gen.synth.noise_words, "Size of the shared noise lexicon")
      ->capture_default_str();
  gen_cmd->add_option("--min-words", gen.synth.min_words, "Shortest sentence")->capture_default_str();
  gen_cmd->add_option("--max-words", gen.synth.max_words, "Longest sentence")->capture_default_str();
  gen_cmd->add_option("--max-error-rate", gen.synth.max_error_rate, "Upper bound of the per-sentence error rate")
      ->capture_default_str();
  gen_cmd->add_option("--noise-fraction", gen.synth.noise_fraction,
                      "Share of errors that are noise words (the rest are foreign words)")
      ->capture_default_str();
  gen_cmd->add_option("--train-size", gen.train_size, "train.tsv rows")->capture_default_str();
  gen_cmd->add_option("--dev-size", gen.dev_size, "dev.tsv rows")->capture_default_str();
  gen_cmd->add_option("--test-size", gen.test_size, "test.tsv rows")->capture_default_str();
  gen_cmd->add_option("--holdout-size", gen.holdout_size, "holdout.tsv rows")->capture_default_str();
  gen_cmd->add_option("--holdout-test-size", gen.holdout_test_size, "holdout_test.tsv rows")->capture_default_str();
  gen_cmd->add_option("--piece-chars", gen.piece_chars, "Piece length used for vocab.txt")->capture_default_str();

  TrainCmd tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint.json, history.jsonl, vocab.txt");
  add_config(train_cmd);
  train_cmd->add_option("--train", tr.train, "Training TSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--dev", tr.dev, "Dev TSV for early stopping")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--vocab", tr.vocab, "Vocabulary file (default: built from --train)")
      ->check(CLI::ExistingFile);
  add_schema(train_cmd, tr.schema);
  add_model_options(train_cmd, tr.model);
  add_train_options(train_cmd, tr.train_opts);
  add_loss_options(train_cmd, tr.loss);

  FinetuneCmd ft;
  auto* ft_cmd = app.add_subcommand("finetune", "Few-shot adaptation on half of a new language pair's data");
  add_config(ft_cmd);
  ft_cmd->add_option("--checkpoint", ft.checkpoint, "Model to adapt")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--data", ft.data, "New language pair TSV; split into adaptation/validation halves")
      ->required()
      ->check(CLI::ExistingFile);
  ft_cmd->add_option("--monitor", ft.monitor, "Dev TSV of other language pairs to guard")->check(CLI::ExistingFile);
  ft_cmd->add_option("--out", ft.out, "Output directory")->required();
  ft_cmd->add_option("--split-seed", ft.split_seed, "Seed of the half split")->capture_default_str();
  ft_cmd->add_option("--guard-band", ft.guard_band, "Allowed Spearman drop on monitored pairs")
      ->capture_default_str();
  add_schema(ft_cmd, ft.schema);
  add_train_options(ft_cmd, ft.train_opts);

  PredictCmd pr;
  auto* pred_cmd = app.add_subcommand("predict", "Write scores.txt, tags.txt and logits.txt");
  add_config(pred_cmd);
  pred_cmd->add_option("--checkpoint", pr.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--data", pr.data, "Input TSV")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--out", pr.out, "Output directory")->required();
  pred_cmd->add_option("--batch-size", pr.batch_size, "Segments per forward pass")->capture_default_str();
  add_schema(pred_cmd, pr.schema);

  RankCmd rk;
  auto* rank_cmd = app.add_subcommand("rank-heads", "Score every attention head as a word-level explainer");
  add_config(rank_cmd);
  rank_cmd->add_option("--checkpoint", rk.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  rank_cmd->add_option("--dev", rk.dev, "Tagged dev TSV")->check(CLI::ExistingFile);
  rank_cmd->add_option("--out", rk.out, "Ranking JSON")->required();
  rank_cmd->add_option("--method", rk.method, "attn_gradnorm or attn_norm")
      ->check(CLI::IsMember({"attn_gradnorm", "attn_norm"}))
      ->capture_default_str();
  rank_cmd->add_flag("--cls-row-only", rk.cls_row_only, "Use only the [cls] attention row");
  rank_cmd->add_flag("--by-mix", rk.by_mix, "Rank by learned head-mix weights instead of dev metrics");
  rank_cmd->add_option("--top-k", rk.top_k, "Heads per language-pair ensemble")->capture_default_str();
  add_schema(rank_cmd, rk.schema);

  ExplainCmd ex;
  auto* ex_cmd = app.add_subcommand("explain", "Word-level explanations from attention heads");
  add_config(ex_cmd);
  ex_cmd->add_option("--checkpoint", ex.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ex_cmd->add_option("--data", ex.data, "Input TSV")->required()->check(CLI::ExistingFile);
  ex_cmd->add_option("--out", ex.out, "Output directory")->required();
  ex_cmd->add_option("--heads", ex.heads, "topK (with --ranking) or a list like 0:1,3:2")->capture_default_str();
  ex_cmd->add_option("--ranking", ex.ranking, "rank-heads output")->check(CLI::ExistingFile);
  ex_cmd->add_option("--method", ex.method, "attn_gradnorm or attn_norm")
      ->check(CLI::IsMember({"attn_gradnorm", "attn_norm"}))
      ->capture_default_str();
  ex_cmd->add_flag("--cls-row-only", ex.cls_row_only, "Use only the [cls] attention row");
  add_schema(ex_cmd, ex.schema);

  EnsembleCmd en;
  auto* en_cmd = app.add_subcommand("ensemble", "Search ensemble weights or apply a saved spec");
  add_config(en_cmd);
  en_cmd->add_option("--member", en.members, "predict output directory (repeat per member)")
      ->required()
      ->check(CLI::ExistingDirectory)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  en_cmd->add_option("--dev", en.dev, "Gold TSV the members predicted, used for the search")
      ->check(CLI::ExistingFile);
  en_cmd->add_option("--data", en.data, "TSV to apply the ensemble to (default --dev)")->check(CLI::ExistingFile);
  en_cmd->add_option("--spec", en.spec, "Apply this spec instead of searching")->check(CLI::ExistingFile);
  en_cmd->add_option("--out", en.out, "Output directory")->required();
  en_cmd->add_option("--strategy", en.strategy, "best_only, scores, logits or tags")
      ->check(CLI::IsMember({"best_only", "scores", "logits", "tags"}))
      ->capture_default_str();
  en_cmd->add_option("--alpha", en.alpha, "Fix the BAD-class weight of the tags strategy");
  en_cmd->add_option("--budget", en.budget, "Random search samples (0 = best single member)")
      ->capture_default_str();
  en_cmd->add_option("--sweeps", en.sweeps, "Coordinate-descent sweeps")->capture_default_str();
  en_cmd->add_option("--seed", en.seed, "Search seed")->capture_default_str();
  en_cmd->add_option("--threshold", en.threshold, "BAD threshold for the logits strategy")->capture_default_str();
  add_schema(en_cmd, en.schema);

  EvaluateCmd ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Score predictions against gold data");
  add_config(ev_cmd);
  ev_cmd->add_option("--gold", ev.gold, "Gold TSV")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--pred", ev.pred, "Directory with scores.txt / tags.txt / explanations.txt")
      ->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--scores", ev.scores, "Sentence scores file")->check(CLI::ExistingFile);
  ev_cmd->add_option("--tags", ev.tags, "Word tags file")->check(CLI::ExistingFile);
  ev_cmd->add_option("--word-scores", ev.word_scores, "Word explanation scores file")->check(CLI::ExistingFile);
  ev_cmd->add_option("--out", ev.out, "Report JSON");
  ev_cmd->add_option("--tsv", ev.tsv, "Report TSV");
  ev_cmd->add_option("--recall", ev.recall, "R@K aggregation across sentences: macro or micro")
      ->check(CLI::IsMember({"macro", "micro"}))
      ->capture_default_str();
  add_schema(ev_cmd, ev.schema);

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = with_config(args, app);
  } catch (const Error& e) {
    std::cerr << "kiwiqe: " << e.what() << '\n';
    return kExitUsage;
  }
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  set_log_level(quiet ? LogLevel::kQuiet : verbose ? LogLevel::kInfo : LogLevel::kWarning);

  try {
    if (gen_cmd->parsed()) return cmd_gen_synthetic(gen);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (ft_cmd->parsed()) return cmd_finetune(ft);
    if (pred_cmd->parsed()) return cmd_predict(pr);
    if (rank_cmd->parsed()) {
      if (!rk.by_mix && rk.dev.empty()) throw UsageError("rank-heads needs --dev unless --by-mix is given");
      return cmd_rank_heads(rk);
    }
    if (ex_cmd->parsed()) return cmd_explain(ex);
    if (en_cmd->parsed()) return cmd_ensemble(en);
    if (ev_cmd->parsed()) return cmd_evaluate(ev);
  } catch (const UsageError& e) {
    std::cerr << "kiwiqe: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "kiwiqe: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "kiwiqe: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
