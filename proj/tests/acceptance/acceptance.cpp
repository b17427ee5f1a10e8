// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
//
//   acceptance --cli <path to kiwiqe> --work <scratch dir> [--only 1,5,9]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "graphs.hpp"
#include "kiwiqe/dataset.hpp"
#include "kiwiqe/ensemble.hpp"
#include "kiwiqe/explain.hpp"
#include "kiwiqe/log.hpp"
#include "kiwiqe/metrics.hpp"
#include "kiwiqe/qe_model.hpp"
#include "kiwiqe/rng.hpp"
#include "kiwiqe/simplex.hpp"
#include "kiwiqe/synthetic.hpp"
#include "kiwiqe/training.hpp"
#include "metric_suite.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace kiwiqe;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v, const char* f = "%.3f") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "/" : "") + fmt(f, v[i]);
  return out;
}

int failures = 0;

void verdict(int id, bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s  %2d  %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void note(const std::string& line) {
  std::printf("        %s\n", line.c_str());
  std::fflush(stdout);
}

// ---- 1-4: numerics and metrics ----

void autodiff_graphs() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t scalars = 0;
  std::set<std::string> ops;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto g = oracle::random_graph(seed);
    const auto c = oracle::check_gradients(g.fn, g.leaves);
    worst = std::max(worst, c.max_rel_error);
    scalars += c.parameters;
    ops.insert(g.ops.begin(), g.ops.end());
  }
  const double secs = seconds_since(t0);
  const std::vector<std::string> required{
      "matmul", "matmul_nt", "add_row", "tanh", "gelu", "softmax", "sparsemax", "log_softmax",
      "square", "layer_norm", "mul", "transpose", "segment_attention", "weighted_sum", "scale_by",
      "gather_rows", "slice_cols", "l2_norm", "sub", "sum", "mean", "sum_squares", "weighted_nll"};
  std::size_t covered = 0;
  for (const auto& op : required) covered += ops.count(op);
  verdict(1, worst < 1e-4 && secs < 30.0 && covered == required.size(), "autodiff vs central differences",
          "max rel err " + fmt("%.2e", worst) + " over 100 graphs (" + std::to_string(scalars) +
              " inputs), ops covered " + std::to_string(covered) + "/" + std::to_string(required.size()) +
              ", " + fmt("%.1f", secs) + " s (bar < 1e-4, < 30 s)");
}

void sparsemax_oracle() {
  Rng rng(2);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.below(15);
    std::vector<double> z(n);
    const double spread = rng.uniform(0.1, 4.0);
    for (double& v : z) v = rng.uniform(-spread, spread);
    const auto lib = sparsemax(z);
    const auto ref = oracle::simplex_projection(z);
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(lib[i] - ref[i]));
  }
  const auto two = sparsemax(std::vector<double>{2.0, 0.0});
  const bool exact = two[0] == 1.0 && two[1] == 0.0;
  verdict(2, worst <= 1e-6 && exact, "sparsemax vs simplex projection",
          "max abs diff " + fmt("%.2e", worst) + " over 1000 vectors (dims 2-16); sparsemax([2,0]) = [" +
              fmt("%g", two[0]) + "," + fmt("%g", two[1]) + "]");
}

void loss_algebra() {
  Rng rng(3);
  std::size_t mismatches = 0;
  std::size_t reductions = 0;
  for (int t = 0; t < 1000; ++t) {
    QEExample ex;
    ex.lp = "xx-yy";
    ex.score = rng.uniform(-2, 2);
    const std::size_t n = 1 + rng.below(8);
    std::vector<Tag> tags(n);
    Prediction p;
    p.sentence_score = rng.uniform(-2, 2);
    p.word_probs = Tensor::matrix(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      tags[i] = rng.below(3) == 0 ? Tag::kBad : Tag::kOk;
      const double bad = rng.uniform(0.01, 0.99);
      p.word_probs(i, 0) = 1.0 - bad;
      p.word_probs(i, 1) = bad;
    }
    ex.tags = tags;
    LossConfig cfg;
    cfg.lambda_sent = rng.uniform(0, 3);
    cfg.lambda_word = rng.uniform(0, 3);
    cfg.class_weights = {rng.uniform(0.2, 3), rng.uniform(0.2, 3)};
    const double ls = sentence_loss(ex.score, p.sentence_score);
    const double lw = word_loss(tags, p.word_probs, cfg.class_weights);
    if (combined_loss(ex, p, cfg) != cfg.lambda_sent * ls + cfg.lambda_word * lw) ++mismatches;
    LossConfig sent = cfg, word = cfg;
    sent.lambda_sent = 1, sent.lambda_word = 0;
    word.lambda_sent = 0, word.lambda_word = 1;
    if (combined_loss(ex, p, sent) != ls) ++reductions;
    if (combined_loss(ex, p, word) != lw) ++reductions;
  }
  verdict(3, mismatches == 0 && reductions == 0, "combined loss algebra",
          std::to_string(mismatches) + " mismatches of lambda_s*L_sent + lambda_w*L_word, " +
              std::to_string(reductions) + " inexact (1,0)/(0,1) reductions over 1000 cases");
}

void metric_oracles() {
  const auto suite = oracle::run_metric_suite(4, 1000);
  double worst = 0;
  std::size_t nan_bad = 0;
  for (const auto& [name, e] : suite.max_error) worst = std::max(worst, e);
  for (const auto& [name, c] : suite.nan_mismatches) nan_bad += c;
  namespace m = metrics;
  using enum Tag;
  const double sp = m::spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2});
  const double ap = m::average_precision(std::vector<double>{0.9, 0.8, 0.1}, std::vector<Tag>{kBad, kOk, kBad});
  const double mcc = m::mcc(std::vector<Tag>{kOk, kOk, kBad, kBad}, std::vector<Tag>{kOk, kBad, kOk, kBad});
  const bool examples = std::abs(sp - 0.5) < 1e-12 && std::abs(ap - 5.0 / 6.0) < 1e-12 && mcc == 0.0;
  verdict(4, suite.within(1e-9) && examples, "metric oracle suite",
          "max diff " + fmt("%.2e", worst) + " across " + std::to_string(suite.max_error.size()) +
              " metrics on 1000 instances, NaN mismatches " + std::to_string(nan_bad) + "; spearman " +
              fmt("%.4f", sp) + ", AP " + fmt("%.4f", ap) + ", MCC " + fmt("%.4f", mcc));
}

// ---- 5-9: synthetic task ----

struct Corpus {
  SyntheticTask task{SyntheticConfig{}};
  std::vector<QEExample> train, dev, test, holdout, holdout_test;
  Vocabulary vocab;
};

// Mirrors `kiwiqe gen-synthetic` with its defaults: shards 0-2 for
// training, shard 3 held out.
Corpus make_corpus() {
  Corpus c;
  const std::vector<std::size_t> main{0, 1, 2}, held{3};
  c.train = c.task.generate_mixed(main, 2000, 1);
  c.dev = c.task.generate_mixed(main, 500, 2);
  c.test = c.task.generate_mixed(main, 500, 3);
  c.holdout = c.task.generate_mixed(held, 1000, 4);
  c.holdout_test = c.task.generate_mixed(held, 500, 5);
  c.vocab = c.task.vocabulary(TokenizerConfig{});
  return c;
}

enum class Arm { kMulti, kSentence, kWord };

struct Run {
  TrainResult result;
  double seconds = 0;
  DevMetrics best() const { return result.history[static_cast<std::size_t>(result.best_epoch) - 1].dev; }
};

Run train_arm(const Corpus& c, Arm arm, std::uint64_t seed) {
  ModelConfig mc;
  mc.encoder.num_layers = 4;
  mc.encoder.num_heads = 4;
  mc.encoder.model_dim = 64;
  mc.encoder.seed = seed;
  TrainConfig tc;
  tc.epochs = 50;
  tc.patience = 5;
  tc.seed = seed;
  if (arm == Arm::kSentence) tc.loss.lambda_word = 0;
  if (arm == Arm::kWord) tc.loss.lambda_sent = 0;
  const auto t0 = Clock::now();
  Run r{train(QeModel(mc, c.vocab), c.train, c.dev, tc), 0};
  r.seconds = seconds_since(t0);
  return r;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Models {
  std::map<std::pair<int, std::uint64_t>, Run> runs;
  const Run& get(const Corpus& c, Arm arm, std::uint64_t seed) {
    const auto key = std::make_pair(static_cast<int>(arm), seed);
    if (!runs.count(key)) {
      runs.emplace(key, train_arm(c, arm, seed));
      const Run& r = runs.at(key);
      const char* names[] = {"multi-task", "sentence-only", "word-only"};
      note(std::string(names[static_cast<int>(arm)]) + " seed " + std::to_string(seed) + ": best epoch " +
           std::to_string(r.result.best_epoch) + "/" + std::to_string(r.result.history.size()) +
           ", dev spearman " + fmt("%.4f", r.best().spearman) + " mcc " + fmt("%.4f", r.best().mcc) + ", " +
           fmt("%.0f", r.seconds) + " s");
    }
    return runs.at(key);
  }
};

void end_to_end(const Corpus& c, Models& models) {
  std::vector<double> sp, mcc;
  double slowest = 0;
  int max_epochs = 0;
  for (auto s : kSeeds) {
    const Run& r = models.get(c, Arm::kMulti, s);
    sp.push_back(r.best().spearman);
    mcc.push_back(r.best().mcc);
    slowest = std::max(slowest, r.seconds);
    max_epochs = std::max(max_epochs, static_cast<int>(r.result.history.size()));
  }
  const bool pass = mean(sp) >= 0.9 && mean(mcc) >= 0.8 && slowest < 600 && max_epochs <= 50;
  verdict(5, pass, "synthetic end-to-end (multi-task)",
          "mean dev spearman " + fmt("%.4f", mean(sp)) + " (" + join(sp) + "), mean dev MCC " +
              fmt("%.4f", mean(mcc)) + " (" + join(mcc) + "), <= " + std::to_string(max_epochs) +
              " epochs, slowest run " + fmt("%.0f", slowest) + " s (bar 0.9 / 0.8, 50 epochs, 600 s)");
}

void multitask_benefit(const Corpus& c, Models& models) {
  int sentence_ok = 0, word_wins = 0;
  for (auto s : kSeeds) {
    const DevMetrics multi = models.get(c, Arm::kMulti, s).best();
    const DevMetrics sent = models.get(c, Arm::kSentence, s).best();
    const DevMetrics word = models.get(c, Arm::kWord, s).best();
    sentence_ok += multi.spearman >= sent.spearman - 0.02;
    word_wins += multi.mcc > word.mcc;
    note("seed " + std::to_string(s) + ": spearman multi " + fmt("%.4f", multi.spearman) + " vs sentence-only " +
         fmt("%.4f", sent.spearman) + "; MCC multi " + fmt("%.4f", multi.mcc) + " vs word-only " +
         fmt("%.4f", word.mcc));
  }
  const bool pass = sentence_ok == 3 && word_wins >= 2;
  verdict(6, pass, "multi-task benefit direction",
          "spearman within 0.02 of sentence-only in " + std::to_string(sentence_ok) +
              "/3 seeds; MCC above word-only in " + std::to_string(word_wins) + "/3 seeds (bar 3/3 and 2/3)");
}

void fewshot(const Corpus& c, Models& models) {
  const std::string held = c.holdout.front().lp;
  const auto [adapt, validation] = split_halves(c.holdout, 1);
  TrainConfig tc;
  tc.learning_rate = 1e-5;
  tc.epochs = 3;
  tc.patience = 0;
  std::vector<double> gains, worst_drops;
  bool pass = true;
  for (auto s : kSeeds) {
    const QeModel& base = models.get(c, Arm::kMulti, s).result.model;
    tc.seed = s;
    const FewShotResult r = finetune_fewshot(base, adapt, validation, c.dev, tc);
    const double before = evaluate_dev(base, c.holdout_test).spearman;
    const double after = evaluate_dev(r.model, c.holdout_test).spearman;
    double worst = -1;
    std::string others;
    for (const auto& [lp, cmp] : r.report.per_lp) {
      if (lp == held) continue;
      const double drop = cmp.before.spearman - cmp.after.spearman;
      worst = std::max(worst, drop);
      others += " " + lp + " " + fmt("%+.4f", -drop);
    }
    gains.push_back(after - before);
    worst_drops.push_back(worst);
    pass = pass && after - before >= 0.02 && worst <= 0.02;
    note("seed " + std::to_string(s) + ": " + held + " test spearman " + fmt("%.4f", before) + " -> " +
         fmt("%.4f", after) + "; other shards" + others);
  }
  verdict(7, pass, "few-shot adaptation on a held-out shard",
          "500 examples, lr 1e-5, 3 epochs: gain " + join(gains, "%+.4f") + ", worst other-shard drop " +
              join(worst_drops, "%+.4f") + " (bar gain >= 0.02, drop <= 0.02, every seed)");
}

MemberPredictions member_of(const QeModel& model, std::span<const QEExample> data, const std::string& id) {
  MemberPredictions m;
  m.id = id;
  for (const auto& p : model.predict(data)) {
    m.scores.push_back(p.sentence_score);
    m.logits.push_back(p.word_logits);
    m.tags.push_back(p.word_tags);
  }
  return m;
}

MemberPredictions subset(const MemberPredictions& m, const std::vector<std::size_t>& rows) {
  MemberPredictions out;
  out.id = m.id;
  for (std::size_t r : rows) {
    out.scores.push_back(m.scores[r]);
    out.logits.push_back(m.logits[r]);
    out.tags.push_back(m.tags[r]);
  }
  return out;
}

double single_metric(EnsembleStrategy strategy, const MemberPredictions& m, std::span<const QEExample> gold) {
  EnsembleOutput out;
  if (strategy == EnsembleStrategy::kScores) {
    out.scores = m.scores;
  } else if (strategy == EnsembleStrategy::kLogits) {
    for (const auto& l : m.logits) out.tags.push_back(tags_from_logits(l));
  } else {
    out.tags = m.tags;
  }
  return ensemble_metric(strategy, out, gold);
}

void ensemble_dominance(const Corpus& c, Models& models) {
  std::vector<const QeModel*> ms;
  for (auto s : kSeeds) ms.push_back(&models.get(c, Arm::kMulti, s).result.model);
  std::vector<MemberPredictions> dev_members;
  for (std::size_t i = 0; i < ms.size(); ++i) dev_members.push_back(member_of(*ms[i], c.dev, "seed" + std::to_string(i + 1)));

  // Hard guarantee: per language pair, never below the best single member.
  std::size_t checks = 0, violations = 0, fallbacks = 0;
  std::optional<EnsembleSpec> logit_spec;
  for (auto strategy : {EnsembleStrategy::kScores, EnsembleStrategy::kLogits, EnsembleStrategy::kTags}) {
    const EnsembleSpec spec = search_weights(dev_members, c.dev, strategy, SearchConfig{});
    if (strategy == EnsembleStrategy::kLogits) logit_spec = spec;
    for (const auto& lp : language_pairs(c.dev)) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < c.dev.size(); ++i) {
        if (c.dev[i].lp == lp) rows.push_back(i);
      }
      std::vector<QEExample> gold;
      for (std::size_t r : rows) gold.push_back(c.dev[r]);
      std::vector<MemberPredictions> sub;
      double best_single = -2;
      for (const auto& m : dev_members) {
        sub.push_back(subset(m, rows));
        best_single = std::max(best_single, single_metric(strategy, sub.back(), gold));
      }
      const double ens = ensemble_metric(strategy, apply_ensemble(spec, sub, gold), gold);
      ++checks;
      violations += !(ens >= best_single);
      fallbacks += spec.weights_for(lp).fallback;
    }
  }

  // Logit ensemble on fresh held-out splits.
  int wins = 0;
  std::vector<double> ens_mcc, member_mcc;
  const std::vector<std::size_t> main{0, 1, 2};
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    const auto held = c.task.generate_mixed(main, 500, 10 + trial);
    std::vector<MemberPredictions> members;
    std::vector<double> singles;
    for (std::size_t i = 0; i < ms.size(); ++i) {
      members.push_back(member_of(*ms[i], held, "seed" + std::to_string(i + 1)));
      singles.push_back(single_metric(EnsembleStrategy::kLogits, members.back(), held));
    }
    const double ens = ensemble_metric(EnsembleStrategy::kLogits, apply_ensemble(*logit_spec, members, held), held);
    ens_mcc.push_back(ens);
    member_mcc.push_back(mean(singles));
    wins += ens > mean(singles);
  }
  const bool pass = violations == 0 && wins >= 2;
  verdict(8, pass, "ensemble dominance",
          "search >= best single member in " + std::to_string(checks - violations) + "/" + std::to_string(checks) +
              " (strategy, lp) checks (" + std::to_string(fallbacks) + " fallbacks); logit ensemble MCC " +
              join(ens_mcc, "%.4f") + " vs mean member " + join(member_mcc, "%.4f") + ", wins " +
              std::to_string(wins) + "/3 (bar 2/3)");
}

void explainer_signal(const Corpus& c, Models& models) {
  std::vector<QEExample> rank_set;
  for (const auto& e : c.dev) {
    if (std::count(e.tags->begin(), e.tags->end(), Tag::kBad) > 0 && rank_set.size() < 150) rank_set.push_back(e);
  }
  std::vector<QEExample> eval_set;
  for (const auto& e : c.test) {
    if (std::count(e.tags->begin(), e.tags->end(), Tag::kBad) > 0 && eval_set.size() < 20) eval_set.push_back(e);
  }
  std::vector<double> grad_r, norm_r, baseline;
  for (const auto& e : eval_set) {
    const auto k = static_cast<double>(std::count(e.tags->begin(), e.tags->end(), Tag::kBad));
    baseline.push_back(k / static_cast<double>(e.tags->size()));
  }
  for (auto s : kSeeds) {
    const QeModel& model = models.get(c, Arm::kMulti, s).result.model;
    std::string heads_note;
    for (auto method : {ExplainMethod::kAttnGradNorm, ExplainMethod::kAttnNorm}) {
      ExplainOptions opt;
      opt.method = method;
      const auto ranking = rank_heads(model, rank_set, opt);
      const auto heads = top_heads(ranking, 5);
      const auto ex = explain_examples(model, eval_set, heads, opt);
      std::vector<double> r;
      for (std::size_t i = 0; i < eval_set.size(); ++i) r.push_back(metrics::recall_at_k(ex[i].word_scores, *eval_set[i].tags));
      (method == ExplainMethod::kAttnGradNorm ? grad_r : norm_r).push_back(mean(r));
      heads_note += std::string(" ") + std::string(to_string(method)) + " top heads";
      for (const auto& h : heads) heads_note += " " + to_string(h);
    }
    note("seed " + std::to_string(s) + ": R@K gradnorm " + fmt("%.3f", grad_r.back()) + ", norm " +
         fmt("%.3f", norm_r.back()) + ";" + heads_note);
  }
  const double base = mean(baseline);
  const double g = mean(grad_r);
  verdict(9, g >= base + 0.15, "explainer signal (top-5 Attn x GradNorm)",
          "mean R@K " + fmt("%.3f", g) + " (" + join(grad_r) + ") vs random " + fmt("%.3f", base) +
              " + 0.15; Attn x Norm " + fmt("%.3f", mean(norm_r)) + " (" + join(norm_r) + "); gradnorm " +
              (g >= mean(norm_r) ? ">=" : "<") + " norm");
}

// ---- 10: CLI determinism ----

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

void cli_determinism(const std::string& cli, const fs::path& work) {
  const fs::path cur = work / "cli";
  const std::vector<std::string> commands{
      "gen-synthetic --out syn --train-size 120 --dev-size 60 --test-size 40 --holdout-size 60 "
      "--holdout-test-size 20",
      "train --train syn/train.tsv --dev syn/dev.tsv --vocab syn/vocab.txt --out m1 --layers 2 --heads 2 "
      "--dim 16 --epochs 2 --schema tags",
      "train --train syn/train.tsv --dev syn/dev.tsv --vocab syn/vocab.txt --out m2 --layers 2 --heads 2 "
      "--dim 16 --epochs 2 --schema tags --model-seed 2 --seed 2 --mix head",
      "finetune --checkpoint m1/checkpoint.json --data syn/holdout.tsv --monitor syn/dev.tsv --out ft "
      "--epochs 1 --schema tags",
      "predict --checkpoint m1/checkpoint.json --data syn/dev.tsv --out p1",
      "predict --checkpoint m2/checkpoint.json --data syn/dev.tsv --out p2",
      "rank-heads --checkpoint m1/checkpoint.json --dev syn/dev.tsv --out heads.json --schema tags",
      "rank-heads --checkpoint m2/checkpoint.json --by-mix --out heads_mix.json",
      "explain --checkpoint m1/checkpoint.json --data syn/test.tsv --heads top3 --ranking heads.json --out ex",
      "explain --checkpoint m1/checkpoint.json --data syn/test.tsv --heads 0:0,1:1 --method attn_norm --out ex_norm",
      "ensemble --member p1 --member p2 --dev syn/dev.tsv --out ens_scores --strategy scores --schema tags",
      "ensemble --member p1 --member p2 --dev syn/dev.tsv --out ens_logits --strategy logits --schema tags",
      "ensemble --member p1 --member p2 --dev syn/dev.tsv --out ens_tags --strategy tags --alpha 2.0 --schema tags",
      "evaluate --gold syn/dev.tsv --pred p1 --out report.json --tsv report.tsv --schema tags",
      "evaluate --gold syn/test.tsv --word-scores ex/explanations.txt --out explain_report.json --schema tags"};
  std::vector<std::map<std::string, std::string>> trees;
  std::string failed;
  for (int round = 0; round < 2 && failed.empty(); ++round) {
    fs::remove_all(cur);
    fs::create_directories(cur);
    for (const auto& cmd : commands) {
      const std::string line = "cd \"" + cur.string() + "\" && \"" + cli + "\" -q " + cmd + " > stdout_" +
                               std::to_string(&cmd - commands.data()) + ".txt 2>/dev/null";
      if (std::system(line.c_str()) != 0) {
        failed = cmd.substr(0, cmd.find(' '));
        break;
      }
    }
    trees.push_back(read_tree(cur));
  }
  std::size_t differing = 0;
  std::string first_diff;
  if (failed.empty()) {
    for (const auto& [name, content] : trees[0]) {
      auto it = trees[1].find(name);
      if (it == trees[1].end() || it->second != content) {
        ++differing;
        if (first_diff.empty()) first_diff = name;
      }
    }
    differing += trees[1].size() > trees[0].size() ? trees[1].size() - trees[0].size() : 0;
  }
  const bool pass = failed.empty() && differing == 0;
  verdict(10, pass, "CLI determinism",
          failed.empty() ? std::to_string(commands.size()) + " commands run twice, " +
                               std::to_string(trees[0].size()) + " output files, " + std::to_string(differing) +
                               " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")")
                         : "command '" + failed + "' exited nonzero");
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  fs::path work = fs::temp_directory_path() / "kiwiqe_acceptance";
  std::set<int> only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") {
      cli = argv[i + 1];
    } else if (flag == "--work") {
      work = argv[i + 1];
    } else if (flag == "--only") {
      std::stringstream ss(argv[i + 1]);
      for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "unknown flag %s\n", flag.c_str());
      return 2;
    }
  }
  if (!cli.empty()) cli = fs::absolute(cli).string();
  work = fs::absolute(work);
  auto wanted = [&](int id) { return only.empty() || only.count(id); };
  set_log_level(LogLevel::kQuiet);
  fs::create_directories(work);
  const auto t0 = Clock::now();

  if (wanted(1)) autodiff_graphs();
  if (wanted(2)) sparsemax_oracle();
  if (wanted(3)) loss_algebra();
  if (wanted(4)) metric_oracles();
  if (wanted(5) || wanted(6) || wanted(7) || wanted(8) || wanted(9)) {
    const Corpus corpus = make_corpus();
    Models models;
    if (wanted(5)) end_to_end(corpus, models);
    if (wanted(6)) multitask_benefit(corpus, models);
    if (wanted(7)) fewshot(corpus, models);
    if (wanted(8)) ensemble_dominance(corpus, models);
    if (wanted(9)) explainer_signal(corpus, models);
  }
  if (wanted(10)) {
    if (cli.empty()) {
      verdict(10, false, "CLI determinism", "no --cli given");
    } else {
      cli_determinism(cli, work);
    }
  }
  std::printf("%d failed, %.0f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
