#include <gtest/gtest.h>

#include <cmath>

#include "kiwiqe/checkpoint.hpp"
#include "kiwiqe/errors.hpp"
#include "kiwiqe/qe_model.hpp"
#include "oracles.hpp"

using namespace kiwiqe;

namespace {

QEExample tagged(std::string src, std::string mt, double score, std::vector<Tag> tags) {
  QEExample e;
  e.lp = "en-de";
  e.source = std::move(src);
  e.target = std::move(mt);
  e.score = score;
  e.tags = std::move(tags);
  return e;
}

std::vector<QEExample> toy_data() {
  using enum Tag;
  return {tagged("the cat sat", "die katze sass", 0.3, {kOk, kBad, kOk}),
          tagged("a dog", "ein hund", -0.7, {kOk, kOk}),
          tagged("hello", "hallo welt", 1.1, {kBad, kBad})};
}

ModelConfig tiny_config(MixMode mix) {
  ModelConfig c;
  c.encoder.num_layers = 2;
  c.encoder.num_heads = 2;
  c.encoder.model_dim = 4;
  c.encoder.ffn_dim = 4;
  c.encoder.max_positions = 16;
  c.encoder.seed = 5;
  c.mix = mix;
  return c;
}

QeModel tiny_model(MixMode mix = MixMode::kScalar) {
  const auto data = toy_data();
  return QeModel(tiny_config(mix), build_vocabulary(data, TokenizerConfig{}));
}

EncoderTrace fake_trace(std::size_t layers, std::size_t heads, std::size_t n, std::size_t d, Rng& rng) {
  EncoderTrace t;
  for (std::size_t l = 0; l <= layers; ++l) t.hidden_states.push_back(oracle::random_tensor(rng, {n, d}));
  t.attentions.resize(layers);
  t.head_outputs.resize(layers);
  t.values.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      t.attentions[l].push_back(Tensor::matrix(n, n, 1.0 / static_cast<double>(n)));
      t.head_outputs[l].push_back(oracle::random_tensor(rng, {n, d}));
      t.values[l].push_back(oracle::random_tensor(rng, {n, d / heads}));
    }
  }
  return t;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "entry " << i;
}

ParameterSet head_params(std::size_t d, double w1, double b1, double w2, double b2) {
  ParameterSet p;
  p.set("sentence.w1", Tensor::matrix(d, d, w1));
  p.set("sentence.b1", Tensor::vector(std::vector<double>(d, b1)));
  p.set("sentence.w2", Tensor::matrix(d, 1, w2));
  p.set("sentence.b2", Tensor::vector({b2}));
  p.set("word.w", Tensor::matrix(d, 2));
  p.set("word.b", Tensor::vector({0, 0}));
  return p;
}

}  // namespace

TEST(ScalarMix, OneHotSelectsLayer) {
  Rng rng(1);
  const auto tr = fake_trace(3, 2, 5, 4, rng);
  ScalarMixParams p;
  p.phi = {0, 0, 5, 0};
  EXPECT_EQ(scalar_mix(tr, p), tr.hidden_states[2]);
}

TEST(ScalarMix, UniformSparsemaxWithLambdaTwo) {
  Rng rng(2);
  const auto tr = fake_trace(1, 2, 3, 4, rng);
  ScalarMixParams p;
  p.phi = {0, 0};
  p.lambda = 2;
  const Tensor out = scalar_mix(tr, p);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_DOUBLE_EQ(out[i], tr.hidden_states[0][i] + tr.hidden_states[1][i]);
  }
}

TEST(ScalarMix, ZeroLambdaAndLinearity) {
  Rng rng(3);
  const auto tr = fake_trace(2, 2, 3, 4, rng);
  ScalarMixParams p;
  p.phi = {0.3, -0.1, 0.2};
  p.transform = SimplexTransform::kSoftmax;
  p.lambda = 0;
  EXPECT_EQ(scalar_mix(tr, p), Tensor::matrix(3, 4));
  p.lambda = 1;
  const Tensor one = scalar_mix(tr, p);
  p.lambda = -2.5;
  const Tensor scaled = scalar_mix(tr, p);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(scaled[i], -2.5 * one[i], 1e-12);
  p.phi = {0, 0};
  EXPECT_THROW(scalar_mix(tr, p), DimensionError);
}

TEST(HeadMix, OneHotSelectsSingleHead) {
  Rng rng(4);
  const auto tr = fake_trace(2, 3, 4, 6, rng);
  HeadMixParams p;
  p.phi = {0, 0, 4};
  p.theta = {{0, 0, 0}, {0, 3, 0}};
  EXPECT_EQ(head_mix_forward(tr, p), tr.head_outputs[1][1]);
}

TEST(HeadMix, UniformSoftmaxAveragesHeads) {
  Rng rng(5);
  const auto tr = fake_trace(1, 4, 3, 8, rng);
  HeadMixParams p;
  p.transform = SimplexTransform::kSoftmax;
  p.phi = {-1e3, 0};  // beta = (0, 1) to double precision
  p.theta = {{0.7, 0.7, 0.7, 0.7}};
  Tensor expected = Tensor::matrix(3, 8);
  for (const auto& h : tr.head_outputs[0]) {
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += h[i] / 4;
  }
  expect_near(head_mix_forward(tr, p), expected, 1e-14);
}

TEST(HeadMix, DominantThetaIsOneHotUnderSparsemax) {
  HeadMixParams p;
  p.phi = {0, 0};
  p.theta = {{0.2, 1.4, 0.3}};
  const auto g = p.gamma();
  EXPECT_EQ(g[0], (std::vector<double>{0, 1, 0}));
}

TEST(HeadMix, LayerZeroTermIsEmbedding) {
  Rng rng(6);
  const auto tr = fake_trace(1, 2, 3, 4, rng);
  HeadMixParams p;
  p.phi = {3, 0};
  p.theta = {{0, 0}};
  EXPECT_EQ(head_mix_forward(tr, p), tr.hidden_states[0]);
}

TEST(SentenceHead, ZeroWeightsGiveBias) {
  Rng rng(7);
  const Tensor h = oracle::random_tensor(rng, {4, 3});
  EXPECT_EQ(sentence_head(h, 0, head_params(3, 0, 0, 0, 0.75)), 0.75);
}

TEST(SentenceHead, OneDimensionalHandValue) {
  const Tensor h = Tensor::from_rows({{0.25}, {9}});
  // 3 * tanh(2 * 0.25 + 0.5) - 1
  EXPECT_DOUBLE_EQ(sentence_head(h, 0, head_params(1, 2, 0.5, 3, -1)), 3 * std::tanh(1.0) - 1);
  EXPECT_THROW(sentence_head(h, 2, head_params(1, 2, 0.5, 3, -1)), DimensionError);
}

TEST(WordHead, ZeroProjectionIsUniform) {
  Rng rng(8);
  const Tensor h = oracle::random_tensor(rng, {5, 3});
  const std::size_t idx[] = {1, 3};
  const Tensor logits = word_head(h, idx, head_params(3, 0, 0, 0, 0));
  for (std::size_t i = 0; i < 2; ++i) {
    const auto p = softmax(logits.row(i));
    EXPECT_EQ(p, (std::vector<double>{0.5, 0.5}));
  }
  EXPECT_EQ(word_head(h, {}, head_params(3, 0, 0, 0, 0)).size(), 0u);
  const std::size_t bad[] = {5};
  EXPECT_THROW(word_head(h, bad, head_params(3, 0, 0, 0, 0)), DimensionError);
}

TEST(WordHead, LocalToFirstPieceRows) {
  Rng rng(9);
  ParameterSet p = head_params(4, 0, 0, 0, 0);
  p.at("word.w") = oracle::random_tensor(rng, {4, 2});
  p.at("word.b") = oracle::random_tensor(rng, {2});
  const Tensor h = oracle::random_tensor(rng, {7, 4});
  const std::size_t idx[] = {1, 2, 5};
  const Tensor base = word_head(h, idx, p);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor other = h;
    const std::size_t row = std::vector<std::size_t>{0, 3, 4, 6}[rng.below(4)];
    for (double& v : other.row(row)) v = rng.uniform(-5, 5);
    std::swap_ranges(other.row(0).begin(), other.row(0).end(), other.row(6).begin());
    EXPECT_EQ(word_head(other, idx, p), base);
  }
  Tensor moved = h;
  for (double& v : moved.row(2)) v += 1;
  const Tensor changed = word_head(moved, idx, p);
  EXPECT_EQ(changed.row(0)[0], base.row(0)[0]);
  EXPECT_EQ(changed.row(2)[1], base.row(2)[1]);
  EXPECT_NE(changed.row(1)[0], base.row(1)[0]);
}

TEST(SentenceLoss, Examples) {
  EXPECT_EQ(sentence_loss(0.3, 0.3), 0.0);
  EXPECT_EQ(sentence_loss(1, 0), 0.5);
  EXPECT_EQ(sentence_loss(-2, 2), 8.0);
}

TEST(WordLoss, Examples) {
  using enum Tag;
  const std::array<double, 2> unit{1, 1};
  EXPECT_EQ(word_loss(std::vector<Tag>{kOk, kBad}, Tensor::from_rows({{1, 0}, {0, 1}}), unit), 0.0);
  const double l = word_loss(std::vector<Tag>{kOk, kBad}, Tensor::from_rows({{0.5, 0.5}, {0.75, 0.25}}), unit);
  EXPECT_DOUBLE_EQ(l, (std::log(2.0) + std::log(4.0)) / 2);
  EXPECT_NEAR(l, 1.0397, 5e-5);
  EXPECT_EQ(word_loss(std::vector<Tag>{}, Tensor::matrix(0, 2), unit), 0.0);
  EXPECT_THROW(word_loss(std::vector<Tag>{kOk}, Tensor::matrix(2, 2, 0.5), unit), DimensionError);
}

TEST(WordLoss, DoublingBadWeightDoublesOnlyBadTerms) {
  using enum Tag;
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<Tag> gold(n);
    Tensor probs = Tensor::matrix(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = rng.below(2) ? kBad : kOk;
      probs(i, 1) = rng.uniform(0.01, 0.99);
      probs(i, 0) = 1 - probs(i, 1);
    }
    const double w_ok = rng.uniform(0.5, 2), w_bad = rng.uniform(0.5, 2);
    const double base = word_loss(gold, probs, {w_ok, w_bad});
    const double doubled = word_loss(gold, probs, {w_ok, 2 * w_bad});
    const double ok_only = word_loss(gold, probs, {w_ok, 0});
    EXPECT_NEAR(doubled - base, base - ok_only, 1e-12);
    EXPECT_GE(base, 0.0);
  }
}

TEST(CombinedLoss, Examples) {
  LossConfig c;
  c.lambda_sent = c.lambda_word = 0.5;
  EXPECT_EQ(combined_loss(2.0, 4.0, c), 3.0);
}

TEST(CombinedLoss, ExactAlgebraAndPureReductions) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const double ls = rng.uniform(0, 10), lw = rng.uniform(0, 10);
    LossConfig c;
    c.lambda_sent = rng.uniform(0, 3);
    c.lambda_word = rng.uniform(0, 3);
    ASSERT_EQ(combined_loss(ls, lw, c), c.lambda_sent * ls + c.lambda_word * lw);
    c.lambda_sent = 1;
    c.lambda_word = 0;
    ASSERT_EQ(combined_loss(ls, lw, c), ls);
    c.lambda_sent = 0;
    c.lambda_word = 1;
    ASSERT_EQ(combined_loss(ls, lw, c), lw);
  }
}

TEST(CombinedLoss, RequiresTagsForWordTerm) {
  QEExample e = toy_data()[0];
  e.tags.reset();
  Prediction p;
  p.word_probs = Tensor::matrix(3, 2, 0.5);
  LossConfig c;
  EXPECT_THROW(combined_loss(e, p, c), ContractError);
  c.lambda_word = 0;
  EXPECT_EQ(combined_loss(e, p, c), sentence_loss(e.score, 0.0));
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.lambda_sent = c.lambda_word = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.class_weights = {1, 0};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(QeModel, GraphLossMatchesPlainLoss) {
  for (MixMode mix : {MixMode::kScalar, MixMode::kHead}) {
    const QeModel model = tiny_model(mix);
    const auto data = toy_data();
    LossConfig cfg;
    cfg.lambda_sent = 0.7;
    cfg.lambda_word = 1.3;
    cfg.class_weights = {1.0, 2.5};
    const auto preds = model.predict(data);
    double expected = 0;
    for (std::size_t i = 0; i < data.size(); ++i) expected += combined_loss(data[i], preds[i], cfg);
    expected /= static_cast<double>(data.size());

    std::vector<TokenizedInput> inputs;
    for (const auto& e : data) inputs.push_back(model.tokenize(e));
    ad::Tape tape;
    const Binding bound(tape, model.params(), false);
    const auto g = model.forward(bound, inputs);
    EXPECT_NEAR(model.loss(g, data, cfg).value().item(), expected, 1e-12);
  }
}

TEST(QeModel, PlainHeadsMatchBatchedForward) {
  const QeModel model = tiny_model();
  const auto data = toy_data();
  const auto preds = model.predict(data);
  const auto traces = model.traces(data, false);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto in = model.tokenize(data[i]);
    const Tensor h = scalar_mix(traces[i], model.scalar_mix_params());
    EXPECT_NEAR(sentence_head(h, in.cls_index, model.params()), preds[i].sentence_score, 1e-12);
    expect_near(word_head(h, in.first_piece_index, model.params()), preds[i].word_logits, 1e-12);
    for (std::size_t w = 0; w < preds[i].word_probs.rows(); ++w) {
      EXPECT_NEAR(preds[i].word_probs(w, 0) + preds[i].word_probs(w, 1), 1.0, 1e-12);
      EXPECT_EQ(preds[i].word_tags[w], preds[i].word_probs(w, 1) >= 0.5 ? Tag::kBad : Tag::kOk);
    }
  }
}

TEST(QeModel, SentenceGradientOnlyReachesClsRow) {
  const QeModel model = tiny_model();
  const auto data = toy_data();
  const std::vector<TokenizedInput> inputs{model.tokenize(data[0])};
  ad::Tape tape;
  const Binding bound(tape, model.params(), true);
  const auto g = model.forward(bound, inputs);
  tape.backward(ad::sum(g.scores));
  const Tensor grad = tape.grad(g.h_mix);
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    double norm = 0;
    for (double v : grad.row(r)) norm += v * v;
    if (r == inputs[0].cls_index) {
      EXPECT_GT(norm, 0.0);
    } else {
      EXPECT_EQ(norm, 0.0);
    }
  }
}

TEST(QeModel, CombinedLossGradientMatchesFiniteDifferences) {
  for (MixMode mix : {MixMode::kScalar, MixMode::kHead}) {
    QeModel model = tiny_model(mix);
    // Keep the mix weights away from sparsemax support changes.
    Rng rng(13);
    model.params().at("mix.lambda") = Tensor::scalar(1.3);
    model.params().at("mix.phi") = Tensor::vector({0.1, 0.25, -0.05});
    if (mix == MixMode::kHead) model.params().at("mix.theta") = Tensor::from_rows({{0.1, -0.2}, {0.3, 0.2}});
    const auto data = toy_data();
    LossConfig cfg;
    cfg.class_weights = {1.0, 3.0};
    std::vector<TokenizedInput> inputs;
    for (const auto& e : data) inputs.push_back(model.tokenize(e));

    auto loss_at = [&](const ParameterSet& p, ParameterSet* grads) {
      ad::Tape tape;
      const Binding bound(tape, p, grads != nullptr);
      const auto g = model.forward(bound, inputs);
      const ad::Var l = model.loss(g, data, cfg);
      if (grads) {
        tape.backward(l);
        *grads = bound.gradients();
      }
      return l.value().item();
    };
    ParameterSet grads;
    loss_at(model.params(), &grads);
    ParameterSet probe = model.params();
    double diff = 0, scale = 1e-8;
    const double h = 1e-5;
    for (auto& [name, t] : probe) {
      // Embedding rows of unused tokens have zero gradient; sample the rest.
      const std::size_t stride = name == "embed.tokens" || name == "embed.positions" ? 3 : 1;
      for (std::size_t i = 0; i < t.size(); i += stride) {
        const double x = t[i];
        t[i] = x + h;
        const double up = loss_at(probe, nullptr);
        t[i] = x - h;
        const double down = loss_at(probe, nullptr);
        t[i] = x;
        const double numeric = (up - down) / (2 * h);
        diff = std::max(diff, std::abs(numeric - grads.at(name)[i]));
        scale = std::max({scale, std::abs(numeric), std::abs(grads.at(name)[i])});
      }
    }
    EXPECT_LT(diff / scale, 1e-6) << to_string(mix);
  }
}

TEST(QeModel, ParamsConstructorValidates) {
  const QeModel model = tiny_model();
  ParameterSet p = model.params();
  EXPECT_NO_THROW(QeModel(model.config(), model.vocab(), p));
  p.at("word.w") = Tensor::matrix(3, 2);
  EXPECT_THROW(QeModel(model.config(), model.vocab(), p), DimensionError);
  ParameterSet q = model.params();
  q.set("extra", Tensor::scalar(1));
  EXPECT_THROW(QeModel(model.config(), model.vocab(), q), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  for (MixMode mix : {MixMode::kScalar, MixMode::kHead}) {
    const QeModel model = tiny_model(mix);
    LossConfig loss;
    loss.lambda_word = 0.25;
    const auto path = std::filesystem::temp_directory_path() / "kiwiqe_ckpt_test.json";
    save_checkpoint(path, model, loss);
    const Checkpoint ck = load_checkpoint(path);
    std::filesystem::remove(path);
    EXPECT_EQ(ck.loss, loss);
    EXPECT_EQ(ck.config, model.config());
    EXPECT_EQ(ck.params, model.params());
    const auto data = toy_data();
    const auto a = model.predict(data);
    const auto b = ck.model().predict(data);
    for (std::size_t i = 0; i < data.size(); ++i) {
      EXPECT_EQ(a[i].sentence_score, b[i].sentence_score);
      EXPECT_EQ(a[i].word_logits, b[i].word_logits);
    }
  }
}
