#include <gtest/gtest.h>

#include "kiwiqe/ensemble.hpp"
#include "kiwiqe/errors.hpp"
#include "kiwiqe/metrics.hpp"
#include "kiwiqe/rng.hpp"

using namespace kiwiqe;
using enum Tag;

namespace {

std::vector<QEExample> gold_set(Rng& rng, std::size_t n, std::vector<std::string> lps) {
  std::vector<QEExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    QEExample e;
    e.lp = lps[i % lps.size()];
    e.source = "s";
    e.target = "t";
    e.score = rng.uniform(-1, 1);
    std::vector<Tag> tags(2 + rng.below(4));
    for (auto& t : tags) t = rng.uniform() < 0.3 ? kBad : kOk;
    e.tags = tags;
    out.push_back(e);
  }
  return out;
}

MemberPredictions noisy_member(const std::string& id, const std::vector<QEExample>& gold, double noise, Rng& rng) {
  MemberPredictions m;
  m.id = id;
  for (const auto& e : gold) {
    m.scores.push_back(e.score + noise * rng.normal());
    Tensor logits = Tensor::matrix(e.tags->size(), 2);
    std::vector<Tag> tags;
    for (std::size_t w = 0; w < e.tags->size(); ++w) {
      const double signal = (*e.tags)[w] == kBad ? 1.0 : -1.0;
      logits(w, 1) = signal + noise * 2 * rng.normal();
      tags.push_back(logits(w, 1) > logits(w, 0) ? kBad : kOk);
    }
    m.logits.push_back(logits);
    m.tags.push_back(tags);
  }
  return m;
}

}  // namespace

TEST(EnsembleScores, Examples) {
  EXPECT_EQ(ensemble_scores(std::vector<double>{0.7}, std::vector<double>{1}), 0.7);
  EXPECT_EQ(ensemble_scores(std::vector<double>{2, 0}, std::vector<double>{0.5, 0.5}), 1.0);
  EXPECT_EQ(ensemble_scores(std::vector<double>{2, 5}, std::vector<double>{1, 0}), 2.0);
  EXPECT_THROW(ensemble_scores(std::vector<double>{2, 5}, std::vector<double>{0, 0}), ContractError);
  EXPECT_THROW(ensemble_scores(std::vector<double>{2, 5}, std::vector<double>{1}), DimensionError);
}

TEST(EnsembleLogits, Examples) {
  const std::vector<Tensor> one{Tensor::from_rows({{0.2, 1.0}, {1.0, -1.0}})};
  EXPECT_EQ(tags_from_logits(ensemble_logits(one, std::vector<double>{1})), (std::vector<Tag>{kBad, kOk}));
  const std::vector<Tensor> two{Tensor::from_rows({{2, -2}}), Tensor::from_rows({{0, 0}})};
  EXPECT_EQ(ensemble_logits(two, std::vector<double>{0.5, 0.5}), Tensor::from_rows({{1, -1}}));
  EXPECT_THROW(ensemble_logits(two, std::vector<double>{0, 0}), ContractError);
  const std::vector<Tensor> mismatch{Tensor::from_rows({{2, -2}}), Tensor::matrix(2, 2)};
  EXPECT_THROW(ensemble_logits(mismatch, std::vector<double>{1, 1}), DimensionError);
}

TEST(EnsembleTags, Examples) {
  const std::vector<std::vector<Tag>> bad{{kBad}, {kBad}};
  EXPECT_EQ(ensemble_tags(bad, std::vector<double>{0.3, 0.9}, 1), (std::vector<Tag>{kBad}));
  const std::vector<std::vector<Tag>> split{{kBad}, {kOk}};
  EXPECT_EQ(ensemble_tags(split, std::vector<double>{0.5, 0.5}, 1), (std::vector<Tag>{kBad}));
  // alpha 2 with 0.3 of the weight on BAD gives s = 0.6.
  EXPECT_EQ(ensemble_tags(split, std::vector<double>{0.3, 0.7}, 2), (std::vector<Tag>{kBad}));
  EXPECT_EQ(ensemble_tags(split, std::vector<double>{0.3, 0.7}, 1), (std::vector<Tag>{kOk}));
  const std::vector<std::vector<Tag>> ragged{{kBad}, {kOk, kOk}};
  EXPECT_THROW(ensemble_tags(ragged, std::vector<double>{1, 1}, 1), DimensionError);
}

TEST(EnsembleTags, UnanimousMembersReproduceTags) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tag> t(1 + rng.below(8));
    for (auto& x : t) x = rng.below(2) ? kBad : kOk;
    const std::vector<std::vector<Tag>> members(1 + rng.below(4), t);
    std::vector<double> w(members.size());
    for (double& x : w) x = rng.uniform(0.1, 1);
    ASSERT_EQ(ensemble_tags(members, w, 1.0), t);
  }
}

TEST(Ensemble, InvariantToWeightRescaling) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + rng.below(5), n = 1 + rng.below(6);
    std::vector<double> w(k), xs(k);
    std::vector<Tensor> ls;
    std::vector<std::vector<Tag>> ts;
    for (std::size_t m = 0; m < k; ++m) {
      w[m] = rng.uniform(0.05, 1);
      xs[m] = rng.uniform(-2, 2);
      Tensor l = Tensor::matrix(n, 2);
      for (double& v : l.values()) v = rng.uniform(-3, 3);
      ls.push_back(l);
      std::vector<Tag> t(n);
      for (auto& x : t) x = rng.below(2) ? kBad : kOk;
      ts.push_back(t);
    }
    // Powers of two keep the rescaled weighted means bit-identical.
    const double c = std::ldexp(1.0, static_cast<int>(rng.below(13)) - 6);
    std::vector<double> cw = w;
    for (double& x : cw) x *= c;
    ASSERT_EQ(ensemble_scores(xs, w), ensemble_scores(xs, cw));
    ASSERT_EQ(tags_from_logits(ensemble_logits(ls, w)), tags_from_logits(ensemble_logits(ls, cw)));
    ASSERT_EQ(ensemble_tags(ts, w, 1.5), ensemble_tags(ts, cw, 1.5));
    const std::vector<double> equal(k, 0.37);
    double mean = 0;
    for (double x : xs) mean += x;
    ASSERT_NEAR(ensemble_scores(xs, equal), mean / static_cast<double>(k), 1e-12);
  }
}

TEST(SearchWeights, ConcentratesOnPerfectMember) {
  Rng rng(5);
  const auto gold = gold_set(rng, 60, {"aa-bb"});
  MemberPredictions perfect = noisy_member("perfect", gold, 0.0, rng);
  MemberPredictions random;
  random.id = "random";
  for (std::size_t i = 0; i < gold.size(); ++i) random.scores.push_back(rng.uniform(-1, 1));
  const std::vector<MemberPredictions> members{random, perfect};
  const auto spec = search_weights(members, gold, EnsembleStrategy::kScores, {});
  const LpWeights& w = spec.weights_for("aa-bb");
  EXPECT_GT(w.weights[1], w.weights[0]);
  EXPECT_DOUBLE_EQ(w.dev_metric, 1.0);
  const auto out = apply_ensemble(spec, members, gold);
  EXPECT_DOUBLE_EQ(ensemble_metric(EnsembleStrategy::kScores, out, gold), 1.0);
}

TEST(SearchWeights, NeverBelowBestSingleMember) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Rng rng(seed);
    const auto gold = gold_set(rng, 40, {"aa-bb", "cc-dd"});
    std::vector<MemberPredictions> members;
    for (int m = 0; m < 3; ++m) members.push_back(noisy_member("m" + std::to_string(m), gold, 0.3 + 0.4 * m, rng));
    for (auto strategy : {EnsembleStrategy::kScores, EnsembleStrategy::kLogits, EnsembleStrategy::kTags}) {
      SearchConfig cfg;
      cfg.budget = 16;
      cfg.seed = seed;
      const auto spec = search_weights(members, gold, strategy, cfg);
      for (const auto& [lp, w] : spec.per_lp) {
        std::vector<QEExample> subset;
        for (const auto& e : gold) {
          if (lp == kPooledLp || e.lp == lp) subset.push_back(e);
        }
        double best_single = -2;
        for (const auto& m : members) {
          EnsembleOutput single;
          for (std::size_t i = 0; i < gold.size(); ++i) {
            if (lp != kPooledLp && gold[i].lp != lp) continue;
            single.scores.push_back(m.scores[i]);
            single.tags.push_back(strategy == EnsembleStrategy::kLogits ? tags_from_logits(m.logits[i]) : m.tags[i]);
          }
          best_single = std::max(best_single, ensemble_metric(strategy, single, subset));
        }
        ASSERT_GE(w.dev_metric, best_single) << lp << " " << to_string(strategy);
      }
    }
  }
}

TEST(SearchWeights, BudgetZeroFallsBackToBestSingle) {
  Rng rng(6);
  const auto gold = gold_set(rng, 30, {"aa-bb"});
  const std::vector<MemberPredictions> members{noisy_member("weak", gold, 1.5, rng),
                                               noisy_member("strong", gold, 0.05, rng)};
  SearchConfig cfg;
  cfg.budget = 0;
  const auto spec = search_weights(members, gold, EnsembleStrategy::kScores, cfg);
  const auto& w = spec.weights_for("aa-bb");
  EXPECT_TRUE(w.fallback);
  EXPECT_EQ(w.weights, (std::vector<double>{0, 1}));
}

TEST(SearchWeights, IdenticalMembersAndDeterminism) {
  Rng rng(7);
  const auto gold = gold_set(rng, 30, {"aa-bb", "cc-dd"});
  const MemberPredictions m = noisy_member("a", gold, 0.5, rng);
  MemberPredictions m2 = m;
  m2.id = "b";
  const std::vector<MemberPredictions> members{m, m2};
  SearchConfig cfg;
  cfg.budget = 20;
  const auto a = search_weights(members, gold, EnsembleStrategy::kTags, cfg);
  const auto b = search_weights(members, gold, EnsembleStrategy::kTags, cfg);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  const auto single = search_weights(std::span(&m, 1), gold, EnsembleStrategy::kScores, cfg);
  const auto both = search_weights(members, gold, EnsembleStrategy::kScores, cfg);
  for (const auto& [lp, w] : both.per_lp) EXPECT_DOUBLE_EQ(w.dev_metric, single.per_lp.at(lp).dev_metric);
  EXPECT_THROW(search_weights(members, {}, EnsembleStrategy::kScores, cfg), ContractError);
}

TEST(EnsembleSpec, JsonRoundTripAndPooledFallback) {
  EnsembleSpec s;
  s.members = {"x", "y"};
  s.strategy = EnsembleStrategy::kTags;
  s.per_lp["en-de"] = LpWeights{{0.25, 0.75}, 2.0, 0.5, false};
  s.per_lp[kPooledLp] = LpWeights{{1, 0}, 1.0, 0.4, true};
  const auto back = EnsembleSpec::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.weights_for("en-de").alpha, 2.0);
  EXPECT_EQ(back.weights_for("xx-yy").weights, (std::vector<double>{1, 0}));
  auto j = s.to_json();
  j["schema_version"] = 7;
  EXPECT_THROW(EnsembleSpec::from_json(j), ParseError);
  EXPECT_EQ(parse_ensemble_strategy("logits"), EnsembleStrategy::kLogits);
  EXPECT_THROW(parse_ensemble_strategy("vote"), ConfigError);
}
