// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>
#include <random>

#include "attrda/attribution.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace attrda;
using namespace attrda::testing;

namespace {

EncoderConfig linear_config() {
  auto c = tiny_config(30);
  c.uniform_attention = true;
  c.activation = Activation::Identity;
  c.layer_norm = false;
  return c;
}

// Vocabulary whose ids 4.. are "t4", "t5", ... and all eligible.
Vocabulary plain_vocab(std::size_t terms) {
  CorpusSplit s, t;
  s.domain = Domain::Source;
  t.domain = Domain::Target;
  Document d;
  d.id = 1;
  d.label = Label::Hate;
  for (std::size_t i = 0; i < terms; ++i) {
    std::string w = "x";
    for (std::size_t k = i; k > 0 || w.size() == 1; k /= 26) {
      w.push_back(static_cast<char>('a' + k % 26));
      if (k < 26) break;
    }
    d.tokens.push_back(w);
  }
  s.train = {d};
  return Vocabulary::build(s, t, 1, Stoplist{});
}

std::vector<InstanceAttribution> random_instances(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TermId> term(4, static_cast<TermId>(vocab) - 1);
  std::uniform_int_distribution<int> len(1, 12), cls(0, 1);
  std::uniform_real_distribution<double> raw(-4.0, 4.0);
  std::vector<InstanceAttribution> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    out[j].doc_id = static_cast<DocId>(j);
    out[j].predicted = cls(rng);
    const int k = len(rng);
    for (int i = 0; i < k; ++i)
      out[j].occurrences.push_back({term(rng), static_cast<std::size_t>(i + 1), 1.0 / (1.0 + std::exp(-raw(rng)))});
  }
  return out;
}

}  // namespace

TEST_CASE("scaled attention on a one-layer one-head model matches alpha times the finite-difference gradient") {
  auto cfg = tiny_config();
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  const auto p = ModelParams::init(cfg, 31);
  const std::vector<TermId> ids = {3, 7, 12};
  const auto t = forward(p, ids);
  const auto scores = scaled_attention_scores(t, predicted_logit_attention_grads(p, t));
  REQUIRE(scores.size() == 3);
  const double h = 1e-5;
  for (Eigen::Index j = 0; j < 3; ++j) {
    AttentionGrads up = {{t.layers[0].alpha[0]}}, down = up;
    up[0][0](0, j) += h;
    down[0][0](0, j) -= h;
    const double g = (forward_fixed_attention(p, ids, up).logits(t.predicted) -
                      forward_fixed_attention(p, ids, down).logits(t.predicted)) /
                     (2 * h);
    CHECK(std::abs(scores[static_cast<std::size_t>(j)] - t.layers[0].alpha[0](0, j) * g) <= 1e-8);
  }
}

TEST_CASE("scaled attention is linear in the attention gradient") {
  const auto p = ModelParams::init(tiny_config(), 2);
  std::mt19937_64 rng(2);
  const auto t = forward(p, random_ids(8, 20, rng));
  auto g = predicted_logit_attention_grads(p, t);
  const auto s1 = scaled_attention_scores(t, g);
  for (auto& layer : g)
    for (auto& m : layer) m *= 2.0;
  const auto s2 = scaled_attention_scores(t, g);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s2[i] == doctest::Approx(2 * s1[i]).epsilon(1e-14));
  for (auto& layer : g)
    for (auto& m : layer) m.setZero();
  for (double s : scaled_attention_scores(t, g)) CHECK(s == 0.0);

  AttributionOptions sum;
  sum.aggregation = HeadAggregation::Sum;
  auto g1 = predicted_logit_attention_grads(p, t);
  const auto mean = scaled_attention_scores(t, g1);
  const auto total = scaled_attention_scores(t, g1, sum);
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(total[i] == doctest::Approx(4 * mean[i]).epsilon(1e-12));

  const auto mlm = forward(p, t.ids, ForwardMode::Mlm, std::vector<std::size_t>{1});
  CHECK_THROWS_AS(scaled_attention_scores(mlm, g1), ConfigError);
}

TEST_CASE("DeepLIFT is complete and equals gradient times input on a linear model") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto p = ModelParams::init(linear_config(), seed);
    const std::vector<TermId> ids = {3, 5, 9, 17, 22, 28};
    const auto dl = deeplift(p, ids);
    const double total = std::accumulate(dl.scores.begin(), dl.scores.end(), 0.0);
    CHECK(std::abs(total - (dl.logit - dl.reference_logit)) <= 1e-9);

    // Independent oracle: d(logit)/d(token embedding) . token embedding.
    auto views = p.tensors();
    const std::size_t rows = p.token_emb.rows();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double oracle = 0.0;
      for (std::size_t c = 0; c < p.config.d_model; ++c) {
        const std::size_t index = c * rows + static_cast<std::size_t>(ids[i]);
        const double g = central_difference(p, 0, index, 1e-3,
                                            [&](const ModelParams& q) { return forward(q, ids).logits(dl.predicted); });
        oracle += g * p.token_emb(ids[i], static_cast<Eigen::Index>(c));
      }
      CHECK(std::abs(dl.scores[i] - oracle) <= 1e-8);
    }
    REQUIRE(views[0].name == "token_emb");
  }
}

TEST_CASE("DeepLIFT gives zero contributions when the input equals the reference") {
  auto p = ModelParams::init(tiny_config(), 4);
  p.token_emb.setZero();
  for (double s : deeplift_scores(p, std::vector<TermId>{3, 5, 6, 7})) CHECK(s == 0.0);
}

TEST_CASE("DeepLIFT on a nonlinear model stays close to complete") {
  const auto p = ModelParams::init(tiny_config(), 6);
  std::mt19937_64 rng(6);
  const auto dl = deeplift(p, random_ids(9, 20, rng));
  const double total = std::accumulate(dl.scores.begin(), dl.scores.end(), 0.0);
  // Frozen softmax and layer-norm scales break exactness; the sum stays in the neighbourhood.
  CHECK(std::isfinite(total));
  CHECK(std::abs(total - (dl.logit - dl.reference_logit)) < 1.0 + std::abs(dl.logit - dl.reference_logit));
}

TEST_CASE("sigmoid normalisation drops ineligible tokens") {
  const auto vocab = plain_vocab(6);
  const std::vector<TermId> ids = {Vocabulary::kCls, 4, Vocabulary::kUnk, 5};
  RawAttribution raw{1, {9.0, 0.0, 3.0, 40.0}};
  const auto inst = normalize(7, ids, raw, AttributionMethod::DeepLift, vocab);
  REQUIRE(inst.occurrences.size() == 2);
  CHECK(inst.occurrences[0].score == 0.5);
  CHECK(inst.occurrences[0].position == 1);
  CHECK(inst.occurrences[1].score > 0.999);
  CHECK(inst.occurrences[1].score <= 1.0);
  CHECK(inst.predicted == 1);
}

TEST_CASE("class-conditional aggregation hand example") {
  std::vector<InstanceAttribution> v(3);
  v[0].predicted = 1;
  v[0].occurrences = {{4, 1, 0.6}, {4, 2, 0.8}};
  v[1].predicted = 1;
  v[1].occurrences = {{4, 1, 0.7}};
  v[2].predicted = 0;
  v[2].occurrences = {{5, 1, 0.9}};
  const auto hate = aggregate_corpus(v, Label::Hate);
  CHECK(hate.cp_atr(4) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(hate.terms.count(5) == 0);
  const auto non = aggregate_corpus(v, Label::NonHate);
  CHECK(non.cp_atr(5) == 0.9);
}

TEST_CASE("aggregation matches the brute-force oracle and is order and chunk invariant") {
  std::mt19937_64 rng(13);
  auto inst = random_instances(200, 60, rng);
  for (Label cls : {Label::Hate, Label::NonHate}) {
    const auto agg = aggregate_corpus(inst, cls);
    const auto oracle = cp_atr_oracle(inst, cls);
    CHECK(agg.terms.size() == oracle.size());
    for (const auto& [t, v] : oracle) {
      CHECK(std::abs(agg.cp_atr(t) - v) <= 1e-12);
      CHECK(agg.cp_atr(t) > 0.0);
      CHECK(agg.cp_atr(t) < 1.0);
    }

    auto shuffled = inst;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto agg2 = aggregate_corpus(shuffled, cls);
    ClassTermScores merged = aggregate_corpus(std::span(inst).subspan(0, 77), cls);
    merged.merge(aggregate_corpus(std::span(inst).subspan(77, 60), cls));
    merged.merge(aggregate_corpus(std::span(inst).subspan(137), cls));
    for (const auto& [t, v] : oracle) {
      CHECK(std::abs(agg2.cp_atr(t) - v) <= 1e-12);
      CHECK(std::abs(merged.cp_atr(t) - v) <= 1e-12);
    }
  }
}

TEST_CASE("aggregation refuses mixed methods") {
  std::vector<InstanceAttribution> v(2);
  v[1].method = AttributionMethod::ScaledAttention;
  CHECK_THROWS_AS(aggregate_corpus(v, Label::Hate), ConfigError);
  ClassTermScores a, b;
  a.method = AttributionMethod::DeepLift;
  b.method = AttributionMethod::ScaledAttention;
  CHECK_THROWS_AS(a.merge(b), ConfigError);
}

TEST_CASE("rank_cp sorts descending with lexicographic ties") {
  CorpusSplit s, t;
  s.domain = Domain::Source;
  t.domain = Domain::Target;
  Document d;
  d.id = 1;
  d.label = Label::Hate;
  d.tokens = {"apple", "zebra", "mango"};
  s.train = {d};
  const auto vocab = Vocabulary::build(s, t, 1, Stoplist{});
  ClassTermScores sc;
  sc.terms[vocab.id("zebra")] = {0.5, 1};
  sc.terms[vocab.id("apple")] = {1.0, 2};
  sc.terms[vocab.id("mango")] = {0.9, 1};
  const auto r = rank_cp(sc, vocab);
  REQUIRE(r.size() == 3);
  CHECK(r.entries[0].term == "mango");
  CHECK(r.entries[1].term == "apple");
  CHECK(r.entries[2].term == "zebra");
  CHECK(r.origin == TermOrigin::CpHate);
  CHECK(is_valid_ranked_list(r, vocab));
  CHECK(rank_cp(ClassTermScores{}, vocab).empty());
}

TEST_CASE("penalty is the sum of squared raw attributions") {
  auto p = ModelParams::init(tiny_config(), 1);
  const std::vector<TermId> ids = {3, 5, 6, 7};
  FrozenPenaltyTerms f;
  f.multipliers = Mat::Zero(4, 8);
  f.multipliers.col(0).setOnes();
  p.token_emb(5, 0) = 0.3;
  p.token_emb(6, 0) = -0.4;
  const auto mask = std::vector<char>{0, 0, 0, 0, 0, 1, 1, 0};
  CHECK(frozen_attribution_loss(p, ids, mask, AttributionMethod::DeepLift, {}, f) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("penalty is zero without flagged terms and non-negative otherwise") {
  const auto p = ModelParams::init(tiny_config(), 3);
  std::mt19937_64 rng(3);
  const auto t = forward(p, random_ids(8, 20, rng));
  for (auto m : {AttributionMethod::DeepLift, AttributionMethod::ScaledAttention}) {
    ModelParams g = ModelParams::zeros(p.config);
    const auto r = attribution_loss(p, t, std::vector<char>(20, 0), m, {}, &g, 1.0);
    CHECK(r.value == 0.0);
    CHECK(r.occurrences == 0);
    for (const auto& v : g.tensors())
      for (double x : v.data) CHECK(x == 0.0);
    std::vector<char> all(20, 1);
    CHECK(attribution_loss(p, t, all, m, {}, nullptr, 1.0).value >= 0.0);
  }
}

TEST_CASE("penalty gradient matches finite differences under frozen auxiliaries") {
  for (auto m : {AttributionMethod::DeepLift, AttributionMethod::ScaledAttention}) {
    for (std::uint64_t seed : {7u, 8u}) {
      auto p = ModelParams::init(tiny_config(), seed);
      std::mt19937_64 rng(seed);
      const auto ids = random_ids(8, 20, rng);
      std::vector<char> mask(20, 0);
      mask[static_cast<std::size_t>(ids[2])] = 1;
      mask[static_cast<std::size_t>(ids[5])] = 1;
      const auto t = forward(p, ids);
      ModelParams g = ModelParams::zeros(p.config);
      const auto r = attribution_loss(p, t, mask, m, {}, &g, 1.0);
      REQUIRE(r.occurrences >= 2);
      const auto frozen = freeze_penalty_terms(p, t, m);
      CHECK(frozen_attribution_loss(p, ids, mask, m, {}, frozen) == doctest::Approx(r.value).epsilon(1e-12));

      auto views = p.tensors();
      auto gv = g.tensors();
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double worst = 0.0;
      std::size_t checked = 0;
      for (std::size_t k = 0; k < views.size(); ++k) {
        if (views[k].name.rfind("mlm_", 0) == 0) continue;
        for (int s = 0; s < 5; ++s) {
          std::size_t index;
          if (views[k].name == "token_emb") {
            const TermId row = ids[s % 2 == 0 ? 2 : 5];
            index = static_cast<std::size_t>(s % p.config.d_model) * views[k].rows + static_cast<std::size_t>(row);
          } else {
            index = static_cast<std::size_t>(u(rng) * static_cast<double>(views[k].data.size()));
          }
          const double num = central_difference(p, k, index, 1e-4, [&](const ModelParams& q) {
            return frozen_attribution_loss(q, ids, mask, m, {}, frozen);
          });
          const double err = std::abs(gv[k].data[index] - num) / std::max({std::abs(num), std::abs(gv[k].data[index]), 1e-6});
          INFO(views[k].name);
          CHECK(err < 1e-4);
          worst = std::max(worst, err);
          ++checked;
        }
      }
      CHECK(checked > 50);
    }
  }
}

TEST_CASE("method names") {
  CHECK(parse_attribution_method("deeplift") == AttributionMethod::DeepLift);
  CHECK(parse_attribution_method(to_string(AttributionMethod::ScaledAttention)) == AttributionMethod::ScaledAttention);
  CHECK_FALSE(parse_attribution_method("ig").has_value());
}
