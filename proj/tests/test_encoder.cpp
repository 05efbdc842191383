// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "attrda/encoder.hpp"
#include "gradient_checks.hpp"
#include "test_support.hpp"

using namespace attrda;
using namespace attrda::testing;

TEST_CASE("reverse-mode gradients match central differences for every tensor family") {
  for (std::uint64_t seed : {11u, 12u}) {
    const GradCheck gc = check_parameter_gradients(seed);
    CHECK(gc.max_rel_error.size() == 24);
    for (const auto& [family, err] : gc.max_rel_error) {
      INFO(family);
      CHECK(gc.coords.at(family) >= 5);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("gradients hold with relu and identity activations") {
  for (Activation a : {Activation::Relu, Activation::Identity}) {
    const GradCheck gc = check_parameter_gradients(21, 5, 1e-4, a);
    for (const auto& [family, err] : gc.max_rel_error) {
      INFO(family);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("attention-map gradient matches finite differences on fixed maps") {
  for (std::uint64_t seed : {3u, 4u, 5u}) CHECK(check_attention_gradients(seed, 12) < 1e-4);
}

TEST_CASE("supplying the computed attention maps reproduces the forward pass") {
  std::mt19937_64 rng(1);
  const auto cfg = tiny_config();
  const auto p = ModelParams::init(cfg, 8);
  const auto ids = random_ids(9, cfg.vocab_size, rng);
  const auto t = forward(p, ids);
  AttentionGrads alpha;
  for (const auto& l : t.layers) alpha.push_back(l.alpha);
  const auto u = forward_fixed_attention(p, ids, alpha);
  CHECK((u.logits - t.logits).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention rows are distributions") {
  std::mt19937_64 rng(2);
  const auto cfg = tiny_config();
  const auto p = ModelParams::init(cfg, 4);
  const auto t = forward(p, random_ids(10, cfg.vocab_size, rng));
  for (const auto& l : t.layers)
    for (const auto& a : l.alpha) {
      CHECK(a.minCoeff() >= 0.0);
      CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("initialisation is a pure function of the seed") {
  const auto cfg = tiny_config();
  auto a = ModelParams::init(cfg, 5), b = ModelParams::init(cfg, 5), c = ModelParams::init(cfg, 6);
  auto ta = a.tensors(), tb = b.tensors(), tc = c.tensors();
  bool same = true, differs = false;
  for (std::size_t k = 0; k < ta.size(); ++k)
    for (std::size_t i = 0; i < ta[k].data.size(); ++i) {
      same = same && ta[k].data[i] == tb[k].data[i];
      differs = differs || ta[k].data[i] != tc[k].data[i];
    }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
  Vec logits(2);
  logits << 0.3, -1.2;
  Vec d;
  const double loss = cross_entropy(logits, 0, &d);
  const double p0 = std::exp(0.3) / (std::exp(0.3) + std::exp(-1.2));
  CHECK(loss == doctest::Approx(-std::log(p0)).epsilon(1e-14));
  CHECK(d(0) == doctest::Approx(p0 - 1.0).epsilon(1e-14));
  CHECK(d(1) == doctest::Approx(1.0 - p0).epsilon(1e-14));
}

TEST_CASE("forward rejects bad input") {
  const auto p = ModelParams::init(tiny_config(), 1);
  CHECK_THROWS_AS(forward(p, std::vector<TermId>{}), InputError);
  CHECK_THROWS_AS(forward(p, std::vector<TermId>{3, 20}), InputError);
  CHECK_THROWS_AS(forward(p, std::vector<TermId>(13, 4)), InputError);
  const std::vector<std::size_t> pos = {4};
  CHECK_THROWS_AS(forward(p, std::vector<TermId>{3, 4}, ForwardMode::Mlm, pos), InputError);
}

TEST_CASE("config validation") {
  auto c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.vocab_size = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(EncoderConfig::from_map({{"bogus", "1"}}), ConfigError);
  CHECK(EncoderConfig::from_map(tiny_config().to_map()) == tiny_config());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  TempDir dir("ckpt");
  const auto cfg = tiny_config();
  auto p = ModelParams::init(cfg, 77);
  save_checkpoint(p, dir.path() / "m.txt");
  auto q = load_checkpoint(dir.path() / "m.txt", &cfg);
  auto tp = p.tensors(), tq = q.tensors();
  bool same = true;
  for (std::size_t k = 0; k < tp.size(); ++k)
    for (std::size_t i = 0; i < tp[k].data.size(); ++i) same = same && tp[k].data[i] == tq[k].data[i];
  CHECK(same);

  auto other = cfg;
  other.d_model = 4;
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "m.txt", &other), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.txt"), InputError);
}
