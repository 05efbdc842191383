// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <limits>
#include <random>

#include "attrda/config.hpp"
#include "attrda/common.hpp"

using namespace attrda;

TEST_CASE("key-value parsing skips comments and lets later keys win") {
  const auto kv = parse_key_values("# header\n\nencoder.d_model = 64\n  adapt.variant=dom_spec # trailing\nencoder.d_model=32\n");
  CHECK(kv.at("encoder.d_model") == "32");
  CHECK(kv.at("adapt.variant") == "dom_spec");
  CHECK(kv.size() == 2);
}

TEST_CASE("malformed lines name their origin and line") {
  try {
    parse_key_values("a=1\nbroken\n", "exp.conf");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("exp.conf:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_key_values("=3"), ConfigError);
  CHECK_THROWS_AS(load_key_values("/nonexistent/attrda.conf"), InputError);
}

TEST_CASE("render then parse is the identity") {
  KeyValues kv = {{"a.b", "1"}, {"c", "x,y"}, {"d.e.f", "0.25"}};
  CHECK(parse_key_values(render_key_values(kv)) == kv);
}

TEST_CASE("section strips the prefix") {
  KeyValues kv = {{"encoder.d_model", "8"}, {"encoder.n_heads", "2"}, {"encoderx.y", "1"}, {"optim.lr", "1"}};
  const auto s = section(kv, "encoder");
  CHECK(s.size() == 2);
  CHECK(s.at("d_model") == "8");
}

TEST_CASE("typed parsers reject junk") {
  CHECK(parse_real("k", "0.5") == 0.5);
  CHECK(parse_size("k", "12") == 12);
  CHECK(parse_bool("k", "true"));
  CHECK_FALSE(parse_bool("k", "false"));
  CHECK_THROWS_AS(parse_real("k", "abc"), ConfigError);
  CHECK_THROWS_AS(parse_real("k", "1.5x"), ConfigError);
  CHECK_THROWS_AS(parse_size("k", "-1"), ConfigError);
  CHECK_THROWS_AS(parse_size("k", "2.5"), ConfigError);
  CHECK_THROWS_AS(parse_bool("k", "maybe"), ConfigError);
}

TEST_CASE("format_real round-trips doubles exactly") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng) / (1 + i);
    CHECK(parse_real("k", format_real(x)) == x);
  }
  CHECK(format_real(0.1) == "0.1");
}

TEST_CASE("lists") {
  CHECK(split_list("a, b ,c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(join_list({"x", "y"}) == "x,y");
  CHECK(parse_real_list("g", "0.01,10") == std::vector<double>{0.01, 10.0});
  CHECK_THROWS_AS(parse_real_list("g", "1,nope"), ConfigError);
}

TEST_CASE("derive_seed separates streams deterministically") {
  CHECK(derive_seed(1, 1) == derive_seed(1, 1));
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
}

TEST_CASE("label and domain names") {
  CHECK(parse_label("hate") == Label::Hate);
  CHECK(parse_label("non-hate") == Label::NonHate);
  CHECK_FALSE(parse_label("spam").has_value());
  CHECK(parse_domain(to_string(Domain::Target)) == Domain::Target);
}
