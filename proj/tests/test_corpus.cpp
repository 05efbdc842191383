// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <set>

#include "attrda/corpus.hpp"
#include "test_support.hpp"

using namespace attrda;
using attrda::testing::TempDir;

namespace {

std::filesystem::path write_file(const TempDir& dir, const std::string& name, const std::string& body) {
  const auto p = dir.path() / name;
  std::ofstream(p) << body;
  return p;
}

using Tokens = std::vector<std::string>;

}  // namespace

TEST_CASE("tokenizer drops urls, splits hashtags and lowercases") {
  CHECK(tokenize_text("Check https://t.co/xyz NOW!!") == Tokens{"check", "now"});
  CHECK(tokenize_text("#BuildTheWall2019 rocks") == Tokens{"build", "the", "wall", "2019", "rocks"});
  CHECK(tokenize_text("#USAFirst") == Tokens{"usa", "first"});
  CHECK(tokenize_text("#snake_case_tag") == Tokens{"snake", "case", "tag"});
  CHECK(tokenize_text("don't 'quote' www.example.com") == Tokens{"don't", "quote"});
  CHECK(tokenize_text("   ...  ").empty());
}

TEST_CASE("jsonl loading assigns splits and keeps labels except target train") {
  TempDir dir("jsonl");
  const auto p = write_file(dir, "c.jsonl",
                            "{\"text\":\"a b\",\"label\":\"hate\"}\n"
                            "\n"
                            "{\"text\":\"c d\",\"label\":\"non-hate\",\"split\":\"val\"}\n"
                            "{\"text\":\"e\",\"split\":\"test\",\"label\":\"hate\"}\n");
  const auto src = load_corpus(p, CorpusFormat::Jsonl, Domain::Source);
  REQUIRE(src.train.size() == 1);
  CHECK(src.train[0].label == Label::Hate);
  CHECK(src.val.size() == 1);
  CHECK(src.test.size() == 1);

  const auto tgt = load_corpus(p, CorpusFormat::Jsonl, Domain::Target);
  CHECK_FALSE(tgt.train[0].label.has_value());
  CHECK(tgt.dropped_labels == 1);
  CHECK(tgt.val[0].label == Label::NonHate);
}

TEST_CASE("loader diagnostics carry line numbers") {
  TempDir dir("bad");
  auto expect_line = [&](const std::string& body, CorpusFormat f, const std::string& needle) {
    const auto p = write_file(dir, "b.txt", body);
    try {
      load_corpus(p, f, Domain::Source);
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_line("{\"text\":\"ok\"}\n{oops\n", CorpusFormat::Jsonl, "line 2");
  expect_line("{\"label\":\"hate\"}\n", CorpusFormat::Jsonl, "line 1");
  expect_line("{\"text\":\"x\",\"label\":\"spam\"}\n", CorpusFormat::Jsonl, "spam");
  expect_line("a\thate\ttrain\textra\n", CorpusFormat::Tsv, "line 1");
  CHECK_THROWS_AS(load_corpus(dir.path() / "missing.jsonl", CorpusFormat::Jsonl, Domain::Source), InputError);
}

TEST_CASE("tsv loading") {
  TempDir dir("tsv");
  const auto p = write_file(dir, "c.tsv", "hello world\thate\nbye\tnon-hate\tval\n");
  const auto c = load_corpus(p, CorpusFormat::Tsv, Domain::Source);
  CHECK(c.train.size() == 1);
  CHECK(c.val.size() == 1);
}

TEST_CASE("preprocessing drops and counts empty documents") {
  CorpusSplit c;
  Document a, b;
  a.id = 1;
  a.raw_text = "Hello";
  b.id = 2;
  b.raw_text = "http://only.a/url";
  c.train = {a, b};
  const auto p = preprocess_corpus(c);
  CHECK(p.train.size() == 1);
  CHECK(p.dropped_empty == 1);
  CHECK(p.train[0].tokens == Tokens{"hello"});
}

TEST_CASE("random split partitions documents and is seed-deterministic") {
  std::vector<Document> docs(101);
  for (std::size_t i = 0; i < docs.size(); ++i) docs[i].id = static_cast<DocId>(i);
  const auto a = random_split(docs, {0.8, 0.1, 0.1}, 5);
  const auto b = random_split(docs, {0.8, 0.1, 0.1}, 5);
  CHECK(a.size() == 101);
  std::set<DocId> seen;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (const auto& d : *part) CHECK(seen.insert(d.id).second);
  CHECK(seen.size() == 101);
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);
  CHECK_THROWS_AS(random_split(docs, {0.5, 0.5, 0.1}, 1), ConfigError);
  CHECK_THROWS_AS(random_split(docs, {1.0, 0.0, 0.0}, 1), ConfigError);
}

TEST_CASE("validation catches duplicates and missing source labels") {
  CorpusSplit c;
  c.domain = Domain::Source;
  Document d;
  d.id = 1;
  d.label = Label::Hate;
  c.train = {d, d};
  CHECK_THROWS_AS(validate_corpus(c), InputError);
  c.train = {d};
  c.train[0].label.reset();
  CHECK_THROWS_AS(validate_corpus(c), InputError);
}

TEST_CASE("synthetic benchmark plants source-only confounds") {
  SyntheticSpec spec;
  spec.source_train = 600;
  spec.target_train = 600;
  const auto c = generate_synthetic(spec, 3);
  CHECK(c.source.train.size() == 600);
  CHECK(c.target.test.size() == spec.target_test);
  for (const auto& t : spec.confound_terms) {
    CHECK(term_label_correlation(c.source.train, t) > spec.min_confound_correlation);
    for (const auto* part : {&c.target.train, &c.target.val, &c.target.test})
      for (const auto& d : *part) CHECK(std::find(d.tokens.begin(), d.tokens.end(), t) == d.tokens.end());
  }
  for (const auto& d : c.target.train) CHECK_FALSE(d.label.has_value());
  const auto again = generate_synthetic(spec, 3);
  CHECK(again.source.train[17].tokens == c.source.train[17].tokens);
  const auto names = synthetic_terms(spec);
  CHECK(names.confound == spec.confound_terms);
  CHECK(names.hate_signal.size() == spec.hate_signal_terms);
}

TEST_CASE("synthetic spec round-trips and rejects unknown keys") {
  SyntheticSpec spec;
  spec.p_confound_hate = 0.8;
  const auto back = SyntheticSpec::from_map(spec.to_map());
  CHECK(back.p_confound_hate == 0.8);
  CHECK(back.confound_terms == spec.confound_terms);
  CHECK_THROWS_AS(SyntheticSpec::from_map({{"nope", "1"}}), ConfigError);
}

TEST_CASE("archive round trip") {
  TempDir dir("arch");
  auto c = generate_synthetic(SyntheticSpec{}, 1).target;
  write_corpus_archive(c, dir.path() / "t.jsonl");
  const auto r = read_corpus_archive(dir.path() / "t.jsonl");
  CHECK(r.domain == Domain::Target);
  REQUIRE(r.test.size() == c.test.size());
  CHECK(r.test[5].tokens == c.test[5].tokens);
  CHECK(r.test[5].label == c.test[5].label);
  CHECK(r.metadata == c.metadata);
  const auto bad = write_file(dir, "x.jsonl", "{\"foo\":1}\n");
  CHECK_THROWS_AS(read_corpus_archive(bad), InputError);
}
