// SPDX-License-Identifier: Apache-2.0
//
// Labeled and unlabeled text corpora with domain tags: loading, tweet-style
// preprocessing, random splitting, and the synthetic spurious-correlation
// generator used for desk-scale verification.
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attrda/common.hpp"

namespace attrda {

struct Document {
  DocId id = 0;
  std::string raw_text;
  std::vector<std::string> tokens;
  std::optional<Label> label;
  Domain domain = Domain::Source;
};

struct CorpusSplit {
  std::vector<Document> train;
  std::vector<Document> val;
  std::vector<Document> test;
  Domain domain = Domain::Source;
  std::size_t dropped_empty = 0;
  std::size_t dropped_labels = 0;  // target-train labels discarded on load
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

enum class CorpusFormat { Jsonl, Tsv };
std::optional<CorpusFormat> parse_corpus_format(std::string_view text);

// Reads raw records; tokens stay empty until preprocess_corpus. Target-domain
// train records are stored unlabeled even when the file carries a label.
CorpusSplit load_corpus(const std::filesystem::path& path, CorpusFormat format, Domain domain);

// URL removal, hashtag splitting (camel case and letter/digit boundaries),
// lowercasing and word tokenization of raw_text.
Document preprocess(Document doc);
std::vector<std::string> tokenize_text(std::string_view text);

// Preprocesses every document, dropping (and counting) documents left empty.
CorpusSplit preprocess_corpus(CorpusSplit corpus);

CorpusSplit random_split(std::vector<Document> docs, std::array<double, 3> fractions,
                         std::uint64_t seed);

// Checks label presence and id uniqueness; throws InputError on violation.
void validate_corpus(const CorpusSplit& corpus);

// Desk-scale benchmark: shared class-signal terms appear in both domains,
// source-only confound terms co-occur with the hate label in the source only.
struct SyntheticSpec {
  std::size_t source_train = 2000;
  std::size_t source_val = 200;
  std::size_t source_test = 200;
  std::size_t target_train = 2000;
  std::size_t target_val = 300;
  std::size_t target_test = 1000;

  std::size_t filler_terms = 400;
  std::size_t source_only_terms = 30;
  std::size_t target_only_terms = 30;
  std::size_t hate_signal_terms = 12;
  std::size_t non_hate_signal_terms = 12;
  std::vector<std::string> confound_terms = {"zorp", "quax", "blick", "frum", "glorb", "snerf"};
  std::vector<std::string> hate_signal_names;      // overrides generated names when non-empty
  std::vector<std::string> non_hate_signal_names;  // likewise

  double hate_prior = 0.5;
  std::size_t min_length = 8;
  std::size_t max_length = 14;
  double p_own_signal = 0.6;     // document carries a signal term of its class
  double p_cross_signal = 0.1;   // document carries a signal term of the other class
  double p_confound_hate = 0.95;
  double p_confound_non_hate = 0.03;
  double p_domain_term = 0.5;    // document carries a domain-only neutral term
  double min_confound_correlation = 0.1;

  std::map<std::string, std::string> to_map() const;
  static SyntheticSpec from_map(const std::map<std::string, std::string>& kv);
};

struct SyntheticCorpora {
  CorpusSplit source;
  CorpusSplit target;
};

SyntheticCorpora generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Names of every generated term family, for oracles and reports.
struct SyntheticTerms {
  std::vector<std::string> filler, source_only, target_only, hate_signal, non_hate_signal, confound;
};
SyntheticTerms synthetic_terms(const SyntheticSpec& spec);

// Phi coefficient between presence of `term` and the hate label over labeled docs.
double term_label_correlation(const std::vector<Document>& docs, const std::string& term);

// Corpus archive: JSON lines with a header record, then one record per document.
void write_corpus_archive(const CorpusSplit& corpus, const std::filesystem::path& path);
CorpusSplit read_corpus_archive(const std::filesystem::path& path);

}  // namespace attrda
