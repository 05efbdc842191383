// SPDX-License-Identifier: Apache-2.0
//
// Shared term universe: vocabulary with per-domain document frequencies and
// the stop-word / infrequency flags that gate every ranked term list.
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "attrda/common.hpp"
#include "attrda/corpus.hpp"

namespace attrda {

using Stoplist = std::unordered_set<std::string>;

Stoplist parse_stoplist(std::string_view text);
Stoplist load_stoplist(const std::filesystem::path& path);
const Stoplist& default_stoplist();

class Vocabulary {
public:
  static constexpr TermId kPad = 0;
  static constexpr TermId kUnk = 1;
  static constexpr TermId kMask = 2;
  static constexpr TermId kCls = 3;
  static constexpr TermId kFirstTerm = 4;

  // Counts document frequency over the train splits of both corpora.
  static Vocabulary build(const CorpusSplit& source, const CorpusSplit& target, std::size_t min_freq,
                          const Stoplist& stoplist);

  std::size_t size() const { return terms_.size(); }
  TermId id(std::string_view term) const;  // kUnk when absent
  bool contains(std::string_view term) const { return index_.count(std::string(term)) != 0; }
  const std::string& term(TermId id) const { return terms_.at(static_cast<std::size_t>(id)); }

  bool is_special(TermId id) const { return id < kFirstTerm; }
  bool is_stopword(TermId id) const { return stop_.at(static_cast<std::size_t>(id)); }
  bool is_infrequent(TermId id) const { return rare_.at(static_cast<std::size_t>(id)); }
  // May appear in ranked term lists and attribution aggregates.
  bool eligible(TermId id) const { return !is_special(id) && !is_stopword(id) && !is_infrequent(id); }

  std::size_t doc_freq(TermId id, Domain domain) const;
  std::size_t num_docs(Domain domain) const { return domain == Domain::Source ? n_source_ : n_target_; }
  std::size_t min_freq() const { return min_freq_; }

  // id, term, freq_source, freq_target, stopword_flag
  void write_tsv(const std::filesystem::path& path) const;
  std::string to_tsv() const;

private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TermId> index_;
  std::vector<std::size_t> df_source_, df_target_;
  std::vector<bool> stop_, rare_;
  std::size_t n_source_ = 0, n_target_ = 0, min_freq_ = 1;
};

// [CLS] followed by term ids, truncated to max_len.
std::vector<TermId> encode(const Document& doc, const Vocabulary& vocab, std::size_t max_len);

// Sorted (id, count) pairs over every vocabulary term, including flagged ones.
using SparseVector = std::vector<std::pair<TermId, double>>;
SparseVector bow_vector(const Document& doc, const Vocabulary& vocab);

}  // namespace attrda
