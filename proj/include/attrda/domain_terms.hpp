// SPDX-License-Identifier: Apache-2.0
//
// Source-specific term extraction: a bag-of-words logistic-regression domain
// classifier, the 2x2 chi-squared corpus comparison with Yates' correction,
// and the intersection of the classifier's top terms with attribution ranks.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attrda/common.hpp"
#include "attrda/corpus.hpp"
#include "attrda/text.hpp"

namespace attrda {

enum class TermOrigin { LrDomain, CpHate, CpNonHate, Chi2, Predef, TeS };
std::string_view to_string(TermOrigin origin);
std::optional<TermOrigin> parse_term_origin(std::string_view text);

struct RankedTerm {
  TermId id = -1;  // -1 until resolved against a vocabulary
  std::string term;
  double score = 0.0;
};

// Scores non-increasing, ids unique, only eligible vocabulary terms.
struct RankedTermList {
  std::vector<RankedTerm> entries;
  TermOrigin origin = TermOrigin::TeS;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool contains(TermId id) const;
  bool contains(std::string_view term) const;
  std::vector<TermId> ids() const;
};

// Sorts by score desc then term asc; keeps the first occurrence of each id.
void sort_ranked(std::vector<RankedTerm>& entries);
bool is_valid_ranked_list(const RankedTermList& list, const Vocabulary& vocab);

// TSV rows: rank, term, score, origin (rank is 1-based).
std::string to_tsv(const RankedTermList& list);
void write_term_list(const RankedTermList& list, const std::filesystem::path& path);
RankedTermList parse_term_list(std::string_view tsv, std::string_view origin_name = "<term list>");
RankedTermList read_term_list(const std::filesystem::path& path);
// Maps terms to ids, dropping entries that are absent or not eligible.
RankedTermList resolve(const RankedTermList& list, const Vocabulary& vocab);

// The bundled identity-term list.
RankedTermList predefined_terms();

struct DomainLRHyper {
  double l2 = 1e-4;
  std::size_t epochs = 200;
  double learning_rate = 0.5;
};

struct DomainLRModel {
  std::vector<double> weights;  // one per vocabulary id
  double bias = 0.0;
  DomainLRHyper hyper;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

// Label 1 = source. Features are L2-normalised term counts; full-batch
// gradient descent from zero weights, so the result is fully deterministic.
DomainLRModel train_domain_lr(const std::vector<Document>& source_train, const std::vector<Document>& target_train,
                              const Vocabulary& vocab, const DomainLRHyper& hyper = {});

RankedTermList top_n_source_terms(const DomainLRModel& model, const Vocabulary& vocab, std::size_t n = 750);

struct ContingencyTable {
  double a = 0, b = 0, c = 0, d = 0;  // source with/without, target with/without
};

double yates_chi_squared(const ContingencyTable& t);
double chi_squared_critical(double confidence);  // 1 degree of freedom

RankedTermList chi_squared_terms(const std::vector<Document>& source_train, const std::vector<Document>& target_train,
                                 const Vocabulary& vocab, double confidence = 0.95);

// Terms of s_lr present in the top m of any cp list, in s_lr order.
RankedTermList intersect_terms(const RankedTermList& s_lr, const std::vector<const RankedTermList*>& cp_lists,
                               std::size_t m = 250);

}  // namespace attrda
