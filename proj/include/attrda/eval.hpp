// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "attrda/attribution.hpp"
#include "attrda/encoder.hpp"
#include "attrda/training.hpp"

namespace attrda {

// Class 0 = non-hate, class 1 = hate. F1 uses 0/0 -> 0.
struct EvalResult {
  std::array<double, 2> precision{}, recall{}, f1{};
  double macro_f1 = 0.0;
  std::array<std::array<std::size_t, 2>, 2> confusion{};  // [gold][pred]
  std::size_t n = 0;
};

EvalResult macro_f1(std::span<const int> gold, std::span<const int> pred);

struct SignificanceResult {
  double observed_delta = 0.0;  // macro-F1(a) - macro-F1(b) on the full sample
  double mean_delta = 0.0;      // mean over resamples
  double p_value = 1.0;         // fraction of resamples with delta <= 0
  bool significant = false;     // p < 1 - confidence
  std::size_t resamples = 0;
  std::uint64_t seed = 0;
};

SignificanceResult paired_bootstrap(std::span<const int> gold, std::span<const int> pred_a,
                                    std::span<const int> pred_b, std::size_t resamples = 1000,
                                    double confidence = 0.95, std::uint64_t seed = 0);

double mean(std::span<const double> xs);
double sample_std(std::span<const double> xs);  // 0 for fewer than two samples

// Mean |raw attribution| over occurrences of `terms` in `data`, for two
// models sharing a vocabulary; ratio = mass_b / mass_a.
struct ShadedInstance {
  DocId doc_id = 0;
  int predicted = 0;
  std::vector<TermId> ids;
  std::vector<double> scores;  // raw, per position
};

struct AttributionMassReport {
  double mass_a = 0.0;
  double mass_b = 0.0;
  double ratio = 0.0;
  std::size_t occurrences = 0;
  std::vector<ShadedInstance> shading_a, shading_b;  // instances containing a term of the set
};

AttributionMassReport attribution_mass_report(const ModelParams& params_a, const ModelParams& params_b,
                                              const std::vector<TermId>& terms, std::span<const Example> data,
                                              AttributionMethod method, const AttributionOptions& options = {},
                                              std::size_t max_shading = 50);

// JSONL record per instance: {doc_id, predicted, occurrences: [[term, index, score], ...]}.
nlohmann::json attribution_dump_record(DocId doc_id, int predicted, std::span<const TermId> ids,
                                       std::span<const double> scores, const Vocabulary& vocab);

}  // namespace attrda
