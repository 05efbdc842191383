// SPDX-License-Identifier: Apache-2.0
//
// Token attributions (scaled attention, DeepLIFT rescale), sigmoid
// normalisation, class-conditional corpus aggregation, class rankings, and
// the squared-attribution penalty used during fine-tuning.
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attrda/common.hpp"
#include "attrda/domain_terms.hpp"
#include "attrda/encoder.hpp"
#include "attrda/text.hpp"

namespace attrda {

enum class AttributionMethod { ScaledAttention, DeepLift };
std::string_view to_string(AttributionMethod m);
std::optional<AttributionMethod> parse_attribution_method(std::string_view text);

enum class HeadAggregation { Mean, Sum };

struct AttributionOptions {
  HeadAggregation aggregation = HeadAggregation::Mean;  // scaled attention only
};

// Raw per-position scores (position 0 is [CLS]) toward the predicted class.
struct RawAttribution {
  int predicted = 0;
  std::vector<double> scores;
};

// alpha * d(logit_pred)/d(alpha) on the [CLS] row, aggregated over layers and heads.
std::vector<double> scaled_attention_scores(const ForwardTrace& trace, const AttentionGrads& dalpha,
                                            const AttributionOptions& options = {});

// d(logit_pred)/d(alpha) for a classify trace.
AttentionGrads predicted_logit_attention_grads(const ModelParams& params, const ForwardTrace& trace);

struct DeepLiftResult {
  int predicted = 0;
  std::vector<double> scores;  // per position, including [CLS]
  Mat multipliers;             // n x d, on the embedding sum
  double logit = 0.0;          // predicted-class logit on the input
  double reference_logit = 0.0;
};

DeepLiftResult deeplift(const ModelParams& params, std::span<const TermId> ids);
DeepLiftResult deeplift(const ModelParams& params, const ForwardTrace& trace);
std::vector<double> deeplift_scores(const ModelParams& params, std::span<const TermId> ids);

RawAttribution raw_attribution(const ModelParams& params, std::span<const TermId> ids, AttributionMethod method,
                               const AttributionOptions& options = {});

struct OccurrenceScore {
  TermId term = -1;
  std::size_t position = 0;  // index in the encoded sequence
  double score = 0.0;
};

struct InstanceAttribution {
  DocId doc_id = 0;
  int predicted = 0;
  AttributionMethod method = AttributionMethod::DeepLift;
  std::vector<OccurrenceScore> occurrences;  // sigmoid-normalised, eligible terms only
};

InstanceAttribution normalize(DocId doc_id, std::span<const TermId> ids, const RawAttribution& raw,
                              AttributionMethod method, const Vocabulary& vocab);

struct TermAccumulator {
  double sum = 0.0;
  std::size_t count = 0;
};

struct ClassTermScores {
  Label cls = Label::Hate;
  std::optional<AttributionMethod> method;
  std::map<TermId, TermAccumulator> terms;

  double cp_atr(TermId id) const;
  void merge(const ClassTermScores& other);
};

ClassTermScores aggregate_corpus(std::span<const InstanceAttribution> attributions, Label cls);

RankedTermList rank_cp(const ClassTermScores& scores, const Vocabulary& vocab);

// Penalty sum of squared raw attributions over occurrences whose term is
// flagged in `penalized` (indexed by term id). Gradients follow the
// stop-gradient convention: d(logit)/d(alpha) is held fixed for scaled
// attention, and the rescale multipliers are held fixed for DeepLIFT.
// When `grads` is given, `grad_scale` times the penalty gradient is added.
struct AttributionLossResult {
  double value = 0.0;
  std::size_t occurrences = 0;
};

AttributionLossResult attribution_loss(const ModelParams& params, const ForwardTrace& trace,
                                       const std::vector<char>& penalized, AttributionMethod method,
                                       const AttributionOptions& options, ModelParams* grads, double grad_scale);

// Penalty value with frozen auxiliary quantities, for finite-difference checks.
struct FrozenPenaltyTerms {
  AttentionGrads dalpha;  // scaled attention
  Mat multipliers;        // DeepLIFT
};
FrozenPenaltyTerms freeze_penalty_terms(const ModelParams& params, const ForwardTrace& trace,
                                        AttributionMethod method);
double frozen_attribution_loss(const ModelParams& params, std::span<const TermId> ids,
                               const std::vector<char>& penalized, AttributionMethod method,
                               const AttributionOptions& options, const FrozenPenaltyTerms& frozen);

}  // namespace attrda
