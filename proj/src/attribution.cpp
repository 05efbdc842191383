// SPDX-License-Identifier: Apache-2.0
#include "attrda/attribution.hpp"

#include <cmath>

namespace attrda {

namespace {

double head_weight(const EncoderConfig& c, const AttributionOptions& o) {
  return o.aggregation == HeadAggregation::Mean ? 1.0 / static_cast<double>(c.n_layers * c.n_heads) : 1.0;
}

Vec one_hot(int k) {
  Vec v = Vec::Zero(kNumClasses);
  v(k) = 1.0;
  return v;
}

bool flagged(const std::vector<char>& penalized, TermId id) {
  const auto i = static_cast<std::size_t>(id);
  return i < penalized.size() && penalized[i] != 0;
}

}  // namespace

std::string_view to_string(AttributionMethod m) {
  return m == AttributionMethod::ScaledAttention ? "scaled_attention" : "deeplift";
}

std::optional<AttributionMethod> parse_attribution_method(std::string_view text) {
  if (text == "scaled_attention" || text == "scaled-attn") return AttributionMethod::ScaledAttention;
  if (text == "deeplift") return AttributionMethod::DeepLift;
  return std::nullopt;
}

AttentionGrads predicted_logit_attention_grads(const ModelParams& params, const ForwardTrace& trace) {
  if (trace.mode != ForwardMode::Classify) throw ConfigError("attribution needs a classify-mode trace");
  AttentionGrads out;
  BackwardOptions o;
  o.dalpha_out = &out;
  backward_classify(params, trace, one_hot(trace.predicted), o);
  return out;
}

std::vector<double> scaled_attention_scores(const ForwardTrace& trace, const AttentionGrads& dalpha,
                                            const AttributionOptions& options) {
  if (trace.mode != ForwardMode::Classify) throw ConfigError("scaled attention needs a classify-mode trace");
  const std::size_t n = trace.ids.size();
  std::vector<double> scores(n, 0.0);
  std::size_t maps = 0;
  for (std::size_t l = 0; l < trace.layers.size(); ++l)
    for (std::size_t h = 0; h < trace.layers[l].alpha.size(); ++h) {
      const Mat& a = trace.layers[l].alpha[h];
      const Mat& g = dalpha.at(l).at(h);
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<Eigen::Index>(i);
        scores[i] += a(0, j) * g(0, j);
      }
      ++maps;
    }
  if (options.aggregation == HeadAggregation::Mean && maps > 0)
    for (double& s : scores) s /= static_cast<double>(maps);
  return scores;
}

DeepLiftResult deeplift(const ModelParams& params, const ForwardTrace& trace) {
  if (trace.mode != ForwardMode::Classify) throw ConfigError("deeplift needs a classify-mode trace");
  const ForwardTrace ref = forward_reference(params, trace);
  BackwardOptions o;
  o.rule = BackwardRule::Rescale;
  o.reference = &ref;
  DeepLiftResult r;
  r.predicted = trace.predicted;
  r.multipliers = backward_classify(params, trace, one_hot(trace.predicted), o);
  r.scores.resize(trace.ids.size());
  for (std::size_t i = 0; i < trace.ids.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    r.scores[i] = r.multipliers.row(row).dot(trace.x0.row(row) - ref.x0.row(row));
  }
  r.logit = trace.logits(trace.predicted);
  r.reference_logit = ref.logits(trace.predicted);
  return r;
}

DeepLiftResult deeplift(const ModelParams& params, std::span<const TermId> ids) {
  return deeplift(params, forward(params, ids));
}

std::vector<double> deeplift_scores(const ModelParams& params, std::span<const TermId> ids) {
  return deeplift(params, ids).scores;
}

RawAttribution raw_attribution(const ModelParams& params, std::span<const TermId> ids, AttributionMethod method,
                               const AttributionOptions& options) {
  const ForwardTrace trace = forward(params, ids);
  RawAttribution r;
  r.predicted = trace.predicted;
  if (method == AttributionMethod::ScaledAttention)
    r.scores = scaled_attention_scores(trace, predicted_logit_attention_grads(params, trace), options);
  else
    r.scores = deeplift(params, trace).scores;
  return r;
}

InstanceAttribution normalize(DocId doc_id, std::span<const TermId> ids, const RawAttribution& raw,
                              AttributionMethod method, const Vocabulary& vocab) {
  InstanceAttribution out;
  out.doc_id = doc_id;
  out.predicted = raw.predicted;
  out.method = method;
  for (std::size_t i = 0; i < ids.size() && i < raw.scores.size(); ++i) {
    if (!vocab.eligible(ids[i])) continue;
    out.occurrences.push_back({ids[i], i, 1.0 / (1.0 + std::exp(-raw.scores[i]))});
  }
  return out;
}

double ClassTermScores::cp_atr(TermId id) const {
  auto it = terms.find(id);
  if (it == terms.end() || it->second.count == 0) return 0.0;
  return it->second.sum / static_cast<double>(it->second.count);
}

void ClassTermScores::merge(const ClassTermScores& other) {
  if (other.cls != cls) throw ConfigError("cannot merge term scores of different classes");
  if (method && other.method && *method != *other.method)
    throw ConfigError("cannot merge term scores from different attribution methods");
  if (!method) method = other.method;
  for (const auto& [id, acc] : other.terms) {
    auto& mine = terms[id];
    mine.sum += acc.sum;
    mine.count += acc.count;
  }
}

ClassTermScores aggregate_corpus(std::span<const InstanceAttribution> attributions, Label cls) {
  ClassTermScores out;
  out.cls = cls;
  for (const auto& a : attributions) {
    if (out.method && *out.method != a.method)
      throw ConfigError("aggregate_corpus: attributions mix methods " + std::string(to_string(*out.method)) +
                        " and " + std::string(to_string(a.method)));
    out.method = a.method;
    if (a.predicted != class_index(cls)) continue;
    for (const auto& occ : a.occurrences) {
      auto& acc = out.terms[occ.term];
      acc.sum += occ.score;
      acc.count += 1;
    }
  }
  return out;
}

RankedTermList rank_cp(const ClassTermScores& scores, const Vocabulary& vocab) {
  RankedTermList list;
  list.origin = scores.cls == Label::Hate ? TermOrigin::CpHate : TermOrigin::CpNonHate;
  for (const auto& [id, acc] : scores.terms)
    if (acc.count > 0) list.entries.push_back({id, vocab.term(id), acc.sum / static_cast<double>(acc.count)});
  sort_ranked(list.entries);
  return list;
}

FrozenPenaltyTerms freeze_penalty_terms(const ModelParams& params, const ForwardTrace& trace,
                                        AttributionMethod method) {
  FrozenPenaltyTerms f;
  if (method == AttributionMethod::ScaledAttention)
    f.dalpha = predicted_logit_attention_grads(params, trace);
  else
    f.multipliers = deeplift(params, trace).multipliers;
  return f;
}

double frozen_attribution_loss(const ModelParams& params, std::span<const TermId> ids,
                               const std::vector<char>& penalized, AttributionMethod method,
                               const AttributionOptions& options, const FrozenPenaltyTerms& frozen) {
  double loss = 0.0;
  if (method == AttributionMethod::ScaledAttention) {
    const ForwardTrace trace = forward(params, ids);
    const auto scores = scaled_attention_scores(trace, frozen.dalpha, options);
    for (std::size_t i = 1; i < ids.size(); ++i)
      if (flagged(penalized, ids[i])) loss += scores[i] * scores[i];
  } else {
    for (std::size_t i = 1; i < ids.size(); ++i) {
      if (!flagged(penalized, ids[i])) continue;
      const auto row = static_cast<Eigen::Index>(i);
      const double phi = frozen.multipliers.row(row).dot(params.token_emb.row(ids[i]));
      loss += phi * phi;
    }
  }
  return loss;
}

AttributionLossResult attribution_loss(const ModelParams& params, const ForwardTrace& trace,
                                       const std::vector<char>& penalized, AttributionMethod method,
                                       const AttributionOptions& options, ModelParams* grads, double grad_scale) {
  AttributionLossResult r;
  const std::size_t n = trace.ids.size();
  std::vector<std::size_t> positions;
  for (std::size_t i = 1; i < n; ++i)
    if (flagged(penalized, trace.ids[i])) positions.push_back(i);
  if (positions.empty()) return r;
  r.occurrences = positions.size();

  if (method == AttributionMethod::ScaledAttention) {
    const AttentionGrads g = predicted_logit_attention_grads(params, trace);
    const auto scores = scaled_attention_scores(trace, g, options);
    for (std::size_t i : positions) r.value += scores[i] * scores[i];
    if (!grads) return r;
    const double w = head_weight(params.config, options);
    const auto ni = static_cast<Eigen::Index>(n);
    AttentionGrads inject(g.size());
    for (std::size_t l = 0; l < g.size(); ++l) {
      inject[l].assign(g[l].size(), Mat::Zero(ni, ni));
      for (std::size_t h = 0; h < g[l].size(); ++h)
        for (std::size_t i : positions) {
          const auto j = static_cast<Eigen::Index>(i);
          inject[l][h](0, j) = grad_scale * 2.0 * scores[i] * w * g[l][h](0, j);
        }
    }
    BackwardOptions o;
    o.extra_dalpha = &inject;
    o.grads = grads;
    backward(params, trace, Mat::Zero(trace.z.rows(), trace.z.cols()), o);
  } else {
    const DeepLiftResult dl = deeplift(params, trace);
    for (std::size_t i : positions) r.value += dl.scores[i] * dl.scores[i];
    if (!grads) return r;
    for (std::size_t i : positions) {
      const auto row = static_cast<Eigen::Index>(i);
      grads->token_emb.row(trace.ids[i]) += grad_scale * 2.0 * dl.scores[i] * dl.multipliers.row(row);
    }
  }
  return r;
}

}  // namespace attrda
