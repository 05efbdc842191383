// SPDX-License-Identifier: Apache-2.0
#include "attrda/eval.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

namespace attrda {

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

EvalResult from_confusion(const std::array<std::array<std::size_t, 2>, 2>& cm) {
  EvalResult r;
  r.confusion = cm;
  r.n = cm[0][0] + cm[0][1] + cm[1][0] + cm[1][1];
  for (int c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(cm[c][c]);
    const double fp = static_cast<double>(cm[1 - c][c]);
    const double fn = static_cast<double>(cm[c][1 - c]);
    r.precision[c] = safe_div(tp, tp + fp);
    r.recall[c] = safe_div(tp, tp + fn);
    r.f1[c] = safe_div(2.0 * tp, 2.0 * tp + fp + fn);
  }
  r.macro_f1 = 0.5 * (r.f1[0] + r.f1[1]);
  return r;
}

void check_labels(std::span<const int> xs, const char* what) {
  for (int x : xs)
    if (x != 0 && x != 1) throw InputError(std::string(what) + " contains a label outside {0, 1}");
}

}  // namespace

EvalResult macro_f1(std::span<const int> gold, std::span<const int> pred) {
  if (gold.size() != pred.size())
    throw InputError("macro_f1: gold has " + std::to_string(gold.size()) + " labels, predictions have " +
                     std::to_string(pred.size()));
  if (gold.empty()) throw InputError("macro_f1: empty label sequence");
  check_labels(gold, "gold");
  check_labels(pred, "predictions");
  std::array<std::array<std::size_t, 2>, 2> cm{};
  for (std::size_t i = 0; i < gold.size(); ++i) ++cm[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])];
  return from_confusion(cm);
}

SignificanceResult paired_bootstrap(std::span<const int> gold, std::span<const int> pred_a,
                                    std::span<const int> pred_b, std::size_t resamples, double confidence,
                                    std::uint64_t seed) {
  if (gold.size() != pred_a.size() || gold.size() != pred_b.size())
    throw InputError("paired_bootstrap: gold and both prediction vectors must have equal length");
  if (gold.empty()) throw InputError("paired_bootstrap: empty label sequence");
  if (resamples < 100) throw ConfigError("paired_bootstrap: at least 100 resamples required");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("paired_bootstrap: confidence must lie in (0,1)");

  SignificanceResult r;
  r.resamples = resamples;
  r.seed = seed;
  r.observed_delta = macro_f1(gold, pred_a).macro_f1 - macro_f1(gold, pred_b).macro_f1;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, gold.size() - 1);
  std::size_t not_better = 0;
  double delta_sum = 0.0;
  for (std::size_t b = 0; b < resamples; ++b) {
    std::array<std::array<std::size_t, 2>, 2> ca{}, cb{};
    for (std::size_t k = 0; k < gold.size(); ++k) {
      const std::size_t i = pick(rng);
      const auto g = static_cast<std::size_t>(gold[i]);
      ++ca[g][static_cast<std::size_t>(pred_a[i])];
      ++cb[g][static_cast<std::size_t>(pred_b[i])];
    }
    const double delta = from_confusion(ca).macro_f1 - from_confusion(cb).macro_f1;
    delta_sum += delta;
    if (delta <= 0.0) ++not_better;
  }
  r.mean_delta = delta_sum / static_cast<double>(resamples);
  r.p_value = static_cast<double>(not_better) / static_cast<double>(resamples);
  r.significant = r.p_value < 1.0 - confidence;
  return r;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

AttributionMassReport attribution_mass_report(const ModelParams& params_a, const ModelParams& params_b,
                                              const std::vector<TermId>& terms, std::span<const Example> data,
                                              AttributionMethod method, const AttributionOptions& options,
                                              std::size_t max_shading) {
  if (terms.empty()) throw InputError("attribution_mass_report: empty term set");
  if (!(params_a.config == params_b.config))
    throw ConfigError("attribution_mass_report: models differ in architecture or vocabulary");
  const std::unordered_set<TermId> set(terms.begin(), terms.end());

  AttributionMassReport r;
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& e : data) {
    bool hit = false;
    for (std::size_t i = 1; i < e.ids.size(); ++i) hit = hit || set.count(e.ids[i]) != 0;
    if (!hit) continue;
    const auto ra = raw_attribution(params_a, e.ids, method, options);
    const auto rb = raw_attribution(params_b, e.ids, method, options);
    for (std::size_t i = 1; i < e.ids.size(); ++i) {
      if (!set.count(e.ids[i])) continue;
      sum_a += std::abs(ra.scores[i]);
      sum_b += std::abs(rb.scores[i]);
      ++r.occurrences;
    }
    if (r.shading_a.size() < max_shading) {
      r.shading_a.push_back({e.doc_id, ra.predicted, e.ids, ra.scores});
      r.shading_b.push_back({e.doc_id, rb.predicted, e.ids, rb.scores});
    }
  }
  if (r.occurrences == 0) throw InputError("attribution_mass_report: no occurrence of the term set in the corpus");
  r.mass_a = sum_a / static_cast<double>(r.occurrences);
  r.mass_b = sum_b / static_cast<double>(r.occurrences);
  r.ratio = r.mass_a == 0.0 ? (r.mass_b == 0.0 ? 1.0 : INFINITY) : r.mass_b / r.mass_a;
  return r;
}

nlohmann::json attribution_dump_record(DocId doc_id, int predicted, std::span<const TermId> ids,
                                       std::span<const double> scores, const Vocabulary& vocab) {
  nlohmann::json rec;
  rec["doc_id"] = doc_id;
  rec["predicted"] = std::string(to_string(label_from_index(predicted)));
  auto occ = nlohmann::json::array();
  for (std::size_t i = 1; i < ids.size() && i < scores.size(); ++i)
    occ.push_back({vocab.term(ids[i]), i - 1, scores[i]});
  rec["occurrences"] = std::move(occ);
  return rec;
}

}  // namespace attrda
