// SPDX-License-Identifier: Apache-2.0
// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. The benchmark criteria share one run of the bundled
// synthetic experiment.
#include <chrono>
#include <cstdio>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "attrda/adapt.hpp"
#include "attrda/experiment.hpp"
#include "attrda/resources.hpp"
#include "gradient_checks.hpp"
#include "oracles.hpp"

using namespace attrda;
using namespace attrda::testing;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-24s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t families = 0, min_coords = 1000;
  bool ok = true;
  for (std::uint64_t seed : {101u, 102u}) {
    const auto g = check_parameter_gradients(seed, 5, 1e-4);
    families = g.max_rel_error.size();
    for (const auto& [fam, err] : g.max_rel_error) {
      worst = std::max(worst, err);
      min_coords = std::min(min_coords, g.coords.at(fam));
    }
  }
  double worst_alpha = 0.0;
  for (std::uint64_t seed : {201u, 202u}) worst_alpha = std::max(worst_alpha, check_attention_gradients(seed, 10, 1e-4));
  const double secs = seconds_since(t0);
  ok = worst < 1e-4 && worst_alpha < 1e-4 && min_coords >= 5 && secs < 60.0;
  report(ok, "gradient-correctness",
         std::to_string(families) + " families, max rel err " + fmt("%.2e", worst) + ", grad-alpha " +
             fmt("%.2e", worst_alpha) + ", >=" + std::to_string(min_coords) + " coords each, " + fmt("%.2f", secs) + "s");
}

void class_mean_oracle(const PreparedData& data, const ModelParams& model) {
  std::vector<InstanceAttribution> inst;
  for (std::size_t j = 0; j < 200 && j < data.source_train.size(); ++j) {
    const auto& e = data.source_train[j];
    inst.push_back(normalize(e.doc_id, e.ids, raw_attribution(model, e.ids, AttributionMethod::DeepLift),
                             AttributionMethod::DeepLift, data.vocab));
  }
  double worst = 0.0;
  std::size_t terms = 0;
  bool same_support = true;
  for (Label cls : {Label::Hate, Label::NonHate}) {
    const auto agg = aggregate_corpus(inst, cls);
    const auto oracle = cp_atr_oracle(inst, cls);
    same_support = same_support && agg.terms.size() == oracle.size();
    for (const auto& [t, v] : oracle) worst = std::max(worst, std::abs(agg.cp_atr(t) - v));
    terms += oracle.size();
  }
  report(inst.size() == 200 && same_support && worst <= 1e-12, "class-mean-oracle",
         std::to_string(inst.size()) + " instances, " + std::to_string(terms) + " class-term scores, max abs diff " +
             fmt("%.2e", worst));
}

void chi2_oracle_check(const Direction& dir, const PreparedData& data) {
  const auto list = chi_squared_terms(dir.source.train, dir.target.train, data.vocab, 0.95);
  const auto oracle = chi2_oracle(dir.source.train, dir.target.train, data.vocab);
  const double crit = chi_squared_critical(0.95);
  double worst = 0.0;
  std::size_t expected = 0, clamped = 0;
  bool membership = true;
  for (const auto& [term, row] : oracle) {
    const bool keep = row.a + row.c > 0 && row.b + row.d > 0 && row.a / (row.a + row.b) > row.c / (row.c + row.d) &&
                      row.chi > crit;
    expected += keep;
    membership = membership && list.contains(term) == keep;
    if (std::abs(row.a * row.d - row.b * row.c) <= (row.a + row.b + row.c + row.d) / 2) {
      ++clamped;
      worst = std::max(worst, std::abs(yates_chi_squared({row.a, row.b, row.c, row.d})));
    }
  }
  for (const auto& e : list.entries) worst = std::max(worst, std::abs(e.score - oracle.at(e.term).chi));
  const bool hand = std::abs(yates_chi_squared({30, 10, 10, 30}) - yates_oracle(30, 10, 10, 30)) <= 1e-9 &&
                    yates_chi_squared({20, 20, 20, 20}) == 0.0 && yates_chi_squared({11, 10, 10, 10}) == 0.0;
  report(membership && list.size() == expected && worst <= 1e-9 && hand, "chi2-oracle",
         std::to_string(oracle.size()) + " terms checked, " + std::to_string(expected) + " significant, " +
             std::to_string(clamped) + " clamped tables, max abs diff " + fmt("%.2e", worst) +
             (hand ? ", hand/symmetric/clamp cases ok" : ", hand cases FAILED"));
}

void lambda_zero(const Direction& dir, const AdaptConfig& base) {
  AdaptConfig v = base, d = base;
  v.variant = Variant::Vanilla;
  v.lambda = 0.0;
  v.seed = 1;
  d.variant = Variant::DomSpec;
  d.lambda = 0.0;
  d.seed = 1;
  const auto rv = run_adaptation(dir.source, dir.target, v).report;
  const auto rd = run_adaptation(dir.source, dir.target, d).report;
  const double diff = std::abs(rv.test.macro_f1 - rd.test.macro_f1);
  report(rv.test_predictions == rd.test_predictions && diff <= 1e-6, "lambda-zero-equivalence",
         std::string(rv.test_predictions == rd.test_predictions ? "identical" : "DIFFERENT") + " test predictions (" +
             std::to_string(rv.test_predictions.size()) + "), |dF1| " + fmt("%.1e", diff));
}

void metric_correctness() {
  const std::vector<int> gold = {1, 1, 0, 0}, pred = {1, 0, 0, 0};
  const double m = macro_f1(gold, pred).macro_f1;
  const bool exact = m == (2.0 / 3.0 + 0.8) / 2.0;
  std::mt19937_64 rng(17);
  std::bernoulli_distribution coin(0.5);
  std::vector<int> g(200), p(200);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = coin(rng), p[i] = coin(rng);
  const double base = macro_f1(g, p).macro_f1;
  std::vector<std::size_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), 0);
  bool invariant = true;
  for (int s = 0; s < 100; ++s) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> g2, p2;
    for (auto i : idx) g2.push_back(g[i]), p2.push_back(p[i]);
    invariant = invariant && macro_f1(g2, p2).macro_f1 == base;
  }
  report(exact && invariant, "metric-correctness",
         "hand example " + fmt("%.16f", m) + (exact ? " (exact)" : " (MISMATCH)") + ", 100 shuffles " +
             (invariant ? "invariant" : "NOT invariant"));
}

void determinism(const Direction& dir, const AdaptConfig& base) {
  AdaptConfig c = base;
  c.variant = Variant::DomSpec;
  c.lambda = 10.0;
  c.seed = 3;
  const auto a = run_adaptation(dir.source, dir.target, c);
  const auto b = run_adaptation(dir.source, dir.target, c);
  bool params_equal = true;
  auto ta = const_cast<ModelParams&>(a.model).tensors(), tb = const_cast<ModelParams&>(b.model).tensors();
  for (std::size_t k = 0; k < ta.size(); ++k)
    params_equal = params_equal && std::equal(ta[k].data.begin(), ta[k].data.end(), tb[k].data.begin());
  const bool report_equal = a.report.to_json().dump() == b.report.to_json().dump();
  report(params_equal && report_equal, "determinism",
         std::string("repeat dom_spec run: report ") + (report_equal ? "identical" : "DIFFERS") + ", parameters " +
             (params_equal ? "bit-identical" : "DIFFER"));
}

}  // namespace

int main() {
  try {
    gradient_correctness();
    metric_correctness();

    const auto spec = ExperimentSpec::from_map(parse_key_values(resources::synthetic_benchmark()));
    const auto dirs = load_directions(spec);
    const Direction& dir = dirs.front();
    const auto data = prepare_data(dir.source, dir.target, spec.base);
    const std::vector<std::string>& planted = spec.benchmark.confound_terms;
    std::vector<TermId> confound_ids;
    for (const auto& t : planted) confound_ids.push_back(data.vocab.id(t));

    chi2_oracle_check(dir, data);

    const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t ns = spec.seeds.size();
    std::size_t vi = 0, di = 0;
    for (std::size_t v = 0; v < spec.variants.size(); ++v) {
      if (spec.variants[v] == Variant::Vanilla) vi = v;
      if (spec.variants[v] == Variant::DomSpec) di = v;
    }
    std::vector<ModelParams> vanilla_models(ns), domspec_models(ns);
    std::vector<RunReport> domspec_reports(ns);
    std::mutex mu;
    const auto t0 = Clock::now();
    const auto table = run_experiment(dirs, spec, jobs, [&](std::size_t v, std::size_t, std::size_t k, const RunOutcome& o) {
      std::lock_guard<std::mutex> lock(mu);
      if (v == vi) vanilla_models[k] = o.model;
      if (v == di) domspec_models[k] = o.model, domspec_reports[k] = o.report;
    });
    const double exp_secs = seconds_since(t0);
    std::printf("%s", table.render_text().c_str());
    std::printf("benchmark: %zu source train, %zu target test, %zu seeds, %zu jobs, %.1fs\n", dir.source.train.size(),
                dir.target.test.size(), ns, jobs, exp_secs);

    class_mean_oracle(data, vanilla_models[0]);
    lambda_zero(dir, spec.base);

    // Extraction soundness: S_LR holds every planted confound and the te^S
    // extracted after epoch 2 holds at least 80% of them, for every seed.
    {
      bool ok = true;
      std::ostringstream detail;
      for (std::size_t k = 0; k < ns; ++k) {
        const auto& r = domspec_reports[k];
        std::size_t in_slr = 0, in_tes = 0;
        for (const auto& t : planted) {
          in_slr += r.s_lr && r.s_lr->contains(t);
          in_tes += r.epochs.size() >= 2 && r.epochs[1].te_s && r.epochs[1].te_s->contains(t);
        }
        ok = ok && in_slr == planted.size() && 10 * in_tes >= 8 * planted.size();
        detail << (k ? "; " : "") << "seed " << spec.seeds[k] << ": S_LR " << in_slr << "/" << planted.size()
               << ", te^S@2 " << in_tes << "/" << planted.size();
      }
      report(ok, "extraction-soundness", detail.str());
    }

    // Penalization effect: dom_spec / vanilla attribution mass on the confounds.
    {
      bool ok = true;
      std::ostringstream detail;
      const double lambda = table.cells[di][0].lambda;
      detail << "lambda " << lambda << "; ratios";
      for (std::size_t k = 0; k < ns; ++k) {
        const auto m = attribution_mass_report(vanilla_models[k], domspec_models[k], confound_ids, data.source_train,
                                               AttributionMethod::DeepLift, {}, 0);
        ok = ok && m.ratio <= 0.5;
        detail << " " << fmt("%.3f", m.ratio);
      }
      const auto& grid = default_lambda_grid();
      ok = ok && std::find(grid.begin(), grid.end(), lambda) != grid.end();
      report(ok, "penalization-effect", detail.str());
    }

    // Adaptation benefit.
    {
      const auto& van = table.cells[vi][0];
      const auto& dom = table.cells[di][0];
      const double gain = 100.0 * (dom.mean - van.mean);
      const bool sig = dom.vs_vanilla && dom.vs_vanilla->significant && dom.vs_vanilla->resamples == 1000;
      const bool sized = dir.source.train.size() >= 2000 && dir.target.test.size() >= 1000 && ns == 5;
      const bool ok = gain >= 5.0 && sig && sized && exp_secs < 1800.0;
      report(ok, "adaptation-benefit",
             "vanilla " + fmt("%.1f", 100 * van.mean) + " vs dom_spec " + fmt("%.1f", 100 * dom.mean) + " (+" +
                 fmt("%.1f", gain) + "), bootstrap p=" + fmt("%.3f", dom.vs_vanilla ? dom.vs_vanilla->p_value : 1.0) +
                 ", runtime " + fmt("%.0f", exp_secs) + "s");
    }

    determinism(dir, spec.base);
  } catch (const std::exception& e) {
    std::printf("FAIL  %-24s %s\n", "harness", e.what());
    return 1;
  }
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
