// SPDX-License-Identifier: Apache-2.0
#include "attrda/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <mutex>
#include <sstream>

namespace attrda {

namespace {

std::vector<Variant> parse_variants(const std::string& key, const std::string& value) {
  std::vector<Variant> out;
  for (const auto& name : split_list(value)) {
    auto v = parse_variant(name);
    if (!v) throw ConfigError(key + ": unknown variant '" + name + "'; valid: " + variant_choices());
    if (std::find(out.begin(), out.end(), *v) != out.end()) throw ConfigError(key + ": duplicate variant '" + name + "'");
    out.push_back(*v);
  }
  return out;
}

std::string variant_list(const std::vector<Variant>& vs) {
  std::vector<std::string> names;
  for (Variant v : vs) names.emplace_back(to_string(v));
  return join_list(names);
}

bool contains(const std::vector<Variant>& vs, Variant v) { return std::find(vs.begin(), vs.end(), v) != vs.end(); }

std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * x);
  return buf;
}

}  // namespace

void ExperimentSpec::validate(bool check_sources) const {
  // base.variant is ignored; each listed variant is validated below.
  if (variants.empty()) throw ConfigError("experiment.variants must list at least one variant");
  if (seeds.empty()) throw ConfigError("experiment.seeds must list at least one seed");
  for (Variant v : sweep_variants) {
    if (v == Variant::Vanilla) throw ConfigError("experiment.sweep_variants: vanilla has no lambda to tune");
    if (!contains(variants, v))
      throw ConfigError("experiment.sweep_variants: '" + std::string(to_string(v)) + "' is not in experiment.variants");
  }
  if (!sweep_variants.empty() && base.lambda_grid.empty()) throw ConfigError("adapt.lambda_grid is empty");
  if (bootstrap_resamples < 100) throw ConfigError("experiment.bootstrap_resamples must be >= 100");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("experiment.confidence must lie in (0,1)");
  if (check_sources && !synthetic && directions.empty())
    throw ConfigError("experiment.directions is empty and experiment.synthetic is false");
  if (check_sources && !synthetic && archives.size() != directions.size())
    throw ConfigError("every direction needs direction.<name>.source and direction.<name>.target");
  for (Variant v : variants) {
    AdaptConfig c = base;
    c.variant = v;
    if (v == Variant::Vanilla) c.lambda = 0.0;
    c.validate();
  }
}

KeyValues ExperimentSpec::to_map() const {
  KeyValues kv = base.to_map();
  kv["experiment.name"] = name;
  kv["experiment.variants"] = variant_list(variants);
  kv["experiment.sweep_variants"] = variant_list(sweep_variants);
  kv["experiment.sweep_seed"] = std::to_string(sweep_seed);
  std::vector<std::string> s;
  for (auto x : seeds) s.push_back(std::to_string(x));
  kv["experiment.seeds"] = join_list(s);
  kv["experiment.bootstrap_resamples"] = std::to_string(bootstrap_resamples);
  kv["experiment.confidence"] = format_real(confidence);
  kv["experiment.bootstrap_seed"] = std::to_string(bootstrap_seed);
  kv["experiment.synthetic"] = synthetic ? "true" : "false";
  kv["experiment.data_seed"] = std::to_string(data_seed);
  if (synthetic)
    for (const auto& [k, v] : benchmark.to_map()) kv["benchmark." + k] = v;
  kv["experiment.directions"] = join_list(directions);
  for (std::size_t i = 0; i < directions.size() && i < archives.size(); ++i) {
    kv["direction." + directions[i] + ".source"] = archives[i].first;
    kv["direction." + directions[i] + ".target"] = archives[i].second;
  }
  return kv;
}

ExperimentSpec ExperimentSpec::from_map(const KeyValues& kv) {
  ExperimentSpec s;
  s.base = AdaptConfig::from_map(kv);
  for (const auto& [k, v] : section(kv, "experiment")) {
    const std::string key = "experiment." + k;
    if (k == "name") s.name = v;
    else if (k == "variants") s.variants = parse_variants(key, v);
    else if (k == "sweep_variants") s.sweep_variants = parse_variants(key, v);
    else if (k == "sweep_seed") s.sweep_seed = parse_u64(key, v);
    else if (k == "seeds") {
      s.seeds.clear();
      for (const auto& item : split_list(v)) s.seeds.push_back(parse_u64(key, item));
    } else if (k == "bootstrap_resamples") s.bootstrap_resamples = parse_size(key, v);
    else if (k == "confidence") s.confidence = parse_real(key, v);
    else if (k == "bootstrap_seed") s.bootstrap_seed = parse_u64(key, v);
    else if (k == "synthetic") s.synthetic = parse_bool(key, v);
    else if (k == "data_seed") s.data_seed = parse_u64(key, v);
    else if (k == "directions") s.directions = split_list(v);
    else throw ConfigError("unknown config key: " + key);
  }
  s.benchmark = SyntheticSpec::from_map(section(kv, "benchmark"));
  const KeyValues dirs = section(kv, "direction");
  for (const auto& [k, v] : dirs) {
    const auto dot = k.rfind('.');
    const std::string name = dot == std::string::npos ? "" : k.substr(0, dot);
    const std::string field = dot == std::string::npos ? k : k.substr(dot + 1);
    if ((field != "source" && field != "target") ||
        std::find(s.directions.begin(), s.directions.end(), name) == s.directions.end())
      throw ConfigError("unknown config key: direction." + k);
  }
  for (const auto& d : s.synthetic ? std::vector<std::string>{} : s.directions) {
    auto src = dirs.find(d + ".source");
    auto tgt = dirs.find(d + ".target");
    if (src == dirs.end() || tgt == dirs.end())
      throw ConfigError("direction '" + d + "' needs direction." + d + ".source and direction." + d + ".target");
    s.archives.emplace_back(src->second, tgt->second);
  }
  if (s.synthetic && s.directions.empty()) s.directions = {s.name};
  return s;
}

std::vector<Direction> load_directions(const ExperimentSpec& spec) {
  std::vector<Direction> out;
  if (spec.synthetic) {
    auto data = generate_synthetic(spec.benchmark, spec.data_seed);
    out.push_back({spec.directions.front(), preprocess_corpus(std::move(data.source)),
                   preprocess_corpus(std::move(data.target))});
    return out;
  }
  for (std::size_t i = 0; i < spec.directions.size(); ++i)
    out.push_back({spec.directions[i], read_corpus_archive(spec.archives[i].first),
                   read_corpus_archive(spec.archives[i].second)});
  return out;
}

ExperimentTable run_experiment(const std::vector<Direction>& directions, const ExperimentSpec& spec,
                               std::size_t jobs, const RunCallback& on_run) {
  spec.validate(false);  // corpora are passed in directly
  if (directions.empty()) throw ConfigError("experiment has no directions");
  const std::size_t nv = spec.variants.size(), nd = directions.size(), ns = spec.seeds.size();

  ExperimentTable table;
  table.name = spec.name;
  table.variants = spec.variants;
  table.seeds = spec.seeds;
  table.confidence = spec.confidence;
  for (const auto& d : directions) table.directions.push_back(d.name);
  table.cells.assign(nv, std::vector<CellResult>(nd));

  // Per-direction data and per-(direction, seed) MLM weights, shared by every variant.
  std::vector<PreparedData> data(nd);
  parallel_for(nd, jobs, [&](std::size_t d) {
    data[d] = prepare_data(directions[d].source, directions[d].target, spec.base);
  });
  std::vector<std::uint64_t> pre_seeds = spec.seeds;
  if (!spec.sweep_variants.empty() && std::find(pre_seeds.begin(), pre_seeds.end(), spec.sweep_seed) == pre_seeds.end())
    pre_seeds.push_back(spec.sweep_seed);
  std::vector<ModelParams> pretrained(nd * pre_seeds.size());
  parallel_for(pretrained.size(), jobs, [&](std::size_t i) {
    AdaptConfig c = spec.base;
    c.seed = pre_seeds[i % pre_seeds.size()];
    pretrained[i] = pretrain_encoder(data[i / pre_seeds.size()], c);
  });
  auto cached = [&](std::size_t d, std::uint64_t seed) -> const ModelParams& {
    const auto k = static_cast<std::size_t>(std::find(pre_seeds.begin(), pre_seeds.end(), seed) - pre_seeds.begin());
    return pretrained[d * pre_seeds.size() + k];
  };

  auto config_for = [&](std::size_t v) {
    AdaptConfig c = spec.base;
    c.variant = spec.variants[v];
    if (c.variant == Variant::Vanilla) c.lambda = 0.0;
    return c;
  };

  // Lambda tuning on the sweep seed.
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::size_t d = 0; d < nd; ++d) table.cells[v][d].lambda = config_for(v).lambda;
    if (!contains(spec.sweep_variants, spec.variants[v])) continue;
    for (std::size_t d = 0; d < nd; ++d) {
      AdaptConfig c = config_for(v);
      c.seed = spec.sweep_seed;
      auto sw = sweep_lambda(directions[d].source, directions[d].target, c, c.lambda_grid, &data[d],
                             &cached(d, spec.sweep_seed), jobs);
      table.cells[v][d].lambda = sw.best_lambda;
      table.cells[v][d].sweep = std::move(sw);
    }
  }

  for (auto& row : table.cells)
    for (auto& cell : row) {
      cell.reports.resize(ns);
      cell.test_f1.resize(ns);
    }
  std::mutex mu;
  parallel_for(nv * nd * ns, jobs, [&](std::size_t i) {
    const std::size_t v = i / (nd * ns), d = (i / ns) % nd, k = i % ns;
    AdaptConfig c = config_for(v);
    c.lambda = table.cells[v][d].lambda;
    c.seed = spec.seeds[k];
    RunOutcome out = run_adaptation(directions[d].source, directions[d].target, c, &data[d], &cached(d, c.seed));
    std::lock_guard lock(mu);
    if (on_run) on_run(v, d, k, out);
    table.cells[v][d].test_f1[k] = out.report.test.macro_f1;
    table.cells[v][d].reports[k] = std::move(out.report);
  });

  const auto van = std::find(spec.variants.begin(), spec.variants.end(), Variant::Vanilla);
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t d = 0; d < nd; ++d) {
      CellResult& cell = table.cells[v][d];
      cell.mean = mean(cell.test_f1);
      cell.std = sample_std(cell.test_f1);
      if (van == spec.variants.end()) continue;
      const CellResult& base = table.cells[static_cast<std::size_t>(van - spec.variants.begin())][d];
      std::vector<int> gold, a, b;
      for (std::size_t k = 0; k < ns; ++k) {
        const auto& ra = cell.reports[k];
        const auto& rb = base.reports[k];
        gold.insert(gold.end(), ra.test_gold.begin(), ra.test_gold.end());
        a.insert(a.end(), ra.test_predictions.begin(), ra.test_predictions.end());
        b.insert(b.end(), rb.test_predictions.begin(), rb.test_predictions.end());
      }
      cell.vs_vanilla = paired_bootstrap(gold, a, b, spec.bootstrap_resamples, spec.confidence, spec.bootstrap_seed);
    }
  return table;
}

nlohmann::json ExperimentTable::to_json(bool include_reports) const {
  nlohmann::json j;
  j["name"] = name;
  j["directions"] = directions;
  j["seeds"] = seeds;
  j["confidence"] = confidence;
  auto rows = nlohmann::json::array();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    nlohmann::json row;
    row["variant"] = std::string(to_string(variants[v]));
    auto cells_json = nlohmann::json::object();
    for (std::size_t d = 0; d < directions.size(); ++d) {
      const CellResult& c = cells[v][d];
      nlohmann::json cj = {{"lambda", c.lambda}, {"test_macro_f1", c.test_f1}, {"mean", c.mean}, {"std", c.std}};
      if (c.vs_vanilla)
        cj["vs_vanilla"] = {{"observed_delta", c.vs_vanilla->observed_delta},
                            {"mean_delta", c.vs_vanilla->mean_delta},
                            {"p_value", c.vs_vanilla->p_value},
                            {"significant", c.vs_vanilla->significant},
                            {"resamples", c.vs_vanilla->resamples},
                            {"seed", c.vs_vanilla->seed}};
      if (c.sweep) {
        auto sw = nlohmann::json::array();
        for (std::size_t i = 0; i < c.sweep->grid.size(); ++i)
          sw.push_back({{"lambda", c.sweep->grid[i]}, {"target_val_macro_f1", c.sweep->reports[i].target_val_macro_f1}});
        cj["sweep"] = {{"best_lambda", c.sweep->best_lambda}, {"runs", sw}};
      }
      if (include_reports) {
        auto reps = nlohmann::json::array();
        for (const auto& r : c.reports) reps.push_back(r.to_json());
        cj["reports"] = std::move(reps);
      }
      cells_json[directions[d]] = std::move(cj);
    }
    row["cells"] = std::move(cells_json);
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j;
}

std::string ExperimentTable::render_text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"variant"};
  for (const auto& d : directions) header.push_back(d);
  grid.push_back(header);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<std::string> row = {std::string(to_string(variants[v]))};
    for (std::size_t d = 0; d < directions.size(); ++d) {
      const CellResult& c = cells[v][d];
      std::string s = pct(c.mean) + " ±" + pct(c.std);
      if (variants[v] != Variant::Vanilla && c.vs_vanilla && c.vs_vanilla->significant) s += '*';
      row.push_back(s);
    }
    grid.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream out;
  for (const auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << row[i];
      if (i + 1 < row.size()) out << std::string(width[i] - row[i].size() + 2, ' ');
    }
    out << '\n';
  }
  char level[32];
  std::snprintf(level, sizeof level, "%.3g", 1.0 - confidence);
  out << "macro-F1 x100 over " << seeds.size() << " seed(s); * p < " << level << " vs vanilla (paired bootstrap)\n";
  return out.str();
}

}  // namespace attrda
