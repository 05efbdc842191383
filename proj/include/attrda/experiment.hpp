// SPDX-License-Identifier: Apache-2.0
//
// Multi-seed experiments: variants x directions, optional lambda tuning on one
// seed, mean/std of target-test macro-F1, and paired-bootstrap significance
// against the vanilla row on matched seeds.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "attrda/adapt.hpp"
#include "attrda/config.hpp"
#include "attrda/corpus.hpp"
#include "attrda/eval.hpp"

namespace attrda {

struct Direction {
  std::string name;
  CorpusSplit source, target;
};

struct ExperimentSpec {
  std::string name = "experiment";
  AdaptConfig base;
  std::vector<Variant> variants = {Variant::Vanilla, Variant::DomSpec};
  std::vector<Variant> sweep_variants;  // lambda tuned on sweep_seed over base.lambda_grid
  std::uint64_t sweep_seed = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t bootstrap_resamples = 1000;
  double confidence = 0.95;
  std::uint64_t bootstrap_seed = 0;

  // Corpus sources: either the synthetic benchmark or archive pairs.
  bool synthetic = false;
  std::uint64_t data_seed = 0;
  SyntheticSpec benchmark;
  std::vector<std::string> directions;
  std::vector<std::pair<std::string, std::string>> archives;  // (source, target) per direction

  // check_sources: directions must name archives unless synthetic.
  void validate(bool check_sources = true) const;
  KeyValues to_map() const;
  // experiment.*, direction.<name>.{source,target}, benchmark.* plus the
  // adaptation sections. Unknown experiment/direction keys are errors.
  static ExperimentSpec from_map(const KeyValues& kv);
};

struct CellResult {
  double lambda = 0.0;
  std::vector<double> test_f1;  // per seed
  double mean = 0.0;
  double std = 0.0;
  std::optional<SignificanceResult> vs_vanilla;
  std::vector<RunReport> reports;
  std::optional<SweepResult> sweep;
};

struct ExperimentTable {
  std::string name;
  std::vector<std::string> directions;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  double confidence = 0.95;
  std::vector<std::vector<CellResult>> cells;  // [variant][direction]

  nlohmann::json to_json(bool include_reports = false) const;
  std::string render_text() const;
};

// Called once per finished run; calls are serialised.
using RunCallback = std::function<void(std::size_t variant, std::size_t direction, std::size_t seed_index,
                                       const RunOutcome& outcome)>;

ExperimentTable run_experiment(const std::vector<Direction>& directions, const ExperimentSpec& spec,
                               std::size_t jobs = 1, const RunCallback& on_run = {});

// Materialises the corpora an ExperimentSpec refers to.
std::vector<Direction> load_directions(const ExperimentSpec& spec);

}  // namespace attrda
