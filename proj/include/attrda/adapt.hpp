// SPDX-License-Identifier: Apache-2.0
//
// Full adaptation runs: vocabulary, domain classifier, MLM adaptation on the
// unlabeled target, then fine-tuning on the labeled source with a penalty on
// terms re-extracted after every epoch.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "attrda/attribution.hpp"
#include "attrda/config.hpp"
#include "attrda/corpus.hpp"
#include "attrda/domain_terms.hpp"
#include "attrda/encoder.hpp"
#include "attrda/eval.hpp"
#include "attrda/text.hpp"
#include "attrda/training.hpp"

namespace attrda {

enum class Variant { Vanilla, DomSpec, PreDef, Comb, Chi2Pen };
std::string_view to_string(Variant v);
// Accepts "dom_spec" and "dom-spec" spellings.
std::optional<Variant> parse_variant(std::string_view text);
std::string variant_choices();

const std::vector<double>& default_lambda_grid();

struct AdaptConfig {
  Variant variant = Variant::Vanilla;
  AttributionMethod method = AttributionMethod::DeepLift;
  AttributionOptions attribution;
  double lambda = 0.0;
  std::size_t n = 750;  // |S_LR|
  std::size_t m = 250;  // top-M of each class ranking
  bool hate_only = false;  // intersect with the hate ranking only
  std::size_t epochs = 6;
  std::size_t batch_size = 8;
  std::size_t patience = 3;
  std::uint64_t seed = 0;

  std::size_t min_freq = 2;
  std::string stoplist_path;  // empty: bundled list
  std::string predef_path;    // empty: bundled list
  double chi2_confidence = 0.95;

  bool enforce_grid = false;  // lambda must be a member of lambda_grid
  std::vector<double> lambda_grid = default_lambda_grid();

  EncoderConfig encoder;  // vocab_size filled from the built vocabulary
  AdamWConfig optimizer;
  MlmConfig mlm;
  DomainLRHyper domain_lr;

  void validate() const;
  // Sections: adapt.*, encoder.*, optim.*, mlm.*, domain_lr.*
  KeyValues to_map() const;
  // Unknown keys inside the recognised sections are an error; other
  // sections are ignored so experiment files can carry them.
  static AdaptConfig from_map(const KeyValues& kv, AdaptConfig base);
  static AdaptConfig from_map(const KeyValues& kv) { return from_map(kv, AdaptConfig{}); }
};

// Everything a run derives from the corpora alone; reusable across variants.
struct PreparedData {
  Vocabulary vocab;
  std::vector<Example> source_train, target_val, target_test;
  std::vector<std::vector<TermId>> target_sequences;  // MLM input
  EncoderConfig encoder;
};

PreparedData prepare_data(const CorpusSplit& source, const CorpusSplit& target, const AdaptConfig& config);

// MLM-adapted weights; depends on seed, encoder, mlm config and data only.
ModelParams pretrain_encoder(const PreparedData& data, const AdaptConfig& config, MlmStats* stats = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<std::string> penalized;  // penalty set used during this epoch
  std::optional<RankedTermList> te_s;  // extracted after this epoch
  double mean_loss = 0.0;
  double mean_attribution = 0.0;
  std::size_t penalized_occurrences = 0;
  double source_train_accuracy = 0.0;
  double target_val_macro_f1 = 0.0;
};

struct RunReport {
  KeyValues config;
  std::optional<RankedTermList> s_lr;
  std::vector<double> mlm_loss;
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;
  bool early_stopped = false;
  double target_val_macro_f1 = 0.0;
  EvalResult test;
  std::vector<DocId> test_ids;
  std::vector<int> test_gold;
  std::vector<int> test_predictions;
  std::string manifest;  // path or digest of the producing manifest, when known

  nlohmann::json to_json() const;
};

struct RunOutcome {
  RunReport report;
  ModelParams model;  // selected checkpoint
};

// `data` and `pretrained` are optional caches; when absent they are computed.
RunOutcome run_adaptation(const CorpusSplit& source, const CorpusSplit& target, const AdaptConfig& config,
                          const PreparedData* data = nullptr, const ModelParams* pretrained = nullptr);

// Penalty set for epoch 1 and the constant lists used by pre_def/comb/chi2_pen.
RankedTermList resolved_predef(const AdaptConfig& config, const Vocabulary& vocab);

struct SweepResult {
  double best_lambda = 0.0;
  std::vector<double> grid;
  std::vector<RunReport> reports;
};

SweepResult sweep_lambda(const CorpusSplit& source, const CorpusSplit& target, const AdaptConfig& base,
                         const std::vector<double>& grid, const PreparedData* data = nullptr,
                         const ModelParams* pretrained = nullptr, std::size_t jobs = 1);

// Writes report.json, checkpoint.txt, s_lr.tsv and te_s_epoch<k>.tsv under dir.
void write_run_outputs(const RunOutcome& outcome, const std::filesystem::path& dir);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace attrda
