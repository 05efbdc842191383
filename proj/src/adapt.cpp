// SPDX-License-Identifier: Apache-2.0
#include "attrda/adapt.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

namespace attrda {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::DomSpec: return "dom_spec";
    case Variant::PreDef: return "pre_def";
    case Variant::Comb: return "comb";
    case Variant::Chi2Pen: return "chi2_pen";
  }
  return "vanilla";
}

std::optional<Variant> parse_variant(std::string_view text) {
  std::string t(text);
  std::replace(t.begin(), t.end(), '-', '_');
  for (Variant v : {Variant::Vanilla, Variant::DomSpec, Variant::PreDef, Variant::Comb, Variant::Chi2Pen})
    if (t == to_string(v)) return v;
  return std::nullopt;
}

std::string variant_choices() { return "vanilla, dom_spec, pre_def, comb, chi2_pen"; }

const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> grid = {0.01, 0.05, 0.1, 1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0};
  return grid;
}

void AdaptConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("adapt.lambda must be a finite value >= 0");
  if (variant == Variant::Vanilla && lambda > 0.0)
    throw ConfigError("variant vanilla takes no penalty; adapt.lambda must be 0");
  if (variant == Variant::Chi2Pen && method != AttributionMethod::DeepLift)
    throw ConfigError("variant chi2_pen penalizes DeepLIFT scores; set adapt.method=deeplift");
  if (n == 0) throw ConfigError("adapt.n must be positive");
  if (m == 0) throw ConfigError("adapt.m must be positive");
  if (epochs == 0) throw ConfigError("adapt.epochs must be positive");
  if (batch_size == 0) throw ConfigError("adapt.batch_size must be positive");
  if (patience == 0) throw ConfigError("adapt.patience must be positive");
  if (min_freq == 0) throw ConfigError("adapt.min_freq must be positive");
  if (!(chi2_confidence > 0.0 && chi2_confidence < 1.0))
    throw ConfigError("adapt.chi2_confidence must lie in (0,1)");
  if (enforce_grid && std::find(lambda_grid.begin(), lambda_grid.end(), lambda) == lambda_grid.end())
    throw ConfigError("adapt.lambda=" + format_real(lambda) + " is not in adapt.lambda_grid");
  if (!(optimizer.learning_rate > 0.0) || !(mlm.learning_rate > 0.0))
    throw ConfigError("learning rates must be positive");
  if (!(mlm.mask_prob > 0.0 && mlm.mask_prob < 1.0)) throw ConfigError("mlm.mask_prob must lie in (0,1)");
  if (mlm.batch_size == 0) throw ConfigError("mlm.batch_size must be positive");
}

KeyValues AdaptConfig::to_map() const {
  KeyValues kv;
  kv["adapt.variant"] = std::string(to_string(variant));
  kv["adapt.method"] = std::string(to_string(method));
  kv["adapt.head_aggregation"] = attribution.aggregation == HeadAggregation::Mean ? "mean" : "sum";
  kv["adapt.lambda"] = format_real(lambda);
  kv["adapt.n"] = std::to_string(n);
  kv["adapt.m"] = std::to_string(m);
  kv["adapt.hate_only"] = hate_only ? "true" : "false";
  kv["adapt.epochs"] = std::to_string(epochs);
  kv["adapt.batch_size"] = std::to_string(batch_size);
  kv["adapt.patience"] = std::to_string(patience);
  kv["adapt.seed"] = std::to_string(seed);
  kv["adapt.min_freq"] = std::to_string(min_freq);
  kv["adapt.stoplist"] = stoplist_path;
  kv["adapt.predef"] = predef_path;
  kv["adapt.chi2_confidence"] = format_real(chi2_confidence);
  kv["adapt.enforce_grid"] = enforce_grid ? "true" : "false";
  std::vector<std::string> grid;
  for (double l : lambda_grid) grid.push_back(format_real(l));
  kv["adapt.lambda_grid"] = join_list(grid);
  for (const auto& [k, v] : encoder.to_map()) kv["encoder." + k] = v;
  kv["optim.lr"] = format_real(optimizer.learning_rate);
  kv["optim.beta1"] = format_real(optimizer.beta1);
  kv["optim.beta2"] = format_real(optimizer.beta2);
  kv["optim.eps"] = format_real(optimizer.eps);
  kv["optim.weight_decay"] = format_real(optimizer.weight_decay);
  kv["mlm.lr"] = format_real(mlm.learning_rate);
  kv["mlm.epochs"] = std::to_string(mlm.epochs);
  kv["mlm.batch_size"] = std::to_string(mlm.batch_size);
  kv["mlm.mask_prob"] = format_real(mlm.mask_prob);
  kv["mlm.weight_decay"] = format_real(mlm.weight_decay);
  kv["domain_lr.l2"] = format_real(domain_lr.l2);
  kv["domain_lr.epochs"] = std::to_string(domain_lr.epochs);
  kv["domain_lr.lr"] = format_real(domain_lr.learning_rate);
  return kv;
}

AdaptConfig AdaptConfig::from_map(const KeyValues& kv, AdaptConfig c) {
  for (const auto& [k, v] : section(kv, "adapt")) {
    const std::string key = "adapt." + k;
    if (k == "variant") {
      auto p = parse_variant(v);
      if (!p) throw ConfigError(key + ": unknown variant '" + v + "'; valid: " + variant_choices());
      c.variant = *p;
    } else if (k == "method") {
      auto p = parse_attribution_method(v);
      if (!p) throw ConfigError(key + ": expected scaled_attention|deeplift, got '" + v + "'");
      c.method = *p;
    } else if (k == "head_aggregation") {
      if (v == "mean") c.attribution.aggregation = HeadAggregation::Mean;
      else if (v == "sum") c.attribution.aggregation = HeadAggregation::Sum;
      else throw ConfigError(key + ": expected mean|sum, got '" + v + "'");
    } else if (k == "lambda") c.lambda = parse_real(key, v);
    else if (k == "n") c.n = parse_size(key, v);
    else if (k == "m") c.m = parse_size(key, v);
    else if (k == "hate_only") c.hate_only = parse_bool(key, v);
    else if (k == "epochs") c.epochs = parse_size(key, v);
    else if (k == "batch_size") c.batch_size = parse_size(key, v);
    else if (k == "patience") c.patience = parse_size(key, v);
    else if (k == "seed") c.seed = parse_u64(key, v);
    else if (k == "min_freq") c.min_freq = parse_size(key, v);
    else if (k == "stoplist") c.stoplist_path = v;
    else if (k == "predef") c.predef_path = v;
    else if (k == "chi2_confidence") c.chi2_confidence = parse_real(key, v);
    else if (k == "enforce_grid") c.enforce_grid = parse_bool(key, v);
    else if (k == "lambda_grid") c.lambda_grid = parse_real_list(key, v);
    else throw ConfigError("unknown config key: " + key);
  }
  c.encoder = EncoderConfig::from_map(section(kv, "encoder"), c.encoder);
  for (const auto& [k, v] : section(kv, "optim")) {
    const std::string key = "optim." + k;
    if (k == "lr") c.optimizer.learning_rate = parse_real(key, v);
    else if (k == "beta1") c.optimizer.beta1 = parse_real(key, v);
    else if (k == "beta2") c.optimizer.beta2 = parse_real(key, v);
    else if (k == "eps") c.optimizer.eps = parse_real(key, v);
    else if (k == "weight_decay") c.optimizer.weight_decay = parse_real(key, v);
    else throw ConfigError("unknown config key: " + key);
  }
  for (const auto& [k, v] : section(kv, "mlm")) {
    const std::string key = "mlm." + k;
    if (k == "lr") c.mlm.learning_rate = parse_real(key, v);
    else if (k == "epochs") c.mlm.epochs = parse_size(key, v);
    else if (k == "batch_size") c.mlm.batch_size = parse_size(key, v);
    else if (k == "mask_prob") c.mlm.mask_prob = parse_real(key, v);
    else if (k == "weight_decay") c.mlm.weight_decay = parse_real(key, v);
    else throw ConfigError("unknown config key: " + key);
  }
  for (const auto& [k, v] : section(kv, "domain_lr")) {
    const std::string key = "domain_lr." + k;
    if (k == "l2") c.domain_lr.l2 = parse_real(key, v);
    else if (k == "epochs") c.domain_lr.epochs = parse_size(key, v);
    else if (k == "lr") c.domain_lr.learning_rate = parse_real(key, v);
    else throw ConfigError("unknown config key: " + key);
  }
  return c;
}

namespace {

void require_labels(const std::vector<Document>& docs, const char* what) {
  if (docs.empty()) throw InputError(std::string(what) + " is empty");
  for (const auto& d : docs)
    if (!d.label) throw InputError(std::string(what) + " document " + std::to_string(d.id) + " has no label");
}

std::vector<char> penalty_mask(const std::vector<TermId>& ids, std::size_t vocab_size) {
  return Penalty::mask_for(ids, vocab_size);
}

std::vector<TermId> union_ids(const std::vector<TermId>& a, const std::vector<TermId>& b) {
  std::set<TermId> s(a.begin(), a.end());
  s.insert(b.begin(), b.end());
  return {s.begin(), s.end()};
}

std::vector<std::string> names(const std::vector<TermId>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TermId id : ids) out.push_back(vocab.term(id));
  std::sort(out.begin(), out.end());
  return out;
}

// Class rankings from a post-epoch pass over source train on a frozen snapshot.
std::pair<RankedTermList, RankedTermList> class_rankings(const ModelParams& params, const PreparedData& data,
                                                          const AdaptConfig& config) {
  std::vector<InstanceAttribution> atts;
  atts.reserve(data.source_train.size());
  for (const auto& e : data.source_train) {
    const RawAttribution raw = raw_attribution(params, e.ids, config.method, config.attribution);
    atts.push_back(normalize(e.doc_id, e.ids, raw, config.method, data.vocab));
  }
  return {rank_cp(aggregate_corpus(atts, Label::Hate), data.vocab),
          rank_cp(aggregate_corpus(atts, Label::NonHate), data.vocab)};
}

nlohmann::json list_json(const RankedTermList& list) {
  auto arr = nlohmann::json::array();
  for (const auto& e : list.entries) arr.push_back({e.term, e.score});
  return arr;
}

nlohmann::json eval_json(const EvalResult& r) {
  return {{"macro_f1", r.macro_f1},
          {"n", r.n},
          {"precision", {{"non-hate", r.precision[0]}, {"hate", r.precision[1]}}},
          {"recall", {{"non-hate", r.recall[0]}, {"hate", r.recall[1]}}},
          {"f1", {{"non-hate", r.f1[0]}, {"hate", r.f1[1]}}},
          {"confusion", r.confusion}};
}

}  // namespace

RankedTermList resolved_predef(const AdaptConfig& config, const Vocabulary& vocab) {
  return resolve(config.predef_path.empty() ? predefined_terms() : read_term_list(config.predef_path), vocab);
}

PreparedData prepare_data(const CorpusSplit& source, const CorpusSplit& target, const AdaptConfig& config) {
  require_labels(source.train, "source train");
  require_labels(target.val, "target val");
  require_labels(target.test, "target test");
  if (target.train.empty()) throw InputError("target train is empty");
  for (const auto& d : target.train)
    if (d.label) throw InputError("target train document " + std::to_string(d.id) + " carries a label");

  PreparedData p;
  const Stoplist custom = config.stoplist_path.empty() ? Stoplist{} : load_stoplist(config.stoplist_path);
  p.vocab = Vocabulary::build(source, target, config.min_freq,
                              config.stoplist_path.empty() ? default_stoplist() : custom);
  p.encoder = config.encoder;
  p.encoder.vocab_size = p.vocab.size();
  p.encoder.validate();
  const std::size_t max_len = p.encoder.max_len;
  p.source_train = make_examples(source.train, p.vocab, max_len);
  p.target_val = make_examples(target.val, p.vocab, max_len);
  p.target_test = make_examples(target.test, p.vocab, max_len);
  for (const auto& d : target.train) p.target_sequences.push_back(encode(d, p.vocab, max_len));
  return p;
}

ModelParams pretrain_encoder(const PreparedData& data, const AdaptConfig& config, MlmStats* stats) {
  ModelParams init = ModelParams::init(data.encoder, derive_seed(config.seed, 1));
  return mlm_pretrain(std::move(init), data.target_sequences, config.mlm, derive_seed(config.seed, 2), stats);
}

RunOutcome run_adaptation(const CorpusSplit& source, const CorpusSplit& target, const AdaptConfig& config,
                          const PreparedData* data_cache, const ModelParams* pretrained) {
  config.validate();
  std::optional<PreparedData> owned;
  if (!data_cache) owned = prepare_data(source, target, config);
  const PreparedData& data = data_cache ? *data_cache : *owned;
  const Vocabulary& vocab = data.vocab;
  const std::size_t V = vocab.size();

  RunOutcome out;
  RunReport& rep = out.report;
  {
    AdaptConfig resolved = config;
    resolved.encoder = data.encoder;
    rep.config = resolved.to_map();
  }

  // Term lists fixed for the whole run.
  const bool extracts = config.variant == Variant::DomSpec || config.variant == Variant::Comb;
  std::vector<TermId> constant_terms;
  if (extracts) {
    const DomainLRModel lr = train_domain_lr(source.train, target.train, vocab, config.domain_lr);
    rep.s_lr = top_n_source_terms(lr, vocab, config.n);
  }
  if (config.variant == Variant::PreDef || config.variant == Variant::Comb)
    constant_terms = resolved_predef(config, vocab).ids();
  if (config.variant == Variant::Chi2Pen)
    constant_terms = chi_squared_terms(source.train, target.train, vocab, config.chi2_confidence).ids();

  ModelParams params;
  if (pretrained) {
    if (!(pretrained->config == data.encoder))
      throw ConfigError("cached pretrained encoder does not match the run's encoder config");
    params = *pretrained;
  } else {
    MlmStats stats;
    params = pretrain_encoder(data, config, &stats);
    rep.mlm_loss = stats.epoch_loss;
  }

  AdamW opt(params.config, config.optimizer);
  std::mt19937_64 rng(derive_seed(config.seed, 3));
  Penalty penalty;
  penalty.lambda = config.variant == Variant::Vanilla ? 0.0 : config.lambda;
  penalty.method = config.method;
  penalty.options = config.attribution;

  std::vector<TermId> current = constant_terms;  // epoch 1 set; empty for dom_spec
  std::vector<int> val_gold;
  for (const auto& e : data.target_val) val_gold.push_back(e.label);

  double best = -1.0;
  ModelParams best_params = params;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.penalized = names(current, vocab);
    penalty.terms = penalty_mask(current, V);

    const EpochStats st = fine_tune_epoch(params, opt, data.source_train, &penalty, config.batch_size, rng);
    rec.mean_loss = st.mean_cross_entropy + penalty.lambda * st.mean_attribution;
    rec.mean_attribution = st.mean_attribution;
    rec.penalized_occurrences = st.penalized_occurrences;
    rec.source_train_accuracy = st.train_accuracy;
    rec.target_val_macro_f1 = macro_f1(val_gold, predict(params, data.target_val)).macro_f1;

    if (extracts) {
      auto [cp_hate, cp_non_hate] = class_rankings(params, data, config);
      std::vector<const RankedTermList*> lists = {&cp_hate};
      if (!config.hate_only) lists.push_back(&cp_non_hate);
      rec.te_s = intersect_terms(*rep.s_lr, lists, config.m);
      current = config.variant == Variant::Comb ? union_ids(rec.te_s->ids(), constant_terms) : rec.te_s->ids();
    }
    rep.epochs.push_back(std::move(rec));

    const double f1 = rep.epochs.back().target_val_macro_f1;
    if (f1 > best) {
      best = f1;
      best_params = params;
      rep.selected_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      rep.early_stopped = epoch < config.epochs;
      break;
    }
  }

  rep.target_val_macro_f1 = best;
  for (const auto& e : data.target_test) {
    rep.test_ids.push_back(e.doc_id);
    rep.test_gold.push_back(e.label);
  }
  rep.test_predictions = predict(best_params, data.target_test);
  rep.test = macro_f1(rep.test_gold, rep.test_predictions);
  out.model = std::move(best_params);
  return out;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["config"] = config;
  if (!manifest.empty()) j["manifest"] = manifest;
  if (s_lr) j["s_lr"] = list_json(*s_lr);
  j["mlm_loss"] = mlm_loss;
  auto eps = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json r = {{"epoch", e.epoch},
                        {"penalized", e.penalized},
                        {"mean_loss", e.mean_loss},
                        {"mean_attribution", e.mean_attribution},
                        {"penalized_occurrences", e.penalized_occurrences},
                        {"source_train_accuracy", e.source_train_accuracy},
                        {"target_val_macro_f1", e.target_val_macro_f1}};
    r["te_s"] = e.te_s ? list_json(*e.te_s) : nlohmann::json::array();
    eps.push_back(std::move(r));
  }
  j["epochs"] = std::move(eps);
  j["selected_epoch"] = selected_epoch;
  j["early_stopped"] = early_stopped;
  j["target_val_macro_f1"] = target_val_macro_f1;
  j["test"] = eval_json(test);
  auto preds = nlohmann::json::array();
  for (std::size_t i = 0; i < test_ids.size(); ++i)
    preds.push_back({{"doc_id", test_ids[i]},
                     {"gold", std::string(to_string(label_from_index(test_gold[i])))},
                     {"predicted", std::string(to_string(label_from_index(test_predictions[i])))}});
  j["test_predictions"] = std::move(preds);
  return j;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

SweepResult sweep_lambda(const CorpusSplit& source, const CorpusSplit& target, const AdaptConfig& base,
                         const std::vector<double>& grid, const PreparedData* data, const ModelParams* pretrained,
                         std::size_t jobs) {
  if (grid.empty()) throw ConfigError("lambda sweep needs a non-empty grid");
  std::optional<PreparedData> owned;
  if (!data) owned = prepare_data(source, target, base);
  const PreparedData& d = data ? *data : *owned;
  std::optional<ModelParams> owned_params;
  if (!pretrained) owned_params = pretrain_encoder(d, base);
  const ModelParams& init = pretrained ? *pretrained : *owned_params;

  SweepResult r;
  r.grid = grid;
  r.reports.resize(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t i) {
    AdaptConfig c = base;
    c.lambda = grid[i];
    c.enforce_grid = false;
    r.reports[i] = run_adaptation(source, target, c, &d, &init).report;
  });
  double best = -1.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double f1 = r.reports[i].target_val_macro_f1;
    if (f1 > best || (f1 == best && grid[i] < r.best_lambda)) {
      best = f1;
      r.best_lambda = grid[i];
    }
  }
  return r;
}

void write_run_outputs(const RunOutcome& outcome, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "report.json");
    if (!f) throw InputError("cannot write " + (dir / "report.json").string());
    f << outcome.report.to_json().dump(2) << '\n';
  }
  save_checkpoint(outcome.model, dir / "checkpoint.txt");
  if (outcome.report.s_lr) write_term_list(*outcome.report.s_lr, dir / "s_lr.tsv");
  for (const auto& e : outcome.report.epochs)
    if (e.te_s) write_term_list(*e.te_s, dir / ("te_s_epoch" + std::to_string(e.epoch) + ".tsv"));
}

}  // namespace attrda
