// SPDX-License-Identifier: Apache-2.0
//
// attrda: corpus ingestion, source-specific term extraction, single
// adaptation runs and multi-seed experiments.
//
// Exit codes: 0 success, 2 usage/config/input error, 3 runtime failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "attrda/adapt.hpp"
#include "attrda/config.hpp"
#include "attrda/corpus.hpp"
#include "attrda/domain_terms.hpp"
#include "attrda/experiment.hpp"
#include "attrda/resources.hpp"
#include "attrda/text.hpp"

#ifndef ATTRDA_VERSION
#define ATTRDA_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace attrda;

namespace {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char two[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", md[i]);
    hex += two;
  }
  return hex;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t random_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

struct Manifest {
  Manifest(std::string cmd, std::vector<std::string> args) : command(std::move(cmd)), argv(std::move(args)) {}

  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  bool seed_drawn = false;
  KeyValues config;
  std::vector<fs::path> inputs;

  void write(const fs::path& path) const {
    nlohmann::json j;
    j["tool"] = "attrda";
    j["version"] = ATTRDA_VERSION;
    j["command"] = command;
    j["argv"] = argv;
    j["timestamp"] = utc_now();
    j["seed"] = seed;
    j["seed_drawn"] = seed_drawn;
    j["config"] = config;
    auto ins = nlohmann::json::array();
    for (const auto& p : inputs) ins.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["inputs"] = std::move(ins);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
};

// Config file (optional) plus --set overrides; flags are applied afterwards by each command.
KeyValues gather_config(const std::string& config_path, const std::vector<std::string>& sets) {
  KeyValues kv;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw InputError("config file not found: " + config_path);
    kv = load_key_values(config_path);
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what);
  if (!fs::exists(path)) throw InputError(std::string(what) + " not found: " + path);
}

void print_summary(const CorpusSplit& c) {
  auto counts = [](const std::vector<Document>& docs) {
    std::size_t h = 0, n = 0, u = 0;
    for (const auto& d : docs) {
      if (!d.label) ++u;
      else if (*d.label == Label::Hate) ++h;
      else ++n;
    }
    return std::array<std::size_t, 3>{h, n, u};
  };
  std::cout << "domain\t" << to_string(c.domain) << '\n';
  for (auto [name, docs] : {std::pair{"train", &c.train}, std::pair{"val", &c.val}, std::pair{"test", &c.test}}) {
    const auto k = counts(*docs);
    std::cout << "split\t" << name << "\tdocs=" << docs->size() << "\thate=" << k[0] << "\tnon-hate=" << k[1]
              << "\tunlabeled=" << k[2] << '\n';
  }
  std::size_t tokens = 0;
  std::set<std::string> types;
  for (const auto* docs : {&c.train, &c.val, &c.test})
    for (const auto& d : *docs) {
      tokens += d.tokens.size();
      types.insert(d.tokens.begin(), d.tokens.end());
    }
  std::cout << "tokens\t" << tokens << "\ttypes=" << types.size() << '\n';
  std::cout << "dropped\tempty=" << c.dropped_empty << "\ttarget_train_labels=" << c.dropped_labels << '\n';
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string input, format = "jsonl", domain, out, resplit;
  std::optional<std::uint64_t> seed;
};

int cmd_ingest(const IngestArgs& a, const std::vector<std::string>& argv) {
  require_file(a.input, "--input");
  const auto format = parse_corpus_format(a.format);
  if (!format) throw ConfigError("--format: expected jsonl|tsv, got '" + a.format + "'");
  const auto domain = parse_domain(a.domain);
  if (!domain) throw ConfigError("--domain: expected source|target, got '" + a.domain + "'");
  if (a.out.empty()) throw ConfigError("missing --out");

  Manifest m{"ingest", argv};
  m.seed = a.seed.value_or(0);
  if (!a.seed) {
    m.seed = random_seed();
    m.seed_drawn = true;
  }
  CorpusSplit corpus = load_corpus(a.input, *format, *domain);
  if (!a.resplit.empty()) {
    const auto f = parse_real_list("--resplit", a.resplit);
    if (f.size() != 3) throw ConfigError("--resplit expects three fractions train,val,test");
    std::vector<Document> all;
    for (auto* docs : {&corpus.train, &corpus.val, &corpus.test})
      for (auto& d : *docs) all.push_back(std::move(d));
    // Re-read labels: load_corpus strips target-train labels, so reload them for pooled docs.
    CorpusSplit labeled = load_corpus(a.input, *format, Domain::Source);
    std::map<DocId, std::optional<Label>> labels;
    for (auto* docs : {&labeled.train, &labeled.val, &labeled.test})
      for (auto& d : *docs) labels[d.id] = d.label;
    for (auto& d : all) d.label = labels[d.id];
    CorpusSplit split = random_split(std::move(all), {f[0], f[1], f[2]}, m.seed);
    split.domain = *domain;
    split.metadata = corpus.metadata;
    if (*domain == Domain::Target)
      for (auto& d : split.train)
        if (d.label) {
          d.label.reset();
          ++split.dropped_labels;
        }
    corpus = std::move(split);
  }
  if (*domain == Domain::Target && corpus.dropped_labels > 0)
    std::cerr << "warning: " << corpus.dropped_labels
              << " target train labels ignored; val/test labels kept for model selection and evaluation\n";
  corpus = preprocess_corpus(std::move(corpus));
  validate_corpus(corpus);
  corpus.metadata["source_file"] = a.input;
  write_corpus_archive(corpus, a.out);

  m.config = {{"input", a.input}, {"format", a.format}, {"domain", a.domain}, {"resplit", a.resplit}};
  m.inputs = {a.input};
  m.write(fs::path(a.out).string() + ".manifest.json");
  print_summary(corpus);
  std::cout << "archive\t" << a.out << '\n';
  return 0;
}

struct SynthArgs {
  std::string config, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  if (a.out.empty()) throw ConfigError("missing --out");
  KeyValues kv = a.config.empty() ? parse_key_values(resources::synthetic_benchmark(), "synthetic_benchmark.conf")
                                  : gather_config(a.config, {});
  for (const auto& [k, v] : gather_config("", a.sets)) kv[k] = v;
  const SyntheticSpec spec = SyntheticSpec::from_map(section(kv, "benchmark"));
  Manifest m{"synth", argv};
  if (a.seed) m.seed = *a.seed;
  else if (kv.count("experiment.data_seed")) m.seed = parse_u64("experiment.data_seed", kv["experiment.data_seed"]);
  else {
    m.seed = random_seed();
    m.seed_drawn = true;
  }
  auto data = generate_synthetic(spec, m.seed);
  fs::create_directories(a.out);
  const auto src = preprocess_corpus(std::move(data.source));
  const auto tgt = preprocess_corpus(std::move(data.target));
  write_corpus_archive(src, fs::path(a.out) / "source.jsonl");
  write_corpus_archive(tgt, fs::path(a.out) / "target.jsonl");
  for (const auto& [k, v] : spec.to_map()) m.config["benchmark." + k] = v;
  if (!a.config.empty()) m.inputs = {a.config};
  m.write(fs::path(a.out) / "manifest.json");
  print_summary(src);
  print_summary(tgt);
  return 0;
}

struct ExtractArgs {
  std::string method = "lr", source, target, out, config;
  std::vector<std::string> sets;
  std::optional<std::size_t> n;
  std::optional<double> confidence;
};

int cmd_extract_terms(const ExtractArgs& a, const std::vector<std::string>& argv) {
  require_file(a.source, "--source archive");
  require_file(a.target, "--target archive");
  if (a.method != "lr" && a.method != "chi2") throw ConfigError("--method: expected lr|chi2, got '" + a.method + "'");
  if (a.out.empty()) throw ConfigError("missing --out");
  KeyValues kv = gather_config(a.config, a.sets);
  if (a.n) kv["adapt.n"] = std::to_string(*a.n);
  if (a.confidence) kv["adapt.chi2_confidence"] = format_real(*a.confidence);
  const AdaptConfig cfg = AdaptConfig::from_map(kv);
  cfg.validate();

  const CorpusSplit src = read_corpus_archive(a.source);
  const CorpusSplit tgt = read_corpus_archive(a.target);
  const Stoplist custom = cfg.stoplist_path.empty() ? Stoplist{} : load_stoplist(cfg.stoplist_path);
  const Vocabulary vocab =
      Vocabulary::build(src, tgt, cfg.min_freq, cfg.stoplist_path.empty() ? default_stoplist() : custom);
  const RankedTermList list = a.method == "lr"
                                  ? top_n_source_terms(train_domain_lr(src.train, tgt.train, vocab, cfg.domain_lr),
                                                       vocab, cfg.n)
                                  : chi_squared_terms(src.train, tgt.train, vocab, cfg.chi2_confidence);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_term_list(list, out);

  Manifest m{"extract-terms", argv};
  m.config = cfg.to_map();
  m.config["extract.method"] = a.method;
  m.inputs = {a.source, a.target};
  if (!a.config.empty()) m.inputs.emplace_back(a.config);
  m.write(out.string() + ".manifest.json");

  std::cout << "terms\t" << list.size() << "\tmethod=" << a.method << '\n';
  for (std::size_t i = 0; i < list.size() && i < 20; ++i)
    std::cout << i + 1 << '\t' << list.entries[i].term << '\t' << format_real(list.entries[i].score) << '\n';
  return 0;
}

struct AdaptArgs {
  std::string source, target, out, config, variant, attr;
  std::vector<std::string> sets;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
};

int cmd_adapt(const AdaptArgs& a, const std::vector<std::string>& argv) {
  KeyValues kv = gather_config(a.config, a.sets);
  if (!a.variant.empty()) kv["adapt.variant"] = a.variant;
  if (!a.attr.empty()) kv["adapt.method"] = a.attr;
  if (a.lambda) kv["adapt.lambda"] = format_real(*a.lambda);
  Manifest m{"adapt", argv};
  if (a.seed) kv["adapt.seed"] = std::to_string(*a.seed);
  else if (!kv.count("adapt.seed")) {
    kv["adapt.seed"] = std::to_string(random_seed());
    m.seed_drawn = true;
  }
  const AdaptConfig cfg = AdaptConfig::from_map(kv);
  cfg.validate();  // before any file is read or model built
  require_file(a.source, "--source archive");
  require_file(a.target, "--target archive");
  if (a.out.empty()) throw ConfigError("missing --out");

  const CorpusSplit src = read_corpus_archive(a.source);
  const CorpusSplit tgt = read_corpus_archive(a.target);
  RunOutcome outcome = run_adaptation(src, tgt, cfg);
  const fs::path dir(a.out);
  m.seed = cfg.seed;
  m.config = outcome.report.config;
  m.inputs = {a.source, a.target};
  if (!a.config.empty()) m.inputs.emplace_back(a.config);
  m.write(dir / "manifest.json");
  outcome.report.manifest = "manifest.json";
  write_run_outputs(outcome, dir);

  const auto& r = outcome.report;
  for (const auto& e : r.epochs)
    std::cout << "epoch\t" << e.epoch << "\tloss=" << format_real(e.mean_loss)
              << "\tl_atr=" << format_real(e.mean_attribution) << "\tsrc_acc=" << format_real(e.source_train_accuracy)
              << "\tval_f1=" << format_real(e.target_val_macro_f1) << "\tpenalized=" << e.penalized.size()
              << "\tte_s=" << (e.te_s ? e.te_s->size() : 0) << '\n';
  std::cout << "selected_epoch\t" << r.selected_epoch << '\n';
  std::cout << "test_macro_f1\t" << format_real(r.test.macro_f1) << '\n';
  std::cout << "output\t" << dir.string() << '\n';
  return 0;
}

struct ExperimentArgs {
  std::string config, out;
  std::vector<std::string> sets;
  std::size_t jobs = 1;
  bool benchmark = false;
  bool save_runs = false;
};

int cmd_experiment(const ExperimentArgs& a, const std::vector<std::string>& argv) {
  if (a.config.empty() && !a.benchmark) throw ConfigError("missing --config (or --benchmark)");
  if (a.out.empty()) throw ConfigError("missing --out");
  KeyValues kv = a.benchmark ? parse_key_values(resources::synthetic_benchmark(), "synthetic_benchmark.conf")
                             : gather_config(a.config, {});
  for (const auto& [k, v] : gather_config("", a.sets)) kv[k] = v;
  const ExperimentSpec spec = ExperimentSpec::from_map(kv);
  spec.validate();

  const fs::path dir(a.out);
  Manifest m{"experiment", argv};
  m.seed = spec.synthetic ? spec.data_seed : spec.bootstrap_seed;
  m.config = spec.to_map();
  if (!a.config.empty()) m.inputs.emplace_back(a.config);
  for (const auto& [s, t] : spec.archives) {
    m.inputs.emplace_back(s);
    m.inputs.emplace_back(t);
  }
  m.write(dir / "manifest.json");

  const auto directions = load_directions(spec);
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentTable table = run_experiment(
      directions, spec, a.jobs, [&](std::size_t v, std::size_t d, std::size_t k, const RunOutcome& out) {
        std::cout << "run\t" << to_string(spec.variants[v]) << '\t' << directions[d].name << "\tseed="
                  << spec.seeds[k] << "\ttest_f1=" << format_real(out.report.test.macro_f1) << std::endl;
        if (a.save_runs) {
          RunOutcome copy = out;
          copy.report.manifest = "../../manifest.json";
          write_run_outputs(copy, dir / "runs" /
                                      (std::string(to_string(spec.variants[v])) + "_" + directions[d].name + "_seed" +
                                       std::to_string(spec.seeds[k])));
        }
      });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json j = table.to_json(true);
  j["manifest"] = "manifest.json";
  j["runtime_seconds"] = secs;
  std::ofstream(dir / "table.json") << j.dump(2) << '\n';
  const std::string text = table.render_text();
  std::ofstream(dir / "table.txt") << text;
  std::cout << text;
  std::cout << "runtime_seconds\t" << format_real(std::round(secs * 10.0) / 10.0) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Attribution-guided domain adaptation for hate-speech classification"};
  app.set_version_flag("--version", ATTRDA_VERSION);
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Preprocess and split a raw corpus into an archive");
  ingest->add_option("--input", ia.input, "JSONL or TSV corpus")->required();
  ingest->add_option("--format", ia.format, "jsonl|tsv");
  ingest->add_option("--domain", ia.domain, "source|target")->required();
  ingest->add_option("--out", ia.out, "Archive path")->required();
  ingest->add_option("--resplit", ia.resplit, "Pool all records and split randomly: train,val,test fractions");
  ingest->add_option("--seed", ia.seed, "Split seed");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark corpora as archives");
  synth->add_option("--config", sa.config, "Key=value file with benchmark.* keys (default: bundled)");
  synth->add_option("--set", sa.sets, "Override KEY=VALUE");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Data seed");

  ExtractArgs ea;
  auto* extract = app.add_subcommand("extract-terms", "Rank source-specific terms");
  extract->add_option("--method", ea.method, "lr|chi2");
  extract->add_option("--n", ea.n, "Number of LR terms (default 750)");
  extract->add_option("--confidence", ea.confidence, "Chi-squared confidence (default 0.95)");
  extract->add_option("--source", ea.source, "Source archive")->required();
  extract->add_option("--target", ea.target, "Target archive")->required();
  extract->add_option("--out", ea.out, "Term-list TSV")->required();
  extract->add_option("--config", ea.config, "Key=value config file");
  extract->add_option("--set", ea.sets, "Override KEY=VALUE");

  AdaptArgs aa;
  auto* adapt = app.add_subcommand("adapt", "Run one adaptation");
  adapt->add_option("--source", aa.source, "Source archive")->required();
  adapt->add_option("--target", aa.target, "Target archive")->required();
  adapt->add_option("--variant", aa.variant, "vanilla|dom-spec|pre-def|comb|chi2-pen");
  adapt->add_option("--attr", aa.attr, "scaled-attn|deeplift");
  adapt->add_option("--lambda", aa.lambda, "Penalty strength");
  adapt->add_option("--seed", aa.seed, "Run seed");
  adapt->add_option("--config", aa.config, "Key=value config file");
  adapt->add_option("--set", aa.sets, "Override KEY=VALUE");
  adapt->add_option("--out", aa.out, "Output directory")->required();

  ExperimentArgs xa;
  auto* experiment = app.add_subcommand("experiment", "Multi-seed comparison table");
  experiment->add_option("--config", xa.config, "Experiment config file");
  experiment->add_flag("--benchmark", xa.benchmark, "Use the bundled synthetic benchmark config");
  experiment->add_option("--set", xa.sets, "Override KEY=VALUE");
  experiment->add_option("--jobs", xa.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  experiment->add_flag("--save-runs", xa.save_runs, "Write every run's report and checkpoint");
  experiment->add_option("--out", xa.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*ingest) return cmd_ingest(ia, args);
    if (*synth) return cmd_synth(sa, args);
    if (*extract) return cmd_extract_terms(ea, args);
    if (*adapt) return cmd_adapt(aa, args);
    if (*experiment) return cmd_experiment(xa, args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
