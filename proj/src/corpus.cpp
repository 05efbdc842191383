// SPDX-License-Identifier: Apache-2.0
#include "attrda/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "attrda/config.hpp"
#include "attrda/resources.hpp"
#include "attrda/text.hpp"

namespace attrda {

namespace {

using json = nlohmann::json;

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_high(char c) { return static_cast<unsigned char>(c) >= 0x80; }
bool is_letter(char c) { return is_upper(c) || is_lower(c) || is_high(c); }
bool is_word_char(char c) { return is_letter(c) || is_digit(c); }

std::string remove_urls(const std::string& text) {
  static const std::regex url(R"((https?://|www\.)\S*)", std::regex::icase);
  return std::regex_replace(text, url, " ");
}

// "#BuildTheWall2019" -> "Build The Wall 2019"
std::string split_hashtag_body(std::string_view body) {
  std::string out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c == '_') {
      out.push_back(' ');
      continue;
    }
    if (i > 0) {
      const char p = body[i - 1];
      const bool camel = (is_lower(p) && is_upper(c)) ||
                         (is_upper(p) && is_upper(c) && i + 1 < body.size() && is_lower(body[i + 1]));
      if (camel) out.push_back(' ');
    }
    out.push_back(c);
  }
  return out;
}

std::string split_hashtags(const std::string& text) {
  std::string out;
  out.reserve(text.size() + 8);
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] != '#') {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t j = i + 1;
    while (j < text.size() && (is_word_char(text[j]) || text[j] == '_')) ++j;
    out.push_back(' ');
    out += split_hashtag_body(std::string_view(text).substr(i + 1, j - i - 1));
    out.push_back(' ');
    i = j;
  }
  return out;
}

void push_split_alnum(std::string word, std::vector<std::string>& tokens) {
  while (!word.empty() && word.front() == '\'') word.erase(word.begin());
  while (!word.empty() && word.back() == '\'') word.pop_back();
  if (word.empty()) return;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= word.size(); ++i) {
    const bool boundary = i == word.size() ||
                          (is_digit(word[i]) != is_digit(word[i - 1]) && word[i] != '\'' &&
                           word[i - 1] != '\'');
    if (boundary) {
      std::string piece = word.substr(start, i - start);
      while (!piece.empty() && piece.front() == '\'') piece.erase(piece.begin());
      while (!piece.empty() && piece.back() == '\'') piece.pop_back();
      if (!piece.empty()) tokens.push_back(std::move(piece));
      start = i;
    }
  }
}

std::string read_split_name(const json& rec, std::size_t line_no) {
  if (!rec.contains("split") || rec["split"].is_null()) return "train";
  if (!rec["split"].is_string())
    throw InputError("line " + std::to_string(line_no) + ": field 'split' must be a string");
  return rec["split"].get<std::string>();
}

void place(CorpusSplit& corpus, Document doc, const std::string& split, std::size_t line_no) {
  if (split == "train" || split.empty()) {
    if (corpus.domain == Domain::Target && doc.label) {
      doc.label.reset();
      ++corpus.dropped_labels;
    }
    corpus.train.push_back(std::move(doc));
  } else if (split == "val") {
    corpus.val.push_back(std::move(doc));
  } else if (split == "test") {
    corpus.test.push_back(std::move(doc));
  } else {
    throw InputError("line " + std::to_string(line_no) + ": unknown split '" + split +
                     "' (accepted: train, val, test)");
  }
}

std::optional<Label> read_label(std::string_view text, std::size_t line_no) {
  if (text.empty()) return std::nullopt;
  auto label = parse_label(text);
  if (!label)
    throw InputError("line " + std::to_string(line_no) + ": unknown label '" + std::string(text) +
                     "' (accepted labels: hate, non-hate)");
  return label;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    cols.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cols;
}

// Pronounceable CVCVCV pseudo-words; the stride walks the name space in a
// scattered order so neighbouring indices do not share prefixes.
std::string pseudo_word(std::size_t k) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  constexpr std::size_t syllables = consonants.size() * vowels.size();
  constexpr std::size_t space = syllables * syllables * syllables;
  std::size_t code = (k * 7919 + 13) % space;
  std::string out;
  for (int i = 0; i < 3; ++i) {
    const std::size_t s = code % syllables;
    code /= syllables;
    out.push_back(consonants[s / vowels.size()]);
    out.push_back(vowels[s % vowels.size()]);
  }
  return out;
}

bool is_plain_term(const std::string& t) {
  return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return is_lower(c); });
}

}  // namespace

std::optional<CorpusFormat> parse_corpus_format(std::string_view text) {
  if (text == "jsonl") return CorpusFormat::Jsonl;
  if (text == "tsv") return CorpusFormat::Tsv;
  return std::nullopt;
}

CorpusSplit load_corpus(const std::filesystem::path& path, CorpusFormat format, Domain domain) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus file: " + path.string());

  CorpusSplit corpus;
  corpus.domain = domain;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    Document doc;
    doc.id = static_cast<DocId>(line_no);
    doc.domain = domain;
    std::string split;
    if (format == CorpusFormat::Jsonl) {
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error& e) {
        throw InputError("line " + std::to_string(line_no) + ": malformed JSON record (" + e.what() + ")");
      }
      if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string())
        throw InputError("line " + std::to_string(line_no) + ": record lacks a string 'text' field");
      doc.raw_text = rec["text"].get<std::string>();
      if (rec.contains("label") && !rec["label"].is_null()) {
        if (!rec["label"].is_string())
          throw InputError("line " + std::to_string(line_no) + ": field 'label' must be a string");
        doc.label = read_label(rec["label"].get<std::string>(), line_no);
      }
      split = read_split_name(rec, line_no);
    } else {
      auto cols = split_tabs(line);
      if (cols.size() > 3)
        throw InputError("line " + std::to_string(line_no) + ": expected at most 3 tab-separated columns, got " +
                         std::to_string(cols.size()));
      doc.raw_text = cols[0];
      if (cols.size() > 1) doc.label = read_label(cols[1], line_no);
      split = cols.size() > 2 && !cols[2].empty() ? cols[2] : "train";
    }
    place(corpus, std::move(doc), split, line_no);
  }
  return corpus;
}

std::vector<std::string> tokenize_text(std::string_view text) {
  std::string cleaned = split_hashtags(remove_urls(std::string(text)));
  for (char& c : cleaned)
    if (is_upper(c)) c = static_cast<char>(c - 'A' + 'a');

  std::vector<std::string> tokens;
  std::string word;
  for (std::size_t i = 0; i <= cleaned.size(); ++i) {
    const char c = i < cleaned.size() ? cleaned[i] : ' ';
    const bool inner_apostrophe = c == '\'' && !word.empty() && i + 1 < cleaned.size() &&
                                  is_word_char(cleaned[i + 1]);
    if (is_word_char(c) || inner_apostrophe) {
      word.push_back(c);
    } else if (!word.empty()) {
      push_split_alnum(std::move(word), tokens);
      word.clear();
    }
  }
  return tokens;
}

Document preprocess(Document doc) {
  doc.tokens = tokenize_text(doc.raw_text);
  return doc;
}

CorpusSplit preprocess_corpus(CorpusSplit corpus) {
  auto run = [&corpus](std::vector<Document>& docs) {
    std::vector<Document> kept;
    kept.reserve(docs.size());
    for (auto& d : docs) {
      Document p = preprocess(std::move(d));
      if (p.tokens.empty()) {
        ++corpus.dropped_empty;
        continue;
      }
      kept.push_back(std::move(p));
    }
    docs = std::move(kept);
  };
  run(corpus.train);
  run(corpus.val);
  run(corpus.test);
  return corpus;
}

CorpusSplit random_split(std::vector<Document> docs, std::array<double, 3> fractions, std::uint64_t seed) {
  if (docs.size() < 3) throw InputError("random_split needs at least 3 documents");
  for (double f : fractions)
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");

  std::mt19937_64 rng(seed);
  std::shuffle(docs.begin(), docs.end(), rng);

  const auto n = static_cast<double>(docs.size());
  auto n_train = static_cast<std::size_t>(std::llround(n * fractions[0]));
  auto n_val = static_cast<std::size_t>(std::llround(n * fractions[1]));
  n_train = std::min(n_train, docs.size());
  n_val = std::min(n_val, docs.size() - n_train);

  CorpusSplit out;
  if (!docs.empty()) out.domain = docs.front().domain;
  auto first = std::make_move_iterator(docs.begin());
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(first + static_cast<std::ptrdiff_t>(n_train),
                 first + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_val), std::make_move_iterator(docs.end()));
  return out;
}

void validate_corpus(const CorpusSplit& corpus) {
  std::unordered_set<DocId> ids;
  auto check = [&](const std::vector<Document>& docs, bool need_label, std::string_view split) {
    for (const auto& d : docs) {
      if (!ids.insert(d.id).second)
        throw InputError("duplicate document id " + std::to_string(d.id) + " in " + std::string(split));
      if (need_label && !d.label)
        throw InputError("document " + std::to_string(d.id) + " in " + std::string(to_string(corpus.domain)) +
                         " " + std::string(split) + " has no label");
    }
  };
  check(corpus.train, corpus.domain == Domain::Source, "train");
  check(corpus.val, true, "val");
  check(corpus.test, true, "test");
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

std::map<std::string, std::string> SyntheticSpec::to_map() const {
  auto num = [](double v) { return format_real(v); };
  std::map<std::string, std::string> kv;
  kv["source_train"] = std::to_string(source_train);
  kv["source_val"] = std::to_string(source_val);
  kv["source_test"] = std::to_string(source_test);
  kv["target_train"] = std::to_string(target_train);
  kv["target_val"] = std::to_string(target_val);
  kv["target_test"] = std::to_string(target_test);
  kv["filler_terms"] = std::to_string(filler_terms);
  kv["source_only_terms"] = std::to_string(source_only_terms);
  kv["target_only_terms"] = std::to_string(target_only_terms);
  kv["hate_signal_terms"] = std::to_string(hate_signal_terms);
  kv["non_hate_signal_terms"] = std::to_string(non_hate_signal_terms);
  kv["confound_terms"] = join_list(confound_terms);
  kv["hate_signal_names"] = join_list(hate_signal_names);
  kv["non_hate_signal_names"] = join_list(non_hate_signal_names);
  kv["hate_prior"] = num(hate_prior);
  kv["min_length"] = std::to_string(min_length);
  kv["max_length"] = std::to_string(max_length);
  kv["p_own_signal"] = num(p_own_signal);
  kv["p_cross_signal"] = num(p_cross_signal);
  kv["p_confound_hate"] = num(p_confound_hate);
  kv["p_confound_non_hate"] = num(p_confound_non_hate);
  kv["p_domain_term"] = num(p_domain_term);
  kv["min_confound_correlation"] = num(min_confound_correlation);
  return kv;
}

SyntheticSpec SyntheticSpec::from_map(const std::map<std::string, std::string>& kv) {
  SyntheticSpec s;
  for (const auto& [key, value] : kv) {
    if (key == "source_train") s.source_train = parse_size(key, value);
    else if (key == "source_val") s.source_val = parse_size(key, value);
    else if (key == "source_test") s.source_test = parse_size(key, value);
    else if (key == "target_train") s.target_train = parse_size(key, value);
    else if (key == "target_val") s.target_val = parse_size(key, value);
    else if (key == "target_test") s.target_test = parse_size(key, value);
    else if (key == "filler_terms") s.filler_terms = parse_size(key, value);
    else if (key == "source_only_terms") s.source_only_terms = parse_size(key, value);
    else if (key == "target_only_terms") s.target_only_terms = parse_size(key, value);
    else if (key == "hate_signal_terms") s.hate_signal_terms = parse_size(key, value);
    else if (key == "non_hate_signal_terms") s.non_hate_signal_terms = parse_size(key, value);
    else if (key == "confound_terms") s.confound_terms = split_list(value);
    else if (key == "hate_signal_names") s.hate_signal_names = split_list(value);
    else if (key == "non_hate_signal_names") s.non_hate_signal_names = split_list(value);
    else if (key == "hate_prior") s.hate_prior = parse_real(key, value);
    else if (key == "min_length") s.min_length = parse_size(key, value);
    else if (key == "max_length") s.max_length = parse_size(key, value);
    else if (key == "p_own_signal") s.p_own_signal = parse_real(key, value);
    else if (key == "p_cross_signal") s.p_cross_signal = parse_real(key, value);
    else if (key == "p_confound_hate") s.p_confound_hate = parse_real(key, value);
    else if (key == "p_confound_non_hate") s.p_confound_non_hate = parse_real(key, value);
    else if (key == "p_domain_term") s.p_domain_term = parse_real(key, value);
    else if (key == "min_confound_correlation") s.min_confound_correlation = parse_real(key, value);
    else throw ConfigError("unknown synthetic spec key: " + key);
  }
  return s;
}

SyntheticTerms synthetic_terms(const SyntheticSpec& spec) {
  std::set<std::string> taken(spec.confound_terms.begin(), spec.confound_terms.end());
  taken.insert(spec.hate_signal_names.begin(), spec.hate_signal_names.end());
  taken.insert(spec.non_hate_signal_names.begin(), spec.non_hate_signal_names.end());
  const auto stop = parse_stoplist(resources::stopwords_en());

  std::size_t next = 0;
  auto fresh = [&](std::size_t count) {
    std::vector<std::string> names;
    while (names.size() < count) {
      std::string w = pseudo_word(next++);
      if (taken.count(w) || stop.count(w)) continue;
      taken.insert(w);
      names.push_back(std::move(w));
    }
    return names;
  };

  SyntheticTerms t;
  t.confound = spec.confound_terms;
  t.hate_signal = spec.hate_signal_names.empty() ? fresh(spec.hate_signal_terms) : spec.hate_signal_names;
  t.non_hate_signal =
      spec.non_hate_signal_names.empty() ? fresh(spec.non_hate_signal_terms) : spec.non_hate_signal_names;
  t.source_only = fresh(spec.source_only_terms);
  t.target_only = fresh(spec.target_only_terms);
  t.filler = fresh(spec.filler_terms);
  return t;
}

SyntheticCorpora generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  const std::set<std::string> confounds(spec.confound_terms.begin(), spec.confound_terms.end());
  for (const auto* names : {&spec.hate_signal_names, &spec.non_hate_signal_names})
    for (const auto& n : *names)
      if (confounds.count(n)) throw ConfigError("confound and signal term sets overlap on '" + n + "'");
  for (const auto* names : {&spec.confound_terms, &spec.hate_signal_names, &spec.non_hate_signal_names})
    for (const auto& n : *names)
      if (!is_plain_term(n)) throw ConfigError("synthetic term '" + n + "' must be lowercase letters only");
  if (spec.filler_terms == 0 || spec.min_length == 0 || spec.max_length < spec.min_length)
    throw ConfigError("synthetic spec needs filler terms and 1 <= min_length <= max_length");
  if (spec.confound_terms.empty() || (spec.hate_signal_terms == 0 && spec.hate_signal_names.empty()) ||
      (spec.non_hate_signal_terms == 0 && spec.non_hate_signal_names.empty()))
    throw ConfigError("synthetic spec needs confound and signal terms for both classes");
  if (!(spec.hate_prior > 0.0 && spec.hate_prior < 1.0)) throw ConfigError("hate_prior must lie in (0,1)");

  const SyntheticTerms terms = synthetic_terms(spec);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&rng](const std::vector<std::string>& from) -> const std::string& {
    std::uniform_int_distribution<std::size_t> d(0, from.size() - 1);
    return from[d(rng)];
  };

  DocId next_id = 1;
  auto make_doc = [&](Domain domain, bool labeled) {
    const Label cls = unit(rng) < spec.hate_prior ? Label::Hate : Label::NonHate;
    std::uniform_int_distribution<std::size_t> len_dist(spec.min_length, spec.max_length);
    const std::size_t length = len_dist(rng);
    const auto& own = cls == Label::Hate ? terms.hate_signal : terms.non_hate_signal;
    const auto& other = cls == Label::Hate ? terms.non_hate_signal : terms.hate_signal;
    const auto& domain_only = domain == Domain::Source ? terms.source_only : terms.target_only;

    std::vector<std::string> words;
    if (unit(rng) < spec.p_own_signal) words.push_back(pick(own));
    if (unit(rng) < spec.p_cross_signal) words.push_back(pick(other));
    const double p_conf = cls == Label::Hate ? spec.p_confound_hate : spec.p_confound_non_hate;
    const bool conf = unit(rng) < p_conf;
    if (domain == Domain::Source && conf) words.push_back(pick(terms.confound));
    if (!domain_only.empty() && unit(rng) < spec.p_domain_term) words.push_back(pick(domain_only));
    while (words.size() < length) words.push_back(pick(terms.filler));
    std::shuffle(words.begin(), words.end(), rng);

    Document doc;
    doc.id = next_id++;
    doc.domain = domain;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) doc.raw_text.push_back(' ');
      doc.raw_text += words[i];
    }
    if (labeled) doc.label = cls;
    return preprocess(std::move(doc));
  };

  auto fill = [&](std::vector<Document>& out, std::size_t n, Domain domain, bool labeled) {
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_doc(domain, labeled));
  };

  SyntheticCorpora c;
  c.source.domain = Domain::Source;
  c.target.domain = Domain::Target;
  fill(c.source.train, spec.source_train, Domain::Source, true);
  fill(c.source.val, spec.source_val, Domain::Source, true);
  fill(c.source.test, spec.source_test, Domain::Source, true);
  next_id = 1;
  fill(c.target.train, spec.target_train, Domain::Target, false);
  fill(c.target.val, spec.target_val, Domain::Target, true);
  fill(c.target.test, spec.target_test, Domain::Target, true);

  for (const auto& t : spec.confound_terms) {
    const double r = term_label_correlation(c.source.train, t);
    if (!(r > spec.min_confound_correlation))
      throw ConfigError("confound '" + t + "' reaches correlation " + format_real(r) +
                        " with the hate label, below the declared minimum " +
                        format_real(spec.min_confound_correlation));
  }

  auto meta = spec.to_map();
  meta["seed"] = std::to_string(seed);
  meta["generator"] = "synthetic";
  c.source.metadata = meta;
  c.target.metadata = std::move(meta);
  return c;
}

double term_label_correlation(const std::vector<Document>& docs, const std::string& term) {
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;  // (present, hate)
  for (const auto& d : docs) {
    if (!d.label) continue;
    const bool present = std::find(d.tokens.begin(), d.tokens.end(), term) != d.tokens.end();
    const bool hate = *d.label == Label::Hate;
    if (present && hate) ++n11;
    else if (present) ++n10;
    else if (hate) ++n01;
    else ++n00;
  }
  const double denom = std::sqrt((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00));
  if (denom == 0.0) return 0.0;
  return (n11 * n00 - n10 * n01) / denom;
}

// ---------------------------------------------------------------------------
// Archive

void write_corpus_archive(const CorpusSplit& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write corpus archive: " + path.string());
  json header;
  header["attrda_corpus"] = 1;
  header["domain"] = std::string(to_string(corpus.domain));
  header["dropped_empty"] = corpus.dropped_empty;
  header["dropped_labels"] = corpus.dropped_labels;
  header["metadata"] = corpus.metadata;
  out << header.dump() << '\n';
  auto emit = [&out](const std::vector<Document>& docs, const char* split) {
    for (const auto& d : docs) {
      json rec;
      rec["id"] = d.id;
      rec["split"] = split;
      rec["text"] = d.raw_text;
      rec["tokens"] = d.tokens;
      rec["label"] = d.label ? json(std::string(to_string(*d.label))) : json(nullptr);
      out << rec.dump() << '\n';
    }
  };
  emit(corpus.train, "train");
  emit(corpus.val, "val");
  emit(corpus.test, "test");
}

CorpusSplit read_corpus_archive(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus archive: " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw InputError("empty corpus archive: " + path.string());
  CorpusSplit corpus;
  try {
    const json header = json::parse(line);
    if (header.value("attrda_corpus", 0) != 1) throw InputError("not a corpus archive: " + path.string());
    auto domain = parse_domain(header.at("domain").get<std::string>());
    if (!domain) throw InputError("line 1: bad domain in archive header");
    corpus.domain = *domain;
    corpus.dropped_empty = header.value("dropped_empty", std::size_t{0});
    corpus.dropped_labels = header.value("dropped_labels", std::size_t{0});
    corpus.metadata = header.value("metadata", std::map<std::string, std::string>{});
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json rec = json::parse(line);
      Document d;
      d.id = rec.at("id").get<DocId>();
      d.domain = corpus.domain;
      d.raw_text = rec.at("text").get<std::string>();
      d.tokens = rec.at("tokens").get<std::vector<std::string>>();
      if (!rec.at("label").is_null()) d.label = read_label(rec["label"].get<std::string>(), line_no);
      const auto split = rec.at("split").get<std::string>();
      if (split == "train") corpus.train.push_back(std::move(d));
      else if (split == "val") corpus.val.push_back(std::move(d));
      else if (split == "test") corpus.test.push_back(std::move(d));
      else throw InputError("line " + std::to_string(line_no) + ": unknown split '" + split + "'");
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
  }
  return corpus;
}

}  // namespace attrda
