// SPDX-License-Identifier: Apache-2.0
#include "attrda/domain_terms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <boost/math/distributions/chi_squared.hpp>

#include "attrda/config.hpp"
#include "attrda/resources.hpp"

namespace attrda {

namespace {

std::vector<std::vector<std::pair<TermId, double>>> normalized_features(const std::vector<Document>& docs,
                                                                        const Vocabulary& vocab) {
  std::vector<std::vector<std::pair<TermId, double>>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    auto bow = bow_vector(d, vocab);
    double norm = 0.0;
    for (const auto& [id, c] : bow) norm += c * c;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (auto& [id, c] : bow) c /= norm;
    out.push_back(std::move(bow));
  }
  return out;
}

std::vector<std::unordered_set<TermId>> presence_sets(const std::vector<Document>& docs, const Vocabulary& vocab) {
  std::vector<std::unordered_set<TermId>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    std::unordered_set<TermId> s;
    for (const auto& t : d.tokens) s.insert(vocab.id(t));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::string_view to_string(TermOrigin origin) {
  switch (origin) {
    case TermOrigin::LrDomain: return "lr_domain";
    case TermOrigin::CpHate: return "cp_hate";
    case TermOrigin::CpNonHate: return "cp_non_hate";
    case TermOrigin::Chi2: return "chi2";
    case TermOrigin::Predef: return "predef";
    case TermOrigin::TeS: return "te_S";
  }
  return "te_S";
}

std::optional<TermOrigin> parse_term_origin(std::string_view text) {
  for (auto o : {TermOrigin::LrDomain, TermOrigin::CpHate, TermOrigin::CpNonHate, TermOrigin::Chi2,
                 TermOrigin::Predef, TermOrigin::TeS})
    if (to_string(o) == text) return o;
  return std::nullopt;
}

bool RankedTermList::contains(TermId id) const {
  return std::any_of(entries.begin(), entries.end(), [id](const RankedTerm& e) { return e.id == id; });
}

bool RankedTermList::contains(std::string_view term) const {
  return std::any_of(entries.begin(), entries.end(), [term](const RankedTerm& e) { return e.term == term; });
}

std::vector<TermId> RankedTermList::ids() const {
  std::vector<TermId> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

void sort_ranked(std::vector<RankedTerm>& entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const RankedTerm& a, const RankedTerm& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.term < b.term;
  });
  std::set<std::string> seen;
  std::vector<RankedTerm> unique;
  unique.reserve(entries.size());
  for (auto& e : entries)
    if (seen.insert(e.term).second) unique.push_back(std::move(e));
  entries = std::move(unique);
}

bool is_valid_ranked_list(const RankedTermList& list, const Vocabulary& vocab) {
  std::unordered_set<TermId> seen;
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    const auto& e = list.entries[i];
    if (e.id < 0 || static_cast<std::size_t>(e.id) >= vocab.size() || !vocab.eligible(e.id)) return false;
    if (vocab.term(e.id) != e.term) return false;
    if (!seen.insert(e.id).second) return false;
    if (i > 0 && e.score > list.entries[i - 1].score) return false;
  }
  return true;
}

std::string to_tsv(const RankedTermList& list) {
  std::string out;
  const auto origin = std::string(to_string(list.origin));
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    const auto& e = list.entries[i];
    out += std::to_string(i + 1) + '\t' + e.term + '\t' + format_real(e.score) + '\t' + origin + '\n';
  }
  return out;
}

void write_term_list(const RankedTermList& list, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write term list: " + path.string());
  out << to_tsv(list);
}

RankedTermList parse_term_list(std::string_view tsv, std::string_view origin_name) {
  RankedTermList list;
  bool have_origin = false;
  std::istringstream in{std::string(tsv)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split_list(line, '\t');
    if (cols.size() != 4)
      throw InputError(std::string(origin_name) + ": line " + std::to_string(line_no) +
                       ": expected 4 columns (rank, term, score, origin)");
    auto origin = parse_term_origin(cols[3]);
    if (!origin)
      throw InputError(std::string(origin_name) + ": line " + std::to_string(line_no) + ": unknown origin '" +
                       cols[3] + "'");
    if (have_origin && *origin != list.origin)
      throw InputError(std::string(origin_name) + ": line " + std::to_string(line_no) + ": mixed origins");
    list.origin = *origin;
    have_origin = true;
    RankedTerm e;
    e.term = cols[1];
    try {
      e.score = parse_real("score", cols[2]);
    } catch (const ConfigError& err) {
      throw InputError(std::string(origin_name) + ": line " + std::to_string(line_no) + ": " + err.what());
    }
    list.entries.push_back(std::move(e));
  }
  return list;
}

RankedTermList read_term_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open term list: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_term_list(ss.str(), path.string());
}

RankedTermList resolve(const RankedTermList& list, const Vocabulary& vocab) {
  RankedTermList out;
  out.origin = list.origin;
  std::unordered_set<TermId> seen;
  for (const auto& e : list.entries) {
    if (!vocab.contains(e.term)) continue;
    const TermId id = vocab.id(e.term);
    if (!vocab.eligible(id) || !seen.insert(id).second) continue;
    out.entries.push_back({id, e.term, e.score});
  }
  return out;
}

RankedTermList predefined_terms() {
  return parse_term_list(resources::predef_identity_terms(), "predef_identity_terms.tsv");
}

DomainLRModel train_domain_lr(const std::vector<Document>& source_train, const std::vector<Document>& target_train,
                              const Vocabulary& vocab, const DomainLRHyper& hyper) {
  if (source_train.empty() || target_train.empty())
    throw InputError("domain classifier needs non-empty source and target train corpora");

  auto xs = normalized_features(source_train, vocab);
  auto xt = normalized_features(target_train, vocab);
  std::vector<const std::vector<std::pair<TermId, double>>*> rows;
  std::vector<double> ys;
  for (const auto& x : xs) rows.push_back(&x), ys.push_back(1.0);
  for (const auto& x : xt) rows.push_back(&x), ys.push_back(0.0);
  const double n = static_cast<double>(rows.size());

  DomainLRModel m;
  m.hyper = hyper;
  m.weights.assign(vocab.size(), 0.0);
  std::vector<double> grad(vocab.size());
  std::vector<double> margin(rows.size());

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double z = m.bias;
      for (const auto& [id, v] : *rows[i]) z += m.weights[static_cast<std::size_t>(id)] * v;
      const double p = 1.0 / (1.0 + std::exp(-z));
      // log(1 + e^{-z}) for y=1, log(1 + e^{z}) for y=0, computed stably
      const double s = ys[i] > 0.5 ? -z : z;
      loss += s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
      const double r = (p - ys[i]) / n;
      for (const auto& [id, v] : *rows[i]) grad[static_cast<std::size_t>(id)] += r * v;
      gb += r;
    }
    double reg = 0.0;
    for (double w : m.weights) reg += w * w;
    loss = loss / n + 0.5 * hyper.l2 * reg;
    if (!std::isfinite(loss))
      throw NumericError("domain classifier loss became non-finite at epoch " + std::to_string(epoch + 1));
    for (std::size_t j = 0; j < m.weights.size(); ++j)
      m.weights[j] -= hyper.learning_rate * (grad[j] + hyper.l2 * m.weights[j]);
    m.bias -= hyper.learning_rate * gb;
    m.final_loss = loss;
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double z = m.bias;
    for (const auto& [id, v] : *rows[i]) z += m.weights[static_cast<std::size_t>(id)] * v;
    margin[i] = z;
    if ((z > 0.0) == (ys[i] > 0.5)) ++correct;
  }
  m.train_accuracy = static_cast<double>(correct) / n;
  return m;
}

RankedTermList top_n_source_terms(const DomainLRModel& model, const Vocabulary& vocab, std::size_t n) {
  if (n < 1) throw ConfigError("top_n_source_terms: n must be >= 1");
  RankedTermList list;
  list.origin = TermOrigin::LrDomain;
  for (TermId id = Vocabulary::kFirstTerm; static_cast<std::size_t>(id) < vocab.size(); ++id)
    if (vocab.eligible(id)) list.entries.push_back({id, vocab.term(id), model.weights.at(static_cast<std::size_t>(id))});
  sort_ranked(list.entries);
  if (list.entries.size() > n) list.entries.resize(n);
  return list;
}

double yates_chi_squared(const ContingencyTable& t) {
  const double total = t.a + t.b + t.c + t.d;
  const double denom = (t.a + t.b) * (t.c + t.d) * (t.a + t.c) * (t.b + t.d);
  if (denom <= 0.0) return 0.0;
  const double corrected = std::max(0.0, std::abs(t.a * t.d - t.b * t.c) - total / 2.0);
  return total * corrected * corrected / denom;
}

double chi_squared_critical(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must lie in (0,1)");
  const boost::math::chi_squared dist(1.0);
  return boost::math::quantile(dist, confidence);
}

RankedTermList chi_squared_terms(const std::vector<Document>& source_train, const std::vector<Document>& target_train,
                                 const Vocabulary& vocab, double confidence) {
  if (source_train.empty() || target_train.empty())
    throw InputError("chi-squared extraction needs non-empty source and target train corpora");
  const double critical = chi_squared_critical(confidence);
  const auto ps = presence_sets(source_train, vocab);
  const auto pt = presence_sets(target_train, vocab);
  std::vector<double> in_source(vocab.size(), 0.0), in_target(vocab.size(), 0.0);
  for (const auto& s : ps)
    for (TermId id : s) in_source[static_cast<std::size_t>(id)] += 1.0;
  for (const auto& s : pt)
    for (TermId id : s) in_target[static_cast<std::size_t>(id)] += 1.0;

  const double ns = static_cast<double>(source_train.size());
  const double nt = static_cast<double>(target_train.size());
  RankedTermList list;
  list.origin = TermOrigin::Chi2;
  for (TermId id = Vocabulary::kFirstTerm; static_cast<std::size_t>(id) < vocab.size(); ++id) {
    if (!vocab.eligible(id)) continue;
    ContingencyTable t{in_source[static_cast<std::size_t>(id)], 0, in_target[static_cast<std::size_t>(id)], 0};
    t.b = ns - t.a;
    t.d = nt - t.c;
    if (t.a + t.c == 0.0 || t.b + t.d == 0.0) continue;  // zero marginal
    if (t.a / ns <= t.c / nt) continue;
    const double chi = yates_chi_squared(t);
    if (chi > critical) list.entries.push_back({id, vocab.term(id), chi});
  }
  sort_ranked(list.entries);
  return list;
}

RankedTermList intersect_terms(const RankedTermList& s_lr, const std::vector<const RankedTermList*>& cp_lists,
                               std::size_t m) {
  if (m < 1) throw ConfigError("intersect_terms: m must be >= 1");
  std::unordered_set<TermId> top;
  for (const auto* cp : cp_lists) {
    const std::size_t k = std::min(m, cp->entries.size());
    for (std::size_t i = 0; i < k; ++i) top.insert(cp->entries[i].id);
  }
  RankedTermList out;
  out.origin = TermOrigin::TeS;
  std::unordered_set<TermId> seen;
  for (const auto& e : s_lr.entries)
    if (top.count(e.id) && seen.insert(e.id).second) out.entries.push_back(e);
  return out;
}

}  // namespace attrda
