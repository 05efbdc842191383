// SPDX-License-Identifier: Apache-2.0
#include "attrda/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "attrda/resources.hpp"

namespace attrda {

Stoplist parse_stoplist(std::string_view text) {
  Stoplist out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::string term = line.substr(b, e - b + 1);
    for (char& c : term) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.insert(std::move(term));
  }
  return out;
}

Stoplist load_stoplist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open stoplist: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_stoplist(ss.str());
}

const Stoplist& default_stoplist() {
  static const Stoplist list = parse_stoplist(resources::stopwords_en());
  return list;
}

Vocabulary Vocabulary::build(const CorpusSplit& source, const CorpusSplit& target, std::size_t min_freq,
                             const Stoplist& stoplist) {
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  if (source.train.empty() && target.train.empty()) throw InputError("cannot build a vocabulary from empty corpora");

  std::map<std::string, std::pair<std::size_t, std::size_t>> df;
  auto count = [&df](const std::vector<Document>& docs, bool is_source) {
    for (const auto& d : docs) {
      std::set<std::string_view> seen(d.tokens.begin(), d.tokens.end());
      for (auto t : seen) {
        auto& slot = df[std::string(t)];
        (is_source ? slot.first : slot.second) += 1;
      }
    }
  };
  count(source.train, true);
  count(target.train, false);

  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ordered(df.begin(), df.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    const auto fa = a.second.first + a.second.second;
    const auto fb = b.second.first + b.second.second;
    if (fa != fb) return fa > fb;
    return a.first < b.first;
  });

  Vocabulary v;
  v.min_freq_ = min_freq;
  v.n_source_ = source.train.size();
  v.n_target_ = target.train.size();
  for (const char* special : {"[PAD]", "[UNK]", "[MASK]", "[CLS]"}) {
    v.index_.emplace(special, static_cast<TermId>(v.terms_.size()));
    v.terms_.emplace_back(special);
    v.df_source_.push_back(0);
    v.df_target_.push_back(0);
    v.stop_.push_back(false);
    v.rare_.push_back(false);
  }
  for (auto& [term, freq] : ordered) {
    v.index_.emplace(term, static_cast<TermId>(v.terms_.size()));
    v.stop_.push_back(stoplist.count(term) != 0);
    v.rare_.push_back(freq.first + freq.second < min_freq);
    v.df_source_.push_back(freq.first);
    v.df_target_.push_back(freq.second);
    v.terms_.push_back(term);
  }
  return v;
}

TermId Vocabulary::id(std::string_view term) const {
  auto it = index_.find(std::string(term));
  if (it == index_.end() || it->second < kFirstTerm) return kUnk;
  return it->second;
}

std::size_t Vocabulary::doc_freq(TermId id, Domain domain) const {
  const auto i = static_cast<std::size_t>(id);
  return domain == Domain::Source ? df_source_.at(i) : df_target_.at(i);
}

std::string Vocabulary::to_tsv() const {
  std::string out;
  for (std::size_t i = kFirstTerm; i < terms_.size(); ++i) {
    out += std::to_string(i) + '\t' + terms_[i] + '\t' + std::to_string(df_source_[i]) + '\t' +
           std::to_string(df_target_[i]) + '\t' + (stop_[i] ? "1" : "0") + '\n';
  }
  return out;
}

void Vocabulary::write_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary: " + path.string());
  out << to_tsv();
}

std::vector<TermId> encode(const Document& doc, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  std::vector<TermId> ids;
  ids.reserve(std::min(max_len, doc.tokens.size() + 1));
  ids.push_back(Vocabulary::kCls);
  for (const auto& t : doc.tokens) {
    if (ids.size() >= max_len) break;
    ids.push_back(vocab.id(t));
  }
  return ids;
}

SparseVector bow_vector(const Document& doc, const Vocabulary& vocab) {
  std::map<TermId, double> counts;
  for (const auto& t : doc.tokens) counts[vocab.id(t)] += 1.0;
  return {counts.begin(), counts.end()};
}

}  // namespace attrda
