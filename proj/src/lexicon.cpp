#include "rapo/lexicon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rapo/error.hpp"
#include "rapo/rng.hpp"

namespace rapo::lexicon {

bool SeedLexicon::is_gold(Index src, Index tgt) const {
  const auto it = source_gold.find(src);
  if (it == source_gold.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), tgt);
}

bool SeedLexicon::add_pair(Index src, Index tgt) {
  if (is_gold(src, tgt)) return false;
  pairs.emplace_back(src, tgt);
  auto& gold = source_gold[src];
  gold.insert(std::upper_bound(gold.begin(), gold.end(), tgt), tgt);
  return true;
}

SeedLexicon make_lexicon(const std::vector<std::pair<Index, Index>>& pairs) {
  SeedLexicon lex;
  for (const auto& [s, t] : pairs) lex.add_pair(s, t);
  return lex;
}

SeedLexicon parse_dictionary(const std::string& path, const embio::EmbeddingTable& src,
                             const embio::EmbeddingTable& tgt, ParseReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dictionary: " + path);

  SeedLexicon lex;
  ParseReport rep;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string a, b, extra;
    if (!(ss >> a)) continue;  // blank line
    if (!(ss >> b) || (ss >> extra))
      throw DataError("dictionary line " + std::to_string(line_no) +
                      " does not hold exactly two words: '" + line + "'");
    const Index si = src.find(a);
    const Index ti = tgt.find(b);
    if (si < 0 || ti < 0) {
      ++rep.skipped_oov;
      continue;
    }
    if (lex.add_pair(si, ti))
      ++rep.kept;
    else
      ++rep.skipped_dup;
  }
  if (report != nullptr) *report = rep;
  return lex;
}

LexiconSplit split_lexicon(const SeedLexicon& lex, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw ConfigError("split fraction must lie in [0, 1)");

  // Unique sources in first-appearance order, then shuffled for the split.
  std::vector<Index> sources;
  std::unordered_map<Index, bool> seen;
  for (const auto& [s, t] : lex.pairs) {
    if (!seen.emplace(s, true).second) continue;
    sources.push_back(s);
  }
  Rng rng(seed);
  rng.shuffle(sources);

  const auto n_val = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(sources.size()) + 1e-9));
  std::vector<bool> in_val(sources.size(), false);
  std::unordered_map<Index, bool> val_source;
  for (std::size_t i = 0; i < sources.size(); ++i) val_source[sources[i]] = i < n_val;

  LexiconSplit split;
  split.split_fraction = fraction;
  split.seed = seed;
  for (const auto& [s, t] : lex.pairs) {
    if (val_source[s])
      split.validation.add_pair(s, t);
    else
      split.train.add_pair(s, t);
  }
  if (split.train.pairs.empty())
    throw ConfigError("split fraction " + std::to_string(fraction) + " leaves the train set empty");
  return split;
}

}  // namespace rapo::lexicon
