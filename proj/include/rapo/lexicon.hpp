#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rapo/embio.hpp"
#include "rapo/types.hpp"

namespace rapo::lexicon {

// Aligned (source-index, target-index) pairs with the per-source gold sets.
struct SeedLexicon {
  std::vector<std::pair<Index, Index>> pairs;
  std::unordered_map<Index, std::vector<Index>> source_gold;  // targets sorted

  std::size_t size() const { return pairs.size(); }
  bool is_gold(Index src, Index tgt) const;
  // Adds the pair unless already present; keeps source_gold in sync.
  bool add_pair(Index src, Index tgt);
};

SeedLexicon make_lexicon(const std::vector<std::pair<Index, Index>>& pairs);

struct ParseReport {
  std::size_t kept = 0;
  std::size_t skipped_oov = 0;
  std::size_t skipped_dup = 0;
};

// Reads "<src-word> <tgt-word>" lines (tab or space separated). Pairs with
// an out-of-vocabulary word are skipped and counted, duplicates collapsed.
SeedLexicon parse_dictionary(const std::string& path, const embio::EmbeddingTable& src,
                             const embio::EmbeddingTable& tgt, ParseReport* report = nullptr);

struct LexiconSplit {
  SeedLexicon train;
  SeedLexicon validation;
  double split_fraction = 0.0;
  std::uint64_t seed = 0;
};

// Deterministic held-out split by unique source word: all pairs of one
// source word land on the same side.
LexiconSplit split_lexicon(const SeedLexicon& lex, double fraction, std::uint64_t seed);

}  // namespace rapo::lexicon
