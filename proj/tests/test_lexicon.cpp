#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "rapo/error.hpp"
#include "rapo/lexicon.hpp"

using namespace rapo;
using testutil::scratch_dir;
using testutil::write_file;

namespace {

embio::EmbeddingTable vocab(const std::vector<std::string>& words) {
  embio::EmbeddingTable t;
  t.dim = 2;
  t.words = words;
  t.vectors = Matrix::Zero(static_cast<Eigen::Index>(words.size()), 2);
  t.rebuild_index();
  return t;
}

using PairSet = std::set<std::pair<Index, Index>>;

PairSet as_set(const lexicon::SeedLexicon& lex) {
  return PairSet(lex.pairs.begin(), lex.pairs.end());
}

}  // namespace

TEST_CASE("dictionary parsing groups multi-translation sources") {
  const std::string dir = scratch_dir("lex_parse");
  const auto src = vocab({"cat", "dog"});
  const auto tgt = vocab({"gato", "felino", "perro"});
  const std::string path = write_file(dir, "d.txt",
                                      "cat gato\n"
                                      "cat\tfelino\n"
                                      "dog perro\n");
  lexicon::ParseReport rep;
  const auto lex = lexicon::parse_dictionary(path, src, tgt, &rep);
  CHECK(rep.kept == 3);
  CHECK(rep.skipped_oov == 0);
  CHECK(rep.skipped_dup == 0);
  CHECK(lex.size() == 3);
  CHECK(lex.source_gold.at(0) == std::vector<Index>{0, 1});
  CHECK(lex.source_gold.at(1) == std::vector<Index>{2});
  CHECK(lex.is_gold(0, 1));
  CHECK(!lex.is_gold(0, 2));
}

TEST_CASE("dictionary parsing counts duplicates and OOV pairs") {
  const std::string dir = scratch_dir("lex_skip");
  const auto src = vocab({"cat"});
  const auto tgt = vocab({"gato"});
  const std::string path = write_file(dir, "d.txt",
                                      "cat gato\n"
                                      "cat gato\n"
                                      "cat zorplax\n"
                                      "\n"
                                      "mysterycat gato\n");
  lexicon::ParseReport rep;
  const auto lex = lexicon::parse_dictionary(path, src, tgt, &rep);
  CHECK(lex.size() == 1);
  CHECK(rep.kept == 1);
  CHECK(rep.skipped_dup == 1);
  CHECK(rep.skipped_oov == 2);
}

TEST_CASE("dictionary parsing rejects malformed lines") {
  const std::string dir = scratch_dir("lex_bad");
  const auto v = vocab({"a", "b"});
  CHECK_THROWS_AS(lexicon::parse_dictionary(dir + "/absent", v, v, nullptr), DataError);
  CHECK_THROWS_WITH_AS(
      lexicon::parse_dictionary(write_file(dir, "one.txt", "a b\nlonely\n"), v, v, nullptr),
      doctest::Contains("line 2"), DataError);
  CHECK_THROWS_WITH_AS(
      lexicon::parse_dictionary(write_file(dir, "three.txt", "a b extra\n"), v, v, nullptr),
      doctest::Contains("line 1"), DataError);
}

TEST_CASE("dictionary parsing round-trips through its own serialization") {
  const std::string dir = scratch_dir("lex_roundtrip");
  const auto src = vocab({"a", "b", "c"});
  const auto tgt = vocab({"x", "y"});
  const auto lex = lexicon::make_lexicon({{0, 0}, {0, 1}, {2, 1}});
  std::string text;
  for (const auto& [s, t] : lex.pairs)
    text += src.words[static_cast<std::size_t>(s)] + " " +
            tgt.words[static_cast<std::size_t>(t)] + "\n";
  const auto back = lexicon::parse_dictionary(write_file(dir, "d.txt", text), src, tgt, nullptr);
  CHECK(as_set(back) == as_set(lex));
}

TEST_CASE("add_pair deduplicates and keeps gold sets sorted") {
  lexicon::SeedLexicon lex;
  CHECK(lex.add_pair(3, 9));
  CHECK(lex.add_pair(3, 2));
  CHECK(!lex.add_pair(3, 9));
  CHECK(lex.size() == 2);
  CHECK(lex.source_gold.at(3) == std::vector<Index>{2, 9});
}

TEST_CASE("split with fraction zero keeps everything in train") {
  const auto lex = lexicon::make_lexicon({{0, 0}, {1, 1}, {2, 2}});
  const auto split = lexicon::split_lexicon(lex, 0.0, 7);
  CHECK(split.validation.pairs.empty());
  CHECK(as_set(split.train) == as_set(lex));
}

TEST_CASE("split is deterministic and sized by unique source words") {
  std::vector<std::pair<Index, Index>> pairs;
  for (Index s = 0; s < 10; ++s) pairs.push_back({s, s});
  const auto lex = lexicon::make_lexicon(pairs);
  const auto a = lexicon::split_lexicon(lex, 0.2, 42);
  const auto b = lexicon::split_lexicon(lex, 0.2, 42);
  CHECK(a.validation.source_gold.size() == 2);
  CHECK(a.train.source_gold.size() == 8);
  CHECK(a.validation.pairs == b.validation.pairs);
  CHECK(a.train.pairs == b.train.pairs);
}

TEST_CASE("split never straddles a multi-translation source") {
  const auto lex = lexicon::make_lexicon(
      {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {2, 1}, {2, 3}, {3, 2}, {4, 4}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto split = lexicon::split_lexicon(lex, 0.4, seed);
    // Union and disjointness over pair sets.
    PairSet train = as_set(split.train);
    PairSet val = as_set(split.validation);
    PairSet both;
    std::set_intersection(train.begin(), train.end(), val.begin(), val.end(),
                          std::inserter(both, both.begin()));
    CHECK(both.empty());
    PairSet all = train;
    all.insert(val.begin(), val.end());
    CHECK(all == as_set(lex));
    // No source index on both sides.
    for (const auto& [s, gold] : split.validation.source_gold) {
      (void)gold;
      CHECK(split.train.source_gold.find(s) == split.train.source_gold.end());
    }
  }
}

TEST_CASE("split rejects out-of-range fractions") {
  const auto lex = lexicon::make_lexicon({{0, 0}, {1, 1}});
  CHECK_THROWS_AS(lexicon::split_lexicon(lex, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(lexicon::split_lexicon(lex, -0.1, 1), ConfigError);
}
