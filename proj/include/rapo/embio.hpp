#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rapo/types.hpp"

namespace rapo::embio {

// Vocabulary plus one dense row per word, in file (frequency) order.
struct EmbeddingTable {
  std::vector<std::string> words;
  Matrix vectors;  // words.size() x dim
  int dim = 0;

  std::size_t size() const { return words.size(); }
  // Index of a word, or -1 when out of vocabulary.
  Index find(const std::string& word) const;

  void rebuild_index();

 private:
  std::unordered_map<std::string, Index> index_;
};

// Per-word mean of all rows whose similarity to the word exceeds the
// threshold. Aligned row-for-row with the table it was built from.
struct ContextualTable {
  Matrix vectors;
  double threshold = 0.0;
  std::vector<Index> neighbor_counts;
};

// Reads a fastText-style text file: header "<count> <dim>", then
// "<word> <v1> ... <vdim>" lines. Keeps the first min(count, max_vocab)
// entries; later duplicates of a word are skipped.
EmbeddingTable load_vec_file(const std::string& path, std::size_t max_vocab);

// Writes the same text format back (full double precision).
void save_vec_file(const EmbeddingTable& table, const std::string& path);

// Scales every row to unit Euclidean norm.
EmbeddingTable length_normalize(const EmbeddingTable& table);

// Subtracts the per-column mean from every row.
EmbeddingTable center_columns(const EmbeddingTable& table);

// length normalize -> center columns -> length normalize.
EmbeddingTable normalize_pipeline(const EmbeddingTable& table);

// Builds contextual semantic vectors over a unit-normalized table.
// Row i is the mean of rows j with <x_j, x_i> > threshold (self always
// included). max_neighbors == 0 means uncapped; otherwise only the
// max_neighbors highest-similarity qualifiers contribute. Work proceeds in
// blocks of block_size rows, optionally fanned out over threads.
ContextualTable build_contextual_table(const EmbeddingTable& table,
                                       double threshold,
                                       std::size_t max_neighbors = 0,
                                       std::size_t block_size = 1024,
                                       int threads = 1);

// Versioned binary container, round-trips bit-exactly at the chosen width.
void save_table(const EmbeddingTable& table, const std::string& path,
                NumericWidth width = NumericWidth::double_);
void save_table(const ContextualTable& table, const std::string& path,
                NumericWidth width = NumericWidth::double_);
EmbeddingTable load_embedding_table(const std::string& path);
ContextualTable load_contextual_table(const std::string& path);

}  // namespace rapo::embio
