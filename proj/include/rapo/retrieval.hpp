#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rapo/lexicon.hpp"
#include "rapo/mapping.hpp"
#include "rapo/types.hpp"

namespace rapo::retrieval {

// Mapped vocabularies plus the precomputed CSLS hubness penalties.
// score(i, j) = 2 <src_i, tgt_j> - r_src[i] - r_tgt[j].
struct RetrievalIndex {
  Matrix mapped_src;
  Matrix mapped_tgt;
  Vector r_src;  // penalty of each mapped source row against the target keys
  Vector r_tgt;  // penalty of each mapped target row against the source keys
  int csls_k = 10;
};

// Mean of the k largest dot products between each query row and the key rows.
// With exclude_self the two matrices must be the same object (row i skips
// key i). Row results do not depend on threads or block_size.
Vector csls_penalties(const Matrix& queries, const Matrix& keys, int k, bool exclude_self = false,
                      int threads = 1, Eigen::Index block_size = 1024);

double csls_score(const Vector& x_hat, const Vector& y_hat, double r_x, double r_y);

RetrievalIndex build_index(const mapping::AlignmentModel& model, const mapping::TablePack& tables,
                           int csls_k, int threads = 1, Eigen::Index block_size = 1024);
// Same penalties and layout, starting from already-mapped matrices.
RetrievalIndex build_index_from_mapped(Matrix mapped_src, Matrix mapped_tgt, int csls_k,
                                       int threads = 1, Eigen::Index block_size = 1024);

// Descending CSLS score, ties broken by ascending target index.
std::vector<std::pair<Index, double>> top_k(const RetrievalIndex& index, Index source, int k);

// Fraction of unique test source words whose gold set intersects the top k.
double precision_at_k(const RetrievalIndex& index, const lexicon::SeedLexicon& test, int k);

// Writes "<src>\t<tgt>\t<score>" lines, k per source word, in source order.
void induce(const RetrievalIndex& index, const std::vector<std::string>& src_words,
            const std::vector<std::string>& tgt_words, const std::string& out_path, int k);

}  // namespace rapo::retrieval
