#include "rapo/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "rapo/error.hpp"
#include "rapo/parallel.hpp"

namespace rapo::retrieval {

Vector csls_penalties(const Matrix& queries, const Matrix& keys, int k, bool exclude_self,
                      int threads, Eigen::Index block_size) {
  if (queries.cols() != keys.cols())
    throw ConfigError("csls_penalties: query and key dimensions differ");
  if (exclude_self && queries.rows() != keys.rows())
    throw ConfigError("csls_penalties: exclude_self requires queries == keys");
  const Eigen::Index n_keys = keys.rows() - (exclude_self ? 1 : 0);
  if (k < 1) throw ConfigError("csls_penalties: k must be at least 1");
  if (static_cast<Eigen::Index>(k) > n_keys)
    throw ConfigError("csls_penalties: k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(n_keys) + " available keys");
  if (block_size < 1) block_size = 1;

  Vector out(queries.rows());
  parallel_chunks(static_cast<std::size_t>(queries.rows()), threads,
                  [&](std::size_t begin, std::size_t end) {
    std::vector<double> dots;
    for (Eigen::Index b0 = static_cast<Eigen::Index>(begin);
         b0 < static_cast<Eigen::Index>(end); b0 += block_size) {
      const Eigen::Index bs = std::min(block_size, static_cast<Eigen::Index>(end) - b0);
      const Matrix sims = queries.middleRows(b0, bs) * keys.transpose();
      for (Eigen::Index r = 0; r < bs; ++r) {
        dots.assign(sims.row(r).data(), sims.row(r).data() + sims.cols());
        if (exclude_self) dots[static_cast<std::size_t>(b0 + r)] = -std::numeric_limits<double>::infinity();
        std::nth_element(dots.begin(), dots.begin() + (k - 1), dots.end(), std::greater<>());
        double sum = 0.0;
        for (int t = 0; t < k; ++t) sum += dots[static_cast<std::size_t>(t)];
        out(b0 + r) = sum / k;
      }
    }
  });
  return out;
}

double csls_score(const Vector& x_hat, const Vector& y_hat, double r_x, double r_y) {
  return 2.0 * x_hat.dot(y_hat) - r_x - r_y;
}

RetrievalIndex build_index_from_mapped(Matrix mapped_src, Matrix mapped_tgt, int csls_k,
                                       int threads, Eigen::Index block_size) {
  RetrievalIndex index;
  index.csls_k = csls_k;
  index.mapped_src = std::move(mapped_src);
  index.mapped_tgt = std::move(mapped_tgt);
  index.r_src = csls_penalties(index.mapped_src, index.mapped_tgt, csls_k, false, threads, block_size);
  index.r_tgt = csls_penalties(index.mapped_tgt, index.mapped_src, csls_k, false, threads, block_size);
  return index;
}

RetrievalIndex build_index(const mapping::AlignmentModel& model, const mapping::TablePack& tables,
                           int csls_k, int threads, Eigen::Index block_size) {
  Matrix src = mapping::map_table(model, Side::source, *tables.src_emb, *tables.src_ctx, threads);
  Matrix tgt = mapping::map_table(model, Side::target, *tables.tgt_emb, *tables.tgt_ctx, threads);
  return build_index_from_mapped(std::move(src), std::move(tgt), csls_k, threads, block_size);
}

std::vector<std::pair<Index, double>> top_k(const RetrievalIndex& index, Index source, int k) {
  if (source < 0 || source >= index.mapped_src.rows())
    throw ConfigError("top_k: source index out of range");
  if (k < 1) throw ConfigError("top_k: k must be at least 1");
  const Eigen::Index n = index.mapped_tgt.rows();
  const Vector scores =
      2.0 * (index.mapped_tgt * index.mapped_src.row(source).transpose()) - index.r_tgt -
      Vector::Constant(n, index.r_src(source));

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const auto better = [&](Index a, Index b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  };
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    better);

  std::vector<std::pair<Index, double>> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.emplace_back(order[i], scores(order[i]));
  return out;
}

double precision_at_k(const RetrievalIndex& index, const lexicon::SeedLexicon& test, int k) {
  if (test.pairs.empty()) throw DataError("precision_at_k: empty test lexicon");
  std::unordered_set<Index> seen;
  std::size_t hits = 0;
  std::size_t sources = 0;
  for (const auto& [src, tgt] : test.pairs) {
    (void)tgt;
    if (!seen.insert(src).second) continue;
    ++sources;
    const auto ranked = top_k(index, src, k);
    for (const auto& [cand, score] : ranked) {
      (void)score;
      if (test.is_gold(src, cand)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(sources);
}

void induce(const RetrievalIndex& index, const std::vector<std::string>& src_words,
            const std::vector<std::string>& tgt_words, const std::string& out_path, int k) {
  if (static_cast<Eigen::Index>(src_words.size()) != index.mapped_src.rows() ||
      static_cast<Eigen::Index>(tgt_words.size()) != index.mapped_tgt.rows())
    throw ConfigError("induce: word lists do not match the index");
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write translations: " + out_path);
  char buf[64];
  for (std::size_t i = 0; i < src_words.size(); ++i) {
    for (const auto& [tgt, score] : top_k(index, static_cast<Index>(i), k)) {
      std::snprintf(buf, sizeof(buf), "%.17g", score);
      out << src_words[i] << '\t' << tgt_words[static_cast<std::size_t>(tgt)] << '\t' << buf
          << '\n';
    }
  }
  if (!out) throw DataError("failed writing translations: " + out_path);
}

}  // namespace rapo::retrieval
