#pragma once

// Shared fixtures for the unit suites: scratch directories, small random
// tables, and models that reduce to the identity map.

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "rapo/embio.hpp"
#include "rapo/mapping.hpp"
#include "rapo/rng.hpp"
#include "rapo/types.hpp"

namespace testutil {

// Fresh per-tag directory under the system temp root. Tags must be unique
// across suites since ctest runs them in parallel.
inline std::string scratch_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("rapo_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::string write_file(const std::string& dir, const std::string& name,
                              const std::string& text) {
  const std::string path = dir + "/" + name;
  std::ofstream out(path);
  out << text;
  return path;
}

inline rapo::Matrix random_unit_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  rapo::Rng rng(seed);
  rapo::Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
    m.row(i) /= m.row(i).norm();
  }
  return m;
}

inline rapo::embio::EmbeddingTable make_table(const rapo::Matrix& rows, const char* prefix) {
  rapo::embio::EmbeddingTable t;
  t.dim = static_cast<int>(rows.cols());
  t.vectors = rows;
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    t.words.push_back(std::string(prefix) + std::to_string(i));
  t.rebuild_index();
  return t;
}

inline rapo::embio::EmbeddingTable random_table(Eigen::Index n, Eigen::Index d,
                                                std::uint64_t seed, const char* prefix = "w") {
  return make_table(random_unit_rows(n, d, seed), prefix);
}

// Two equal reflections cancel, so this chain is the identity map.
inline rapo::mapping::HouseholderChain involutive_chain(Eigen::Index d, std::uint64_t seed = 11) {
  rapo::Rng rng(seed);
  rapo::Matrix raw(2, d);
  for (Eigen::Index j = 0; j < d; ++j) raw(0, j) = rng.normal();
  raw.row(1) = raw.row(0);
  rapo::mapping::HouseholderChain chain;
  chain.raw = raw;
  return chain;
}

// Zero-weight tanh adapters plus involutive chains: forward_map returns the
// input rows unchanged (up to reflection round-off).
inline rapo::mapping::AlignmentModel identity_model(int d, std::uint64_t seed = 11) {
  rapo::mapping::AlignmentModel model;
  model.src_adapter.weight = rapo::Matrix::Zero(d, d);
  model.src_adapter.activation = rapo::mapping::Activation::tanh;
  model.tgt_adapter = model.src_adapter;
  model.src_chain = involutive_chain(d, seed);
  model.tgt_chain = involutive_chain(d, seed + 1);
  return model;
}

// Contextual table that is just a copy of the rows; with zero adapter
// weights the contextual input never matters anyway.
inline rapo::embio::ContextualTable self_ctx(const rapo::embio::EmbeddingTable& t) {
  rapo::embio::ContextualTable ctx;
  ctx.vectors = t.vectors;
  ctx.threshold = 0.99;
  ctx.neighbor_counts.assign(t.size(), 1);
  return ctx;
}

inline rapo::Vector unit(Eigen::Index d, Eigen::Index axis) {
  rapo::Vector v = rapo::Vector::Zero(d);
  v(axis) = 1.0;
  return v;
}

}  // namespace testutil
