#pragma once

#include <string>
#include <vector>

#include "rapo/embio.hpp"
#include "rapo/rng.hpp"
#include "rapo/types.hpp"

namespace rapo::mapping {

// Reflector vectors whose norm falls to this bound are rejected.
constexpr double kEpsilonV = 1e-8;

enum class Activation { linear, tanh, sigmoid };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

// Single-layer personalized offset: x -> normalize(x + act(weight * x_bar)).
struct Adapter {
  Matrix weight;  // d x d
  Activation activation = Activation::tanh;
};

// Product of Householder reflections, parameterized by unconstrained raw
// vectors; each reflector normalizes its vector internally so the induced
// matrix is exactly orthogonal at every parameter value.
struct HouseholderChain {
  Matrix raw;  // n x d, row i is the raw (unnormalized) vector w_{i+1}

  Eigen::Index length() const { return raw.rows(); }
  Eigen::Index dim() const { return raw.cols(); }
};

struct AlignmentModel {
  Adapter src_adapter, tgt_adapter;
  HouseholderChain src_chain, tgt_chain;

  int dim() const { return static_cast<int>(src_adapter.weight.rows()); }
  const Adapter& adapter(Side s) const { return s == Side::source ? src_adapter : tgt_adapter; }
  Adapter& adapter(Side s) { return s == Side::source ? src_adapter : tgt_adapter; }
  const HouseholderChain& chain(Side s) const { return s == Side::source ? src_chain : tgt_chain; }
  HouseholderChain& chain(Side s) { return s == Side::source ? src_chain : tgt_chain; }
};

// Zero adapter weights (identity start for odd activations) and Gaussian
// raw reflectors with variance 1/d. chain_length == 0 means n = d.
AlignmentModel init_model(int dim, Eigen::Index chain_length, Activation activation, Rng& rng);

Vector apply_activation(Activation a, const Vector& x);

// x -> normalize(x + act(W x_bar)). Throws when the pre-normalization vector
// is degenerate.
Vector adapter_calibrate(const Adapter& adapter, const Vector& x, const Vector& x_bar);

// Reflection of z about the hyperplane orthogonal to v_raw/|v_raw|.
Vector householder_reflect(const Vector& v_raw, const Vector& z);

// Applies the chain in the order that realizes the product
// H(v_1) H(v_2) ... H(v_n) z, i.e. H(v_n) touches z first. O(n d).
Vector chain_apply(const HouseholderChain& chain, const Vector& z);

// Dense product of the chain's reflections (diagnostics and tests).
Matrix chain_matrix(const HouseholderChain& chain);

// Adapter-calibrates and chain-applies the given rows; output rows are
// unit-norm. Errors name the offending word.
Matrix forward_map(const AlignmentModel& model, Side side, const std::vector<Index>& indices,
                   const embio::EmbeddingTable& emb, const embio::ContextualTable& ctx);

// forward_map over the whole vocabulary, fanned out over threads.
Matrix map_table(const AlignmentModel& model, Side side, const embio::EmbeddingTable& emb,
                 const embio::ContextualTable& ctx, int threads = 1);

// --- differentiable primitives -------------------------------------------
// The training loop recomputes the forward pass per word with a tape, then
// walks it backwards. Gradients flow through both normalizations.

struct AdapterTape {
  Vector act_out;     // act(W x_bar)
  Vector x_tilde;     // normalized output
  double pre_norm = 0.0;
};

Vector adapter_forward(const Adapter& adapter, const Vector& x, const Vector& x_bar,
                       AdapterTape* tape);

// Accumulates dL/dW into grad_weight. x and x_bar carry no gradient.
void adapter_backward(const Adapter& adapter, const Vector& x_bar, const AdapterTape& tape,
                      const Vector& upstream, Matrix& grad_weight);

struct ChainTape {
  Matrix zs;  // (n+1) x d, zs.row(0) is the input, zs.row(n) the output
};

Vector chain_forward(const HouseholderChain& chain, const Vector& z, ChainTape* tape);

// Accumulates dL/d raw vectors into grad_raw (same shape as chain.raw) and
// returns dL/dz.
Vector chain_backward(const HouseholderChain& chain, const ChainTape& tape,
                      const Vector& upstream, Matrix& grad_raw);

// Both languages' tables bundled for the training and retrieval layers.
struct TablePack {
  const embio::EmbeddingTable* src_emb = nullptr;
  const embio::ContextualTable* src_ctx = nullptr;
  const embio::EmbeddingTable* tgt_emb = nullptr;
  const embio::ContextualTable* tgt_ctx = nullptr;

  const embio::EmbeddingTable& emb(Side s) const {
    return *(s == Side::source ? src_emb : tgt_emb);
  }
  const embio::ContextualTable& ctx(Side s) const {
    return *(s == Side::source ? src_ctx : tgt_ctx);
  }
};

// --- persistence ----------------------------------------------------------

// Data-preparation settings a checkpoint needs to be self-contained.
struct ModelMeta {
  double tau_src = 0.0;
  double tau_tgt = 0.0;
  std::size_t max_neighbors = 0;
};

void save_model(const AlignmentModel& model, const ModelMeta& meta, const std::string& path);
AlignmentModel load_model(const std::string& path, ModelMeta* meta = nullptr);

}  // namespace rapo::mapping
