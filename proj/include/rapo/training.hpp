#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rapo/lexicon.hpp"
#include "rapo/mapping.hpp"
#include "rapo/rng.hpp"
#include "rapo/types.hpp"

namespace rapo::training {

struct TrainConfig {
  int k_hard = 128;
  int k_rand = 128;
  mapping::Activation activation = mapping::Activation::tanh;
  double learning_rate = 0.002;
  double tau_src = 0.85;
  double tau_tgt = 0.85;
  double lambda1 = 1.0;
  double lambda2 = 0.001;
  int iterations = 5;
  int epochs = 150;
  int patience = 10;
  int csls_k = 10;
  std::size_t augment_pool = 15000;
  std::size_t batch_size = 512;
  std::uint64_t rng_seed = 1;
  bool self_learning = true;
  // Not part of the search space:
  double val_fraction = 0.1;     // held-out source-word share for early stopping
  Eigen::Index chain_length = 0;  // reflectors per chain, 0 means the dimension
  bool freeze_target = false;     // train the source side only
  int threads = 1;
  bool reproducible = true;       // serial reductions, zeroed timings
};

// Per-pair negatives for one epoch, plus the penalty terms frozen with them.
// Pairs sharing a source word share that word's negative lists.
struct NegativeSet {
  std::vector<std::vector<Index>> hard;  // aligned with lexicon.pairs
  std::vector<std::vector<Index>> rnd;
  Vector r_src_pair;  // penalty of each pair's source word (target keys)
  Vector r_tgt;       // penalty of every target word (source keys)
};

struct GradientBlocks {
  Matrix src_weight;
  Matrix tgt_weight;
  Matrix src_raw;
  Matrix tgt_raw;

  static GradientBlocks zeros_like(const mapping::AlignmentModel& model);
  void set_zero();
};

// Adam accumulators, one moment pair per parameter block.
struct OptimizerState {
  GradientBlocks m;
  GradientBlocks v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

OptimizerState make_optimizer(const mapping::AlignmentModel& model);

// One Adam update. Raw reflector rows whose updated norm would fall to
// kEpsilonV or below keep their previous value.
void adam_step(OptimizerState& state, mapping::AlignmentModel& model, const GradientBlocks& grads,
               double lr);

// -log sigmoid(margin_k) averaged over the negatives; the margin compares the
// CSLS score of the gold target against negative k. Penalties are constants.
double rank_loss(const Vector& x_hat, const Vector& y_hat, const Matrix& negatives, double r_x,
                 double r_y, const Vector& r_negs);

// Euclidean distance (not squared).
double mse_loss(const Vector& x_hat, const Vector& y_hat);

NegativeSet sample_negatives(const mapping::AlignmentModel& model,
                             const mapping::TablePack& tables, const lexicon::SeedLexicon& lex,
                             const TrainConfig& config, Rng& rng);

// Mean of (rank + lambda1 * distance) over the batch plus the squared
// Frobenius regularizer. `batch` holds indices into lex.pairs.
double total_loss(const mapping::AlignmentModel& model, const mapping::TablePack& tables,
                  const lexicon::SeedLexicon& lex, const std::vector<std::size_t>& batch,
                  const NegativeSet& negatives, const TrainConfig& config);

// Same value, plus exact gradients for all four parameter blocks. Negative
// selection and the r penalties are constants of the epoch.
double loss_and_gradients(const mapping::AlignmentModel& model, const mapping::TablePack& tables,
                          const lexicon::SeedLexicon& lex, const std::vector<std::size_t>& batch,
                          const NegativeSet& negatives, const TrainConfig& config,
                          GradientBlocks& grads);

// Mutual-CSLS-argmax pairs over the augment_pool most frequent words on each
// side, unioned with the input. Never removes pairs. `added` (optional)
// receives the new pairs only.
lexicon::SeedLexicon augment_dictionary(const mapping::AlignmentModel& model,
                                        const mapping::TablePack& tables,
                                        const lexicon::SeedLexicon& lex, const TrainConfig& config,
                                        std::vector<std::pair<Index, Index>>* added = nullptr);

struct HistoryRecord {
  int iteration = 0;
  int epoch = 0;
  double loss = 0.0;
  double val_p1 = 0.0;
  std::size_t dict_size = 0;
  long wall_ms = 0;
};

struct TrainCallbacks {
  // Fired when validation precision improves; receives the current model.
  std::function<void(const mapping::AlignmentModel&, int iteration, int epoch, double val_p1)>
      on_best;
  // Fired after each augmentation with the model that produced the new pairs.
  std::function<void(int iteration, const std::vector<std::pair<Index, Index>>& added,
                     const mapping::AlignmentModel&)>
      on_augment;
};

struct TrainResult {
  mapping::AlignmentModel model;
  std::vector<HistoryRecord> history;
  lexicon::SeedLexicon final_lexicon;
  double best_val_p1 = 0.0;
};

// The full training loop: `iterations` rounds of (epoch loop with per-epoch
// negative resampling, Adam updates, early stopping on validation P@1)
// followed by dictionary augmentation when self_learning is on.
TrainResult train(mapping::AlignmentModel model, const mapping::TablePack& tables,
                  const lexicon::SeedLexicon& lex, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});

}  // namespace rapo::training
