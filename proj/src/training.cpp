#include "rapo/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "rapo/error.hpp"
#include "rapo/retrieval.hpp"

namespace rapo::training {

namespace {

constexpr double kDistanceGuard = 1e-12;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Unique word indices touched by a batch, with per-word gradient rows.
struct WordCache {
  std::vector<Index> words;
  std::unordered_map<Index, int> row_of;
  Matrix mapped;
  Matrix grad;

  void add(Index w) {
    if (row_of.emplace(w, static_cast<int>(words.size())).second) words.push_back(w);
  }
  int row(Index w) const { return row_of.at(w); }
};

void check_finite(const Matrix& block, const char* name) {
  if (!block.allFinite())
    throw NumericError(std::string("non-finite gradient in ") + name);
}

double loss_core(const mapping::AlignmentModel& model, const mapping::TablePack& tables,
                 const lexicon::SeedLexicon& lex, const std::vector<std::size_t>& batch,
                 const NegativeSet& negatives, const TrainConfig& config, GradientBlocks* grads) {
  if (batch.empty()) throw ConfigError("training batch is empty");
  const double inv_l = 1.0 / static_cast<double>(batch.size());

  WordCache src;
  WordCache tgt;
  for (std::size_t p : batch) {
    if (p >= lex.pairs.size()) throw ConfigError("batch index out of range");
    src.add(lex.pairs[p].first);
    tgt.add(lex.pairs[p].second);
    for (Index n : negatives.hard[p]) tgt.add(n);
    for (Index n : negatives.rnd[p]) tgt.add(n);
  }
  src.mapped = mapping::forward_map(model, Side::source, src.words, *tables.src_emb, *tables.src_ctx);
  tgt.mapped = mapping::forward_map(model, Side::target, tgt.words, *tables.tgt_emb, *tables.tgt_ctx);
  if (grads != nullptr) {
    src.grad = Matrix::Zero(src.mapped.rows(), src.mapped.cols());
    tgt.grad = Matrix::Zero(tgt.mapped.rows(), tgt.mapped.cols());
  }

  double loss = 0.0;
  for (std::size_t p : batch) {
    const auto [i, j] = lex.pairs[p];
    const int si = src.row(i);
    const int tj = tgt.row(j);
    const Vector x = src.mapped.row(si).transpose();
    const Vector y = tgt.mapped.row(tj).transpose();
    const double pos_dot = x.dot(y);

    // A pair without negatives contributes no ranking term.
    const std::size_t n_neg = negatives.hard[p].size() + negatives.rnd[p].size();
    if (n_neg > 0) {
      const double r_y = negatives.r_tgt(j);
      const double inv_k = 1.0 / static_cast<double>(n_neg);
      double pair_rank = 0.0;
      auto one_negative = [&](Index n) {
        const int tn = tgt.row(n);
        // r(x) cancels in the margin between the two CSLS scores.
        const double margin = 2.0 * (pos_dot - x.dot(tgt.mapped.row(tn).transpose())) - r_y +
                              negatives.r_tgt(n);
        pair_rank += softplus(-margin);
        if (grads != nullptr) {
          const double w = -sigmoid(-margin) * inv_k;
          src.grad.row(si) += (2.0 * w) * (y.transpose() - tgt.mapped.row(tn));
          tgt.grad.row(tj) += (2.0 * w) * x.transpose();
          tgt.grad.row(tn) -= (2.0 * w) * x.transpose();
        }
      };
      for (Index n : negatives.hard[p]) one_negative(n);
      for (Index n : negatives.rnd[p]) one_negative(n);
      loss += pair_rank * inv_k;
    }

    const double dist = (x - y).norm();
    loss += config.lambda1 * dist;
    if (grads != nullptr && config.lambda1 != 0.0 && dist > kDistanceGuard) {
      const Vector d = (config.lambda1 / dist) * (x - y);
      src.grad.row(si) += d.transpose();
      tgt.grad.row(tj) -= d.transpose();
    }
  }
  loss *= inv_l;

  if (grads != nullptr) {
    auto backward_side = [&](WordCache& cache, Side side, Matrix& grad_weight, Matrix& grad_raw) {
      const auto& emb = tables.emb(side);
      const auto& ctx = tables.ctx(side);
      const auto& adapter = model.adapter(side);
      const auto& chain = model.chain(side);
      for (std::size_t r = 0; r < cache.words.size(); ++r) {
        const Vector upstream = cache.grad.row(static_cast<Eigen::Index>(r)).transpose() * inv_l;
        if (upstream.isZero(0.0)) continue;
        const Index w = cache.words[r];
        const Vector x_bar = ctx.vectors.row(w).transpose();
        mapping::AdapterTape atape;
        mapping::ChainTape ctape;
        const Vector x_tilde =
            mapping::adapter_forward(adapter, emb.vectors.row(w).transpose(), x_bar, &atape);
        mapping::chain_forward(chain, x_tilde, &ctape);
        const Vector g_tilde = mapping::chain_backward(chain, ctape, upstream, grad_raw);
        mapping::adapter_backward(adapter, x_bar, atape, g_tilde, grad_weight);
      }
    };
    backward_side(src, Side::source, grads->src_weight, grads->src_raw);
    backward_side(tgt, Side::target, grads->tgt_weight, grads->tgt_raw);
  }

  const double reg = model.src_adapter.weight.squaredNorm() +
                     model.tgt_adapter.weight.squaredNorm() + model.src_chain.raw.squaredNorm() +
                     model.tgt_chain.raw.squaredNorm();
  loss += config.lambda2 * reg;
  if (grads != nullptr && config.lambda2 != 0.0) {
    grads->src_weight += 2.0 * config.lambda2 * model.src_adapter.weight;
    grads->tgt_weight += 2.0 * config.lambda2 * model.tgt_adapter.weight;
    grads->src_raw += 2.0 * config.lambda2 * model.src_chain.raw;
    grads->tgt_raw += 2.0 * config.lambda2 * model.tgt_chain.raw;
  }

  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  if (grads != nullptr) {
    check_finite(grads->src_weight, "source adapter weights");
    check_finite(grads->tgt_weight, "target adapter weights");
    check_finite(grads->src_raw, "source reflector vectors");
    check_finite(grads->tgt_raw, "target reflector vectors");
  }
  return loss;
}

}  // namespace

GradientBlocks GradientBlocks::zeros_like(const mapping::AlignmentModel& model) {
  GradientBlocks g;
  g.src_weight = Matrix::Zero(model.src_adapter.weight.rows(), model.src_adapter.weight.cols());
  g.tgt_weight = Matrix::Zero(model.tgt_adapter.weight.rows(), model.tgt_adapter.weight.cols());
  g.src_raw = Matrix::Zero(model.src_chain.raw.rows(), model.src_chain.raw.cols());
  g.tgt_raw = Matrix::Zero(model.tgt_chain.raw.rows(), model.tgt_chain.raw.cols());
  return g;
}

void GradientBlocks::set_zero() {
  src_weight.setZero();
  tgt_weight.setZero();
  src_raw.setZero();
  tgt_raw.setZero();
}

OptimizerState make_optimizer(const mapping::AlignmentModel& model) {
  OptimizerState state;
  state.m = GradientBlocks::zeros_like(model);
  state.v = GradientBlocks::zeros_like(model);
  return state;
}

void adam_step(OptimizerState& state, mapping::AlignmentModel& model, const GradientBlocks& grads,
               double lr) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  auto update = [&](Matrix& m, Matrix& v, Matrix& param, const Matrix& g, bool guard_rows) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square()).matrix();
    const Matrix delta =
        (lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps)).matrix();
    if (!guard_rows) {
      param -= delta;
      return;
    }
    for (Eigen::Index r = 0; r < param.rows(); ++r) {
      const Eigen::RowVectorXd cand = param.row(r) - delta.row(r);
      if (cand.norm() > mapping::kEpsilonV) param.row(r) = cand;
    }
  };
  update(state.m.src_weight, state.v.src_weight, model.src_adapter.weight, grads.src_weight, false);
  update(state.m.tgt_weight, state.v.tgt_weight, model.tgt_adapter.weight, grads.tgt_weight, false);
  update(state.m.src_raw, state.v.src_raw, model.src_chain.raw, grads.src_raw, true);
  update(state.m.tgt_raw, state.v.tgt_raw, model.tgt_chain.raw, grads.tgt_raw, true);
}

double rank_loss(const Vector& x_hat, const Vector& y_hat, const Matrix& negatives, double r_x,
                 double r_y, const Vector& r_negs) {
  const Eigen::Index k = negatives.rows();
  if (k < 1) throw ConfigError("rank_loss needs at least one negative");
  if (r_negs.size() != k) throw ConfigError("rank_loss: penalty count does not match negatives");
  const double pos = retrieval::csls_score(x_hat, y_hat, r_x, r_y);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double neg =
        retrieval::csls_score(x_hat, negatives.row(i).transpose(), r_x, r_negs(i));
    sum += softplus(-(pos - neg));
  }
  return sum / static_cast<double>(k);
}

double mse_loss(const Vector& x_hat, const Vector& y_hat) { return (x_hat - y_hat).norm(); }

NegativeSet sample_negatives(const mapping::AlignmentModel& model,
                             const mapping::TablePack& tables, const lexicon::SeedLexicon& lex,
                             const TrainConfig& config, Rng& rng) {
  if (lex.pairs.empty()) throw ConfigError("negative sampling over an empty lexicon");
  if (config.k_hard < 0 || config.k_rand < 0)
    throw ConfigError("negative counts must be non-negative");
  const std::size_t k_total = static_cast<std::size_t>(config.k_hard + config.k_rand);
  if (k_total == 0) throw ConfigError("k_hard + k_rand must be at least 1");

  const Matrix mapped_src =
      mapping::map_table(model, Side::source, *tables.src_emb, *tables.src_ctx, config.threads);
  const Matrix mapped_tgt =
      mapping::map_table(model, Side::target, *tables.tgt_emb, *tables.tgt_ctx, config.threads);
  const Eigen::Index n_tgt = mapped_tgt.rows();

  NegativeSet out;
  out.r_tgt = retrieval::csls_penalties(mapped_tgt, mapped_src, config.csls_k, false,
                                        config.threads);

  // Unique source words in first-appearance order; pairs share their word's draw.
  std::vector<Index> sources;
  std::unordered_map<Index, std::size_t> source_slot;
  for (const auto& [s, t] : lex.pairs) {
    (void)t;
    if (source_slot.emplace(s, sources.size()).second) sources.push_back(s);
  }
  Matrix query_rows(static_cast<Eigen::Index>(sources.size()), mapped_src.cols());
  for (std::size_t u = 0; u < sources.size(); ++u)
    query_rows.row(static_cast<Eigen::Index>(u)) = mapped_src.row(sources[u]);
  const Vector r_sources =
      retrieval::csls_penalties(query_rows, mapped_tgt, config.csls_k, false, config.threads);

  std::vector<std::vector<Index>> hard_of(sources.size());
  std::vector<std::vector<Index>> rnd_of(sources.size());
  std::vector<Index> order(static_cast<std::size_t>(n_tgt));
  for (std::size_t u = 0; u < sources.size(); ++u) {
    const Index s = sources[u];
    const auto gold_it = lex.source_gold.find(s);
    const std::size_t n_gold = gold_it->second.size();
    if (static_cast<std::size_t>(n_tgt) < k_total + n_gold)
      throw ConfigError("target vocabulary of " + std::to_string(n_tgt) +
                        " cannot supply " + std::to_string(k_total) +
                        " negatives for a word with " + std::to_string(n_gold) + " golds");

    auto& hard = hard_of[u];
    if (config.k_hard > 0) {
      // Rank by CSLS under current parameters; the query's own penalty is a
      // per-query constant and cannot change the order.
      const Vector scores =
          2.0 * (mapped_tgt * query_rows.row(static_cast<Eigen::Index>(u)).transpose()) -
          out.r_tgt;
      std::iota(order.begin(), order.end(), Index{0});
      const std::size_t prefix =
          std::min(static_cast<std::size_t>(n_tgt), static_cast<std::size_t>(config.k_hard) + n_gold);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(prefix),
                        order.end(), [&](Index a, Index b) {
                          if (scores(a) != scores(b)) return scores(a) > scores(b);
                          return a < b;
                        });
      hard.reserve(static_cast<std::size_t>(config.k_hard));
      for (std::size_t i = 0; i < prefix && hard.size() < static_cast<std::size_t>(config.k_hard);
           ++i) {
        if (!lex.is_gold(s, order[i])) hard.push_back(order[i]);
      }
    }

    auto& rnd = rnd_of[u];
    if (config.k_rand > 0) {
      std::unordered_set<Index> used(hard.begin(), hard.end());
      rnd.reserve(static_cast<std::size_t>(config.k_rand));
      while (rnd.size() < static_cast<std::size_t>(config.k_rand)) {
        const Index cand = static_cast<Index>(rng.uniform_index(static_cast<std::size_t>(n_tgt)));
        if (lex.is_gold(s, cand) || !used.insert(cand).second) continue;
        rnd.push_back(cand);
      }
    }
  }

  out.hard.resize(lex.pairs.size());
  out.rnd.resize(lex.pairs.size());
  out.r_src_pair.resize(static_cast<Eigen::Index>(lex.pairs.size()));
  for (std::size_t p = 0; p < lex.pairs.size(); ++p) {
    const std::size_t u = source_slot.at(lex.pairs[p].first);
    out.hard[p] = hard_of[u];
    out.rnd[p] = rnd_of[u];
    out.r_src_pair(static_cast<Eigen::Index>(p)) = r_sources(static_cast<Eigen::Index>(u));
  }
  return out;
}

double total_loss(const mapping::AlignmentModel& model, const mapping::TablePack& tables,
                  const lexicon::SeedLexicon& lex, const std::vector<std::size_t>& batch,
                  const NegativeSet& negatives, const TrainConfig& config) {
  return loss_core(model, tables, lex, batch, negatives, config, nullptr);
}

double loss_and_gradients(const mapping::AlignmentModel& model, const mapping::TablePack& tables,
                          const lexicon::SeedLexicon& lex, const std::vector<std::size_t>& batch,
                          const NegativeSet& negatives, const TrainConfig& config,
                          GradientBlocks& grads) {
  grads = GradientBlocks::zeros_like(model);
  return loss_core(model, tables, lex, batch, negatives, config, &grads);
}

lexicon::SeedLexicon augment_dictionary(const mapping::AlignmentModel& model,
                                        const mapping::TablePack& tables,
                                        const lexicon::SeedLexicon& lex, const TrainConfig& config,
                                        std::vector<std::pair<Index, Index>>* added) {
  const std::size_t n_src = tables.src_emb->size();
  const std::size_t n_tgt = tables.tgt_emb->size();
  const std::size_t pool_src = std::min(config.augment_pool, n_src);
  const std::size_t pool_tgt = std::min(config.augment_pool, n_tgt);
  if (pool_src < config.augment_pool || pool_tgt < config.augment_pool)
    std::cerr << "warn=augment_pool_clamped pool=" << config.augment_pool << " src=" << pool_src
              << " tgt=" << pool_tgt << "\n";
  if (pool_src == 0 || pool_tgt == 0) throw ConfigError("augmentation pool is empty");

  std::vector<Index> ids_src(pool_src);
  std::iota(ids_src.begin(), ids_src.end(), Index{0});
  std::vector<Index> ids_tgt(pool_tgt);
  std::iota(ids_tgt.begin(), ids_tgt.end(), Index{0});
  const Matrix x =
      mapping::forward_map(model, Side::source, ids_src, *tables.src_emb, *tables.src_ctx);
  const Matrix y =
      mapping::forward_map(model, Side::target, ids_tgt, *tables.tgt_emb, *tables.tgt_ctx);
  const Vector r_fwd = retrieval::csls_penalties(x, y, config.csls_k, false, config.threads);
  const Vector r_bwd = retrieval::csls_penalties(y, x, config.csls_k, false, config.threads);

  // Both argmax directions in one blocked pass over the similarity matrix.
  std::vector<Index> fwd_best(pool_src, -1);
  std::vector<double> col_val(pool_tgt, -std::numeric_limits<double>::infinity());
  std::vector<Index> col_row(pool_tgt, -1);
  const Eigen::Index block =
      std::max<Eigen::Index>(1, std::min<Eigen::Index>(1024, (1 << 22) / static_cast<Eigen::Index>(pool_tgt) + 1));
  for (Eigen::Index b0 = 0; b0 < static_cast<Eigen::Index>(pool_src); b0 += block) {
    const Eigen::Index bs = std::min(block, static_cast<Eigen::Index>(pool_src) - b0);
    const Matrix dots = x.middleRows(b0, bs) * y.transpose();
    for (Eigen::Index r = 0; r < bs; ++r) {
      double best = -std::numeric_limits<double>::infinity();
      Index best_j = -1;
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(pool_tgt); ++j) {
        const double row_score = 2.0 * dots(r, j) - r_bwd(j);
        if (row_score > best) {
          best = row_score;
          best_j = static_cast<Index>(j);
        }
        const double col_score = 2.0 * dots(r, j) - r_fwd(b0 + r);
        if (col_score > col_val[static_cast<std::size_t>(j)]) {
          col_val[static_cast<std::size_t>(j)] = col_score;
          col_row[static_cast<std::size_t>(j)] = static_cast<Index>(b0 + r);
        }
      }
      fwd_best[static_cast<std::size_t>(b0 + r)] = best_j;
    }
  }

  lexicon::SeedLexicon out = lex;
  for (std::size_t i = 0; i < pool_src; ++i) {
    const Index j = fwd_best[i];
    if (j < 0 || col_row[static_cast<std::size_t>(j)] != static_cast<Index>(i)) continue;
    if (out.add_pair(static_cast<Index>(i), j) && added != nullptr)
      added->emplace_back(static_cast<Index>(i), j);
  }
  return out;
}

TrainResult train(mapping::AlignmentModel model, const mapping::TablePack& tables,
                  const lexicon::SeedLexicon& lex, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
  if (lex.pairs.empty()) throw ConfigError("training requires a non-empty seed lexicon");
  if (config.epochs < 1 || config.iterations < 1) throw ConfigError("epochs and iterations must be positive");
  if (config.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (config.patience < 1) throw ConfigError("patience must be positive");
  if (config.k_hard + config.k_rand < 1) throw ConfigError("k_hard + k_rand must be at least 1");
  if (tables.src_emb->dim != model.dim() || tables.tgt_emb->dim != model.dim())
    throw ConfigError("model dimension does not match the embedding tables");

  Rng rng(config.rng_seed);
  const lexicon::LexiconSplit split = lexicon::split_lexicon(lex, config.val_fraction, config.rng_seed);
  lexicon::SeedLexicon train_lex = split.train;
  const lexicon::SeedLexicon& val = split.validation;
  const bool has_val = !val.pairs.empty();

  TrainResult result;
  double global_best = -1.0;
  const int outer = config.self_learning ? config.iterations : 1;
  for (int c = 1; c <= outer; ++c) {
    OptimizerState opt = make_optimizer(model);
    double iter_best = -1.0;
    double iter_best_loss = std::numeric_limits<double>::infinity();
    int stale = 0;
    mapping::AlignmentModel best_model = model;

    for (int e = 1; e <= config.epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      const NegativeSet negatives = sample_negatives(model, tables, train_lex, config, rng);

      std::vector<std::size_t> order(train_lex.pairs.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);

      double loss_sum = 0.0;
      GradientBlocks grads;
      for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
        const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
        const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                             order.begin() + static_cast<std::ptrdiff_t>(b1));
        const double batch_loss =
            loss_and_gradients(model, tables, train_lex, batch, negatives, config, grads);
        if (config.freeze_target) {
          grads.tgt_weight.setZero();
          grads.tgt_raw.setZero();
        }
        adam_step(opt, model, grads, config.learning_rate);
        loss_sum += batch_loss * static_cast<double>(batch.size());
      }
      const double epoch_loss = loss_sum / static_cast<double>(order.size());

      double val_p1 = 0.0;
      if (has_val) {
        const retrieval::RetrievalIndex index =
            retrieval::build_index(model, tables, config.csls_k, config.threads);
        val_p1 = retrieval::precision_at_k(index, val, 1);
      }
      const long wall_ms =
          config.reproducible
              ? 0
              : static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count());
      result.history.push_back({c, e, epoch_loss, val_p1, train_lex.size(), wall_ms});

      if (has_val) {
        // Precision decides; the training loss breaks plateaus so a saturated
        // validation set does not freeze learning.
        bool improved = false;
        if (val_p1 > iter_best) {
          iter_best = val_p1;
          iter_best_loss = epoch_loss;
          improved = true;
        } else if (val_p1 == iter_best && epoch_loss < iter_best_loss) {
          iter_best_loss = epoch_loss;
          improved = true;
        }
        if (improved) {
          stale = 0;
          best_model = model;
          if (val_p1 > global_best) {
            global_best = val_p1;
            if (callbacks.on_best) callbacks.on_best(model, c, e, val_p1);
          }
        } else if (++stale >= config.patience) {
          break;
        }
      }
    }
    if (has_val) model = best_model;

    if (config.self_learning) {
      std::vector<std::pair<Index, Index>> proposed;
      augment_dictionary(model, tables, train_lex, config, &proposed);
      std::vector<std::pair<Index, Index>> added;
      for (const auto& [i, j] : proposed) {
        // Held-out pairs stay out of the training batches.
        if (has_val && val.is_gold(i, j)) continue;
        if (train_lex.add_pair(i, j)) added.push_back({i, j});
      }
      if (callbacks.on_augment) callbacks.on_augment(c, added, model);
    }
  }

  result.model = std::move(model);
  result.final_lexicon = std::move(train_lex);
  result.best_val_p1 = std::max(global_best, 0.0);
  return result;
}

}  // namespace rapo::training
