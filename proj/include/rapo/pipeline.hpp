#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rapo/embio.hpp"
#include "rapo/lexicon.hpp"
#include "rapo/training.hpp"
#include "rapo/types.hpp"

namespace rapo::pipeline {

// Everything a full run needs: hyperparameters plus data plumbing.
struct RunConfig {
  training::TrainConfig train;
  std::string src_vec;
  std::string tgt_vec;
  std::string train_dict;
  std::string test_dict;
  std::string out_dir;
  std::size_t max_vocab = 200000;
  std::size_t max_neighbors = 0;  // contextual-vector cap, 0 = uncapped
  NumericWidth numeric_width = NumericWidth::double_;
};

// Strict JSON codec: unknown keys are rejected, dumps carry every key so a
// run can be reproduced from its out_dir copy alone.
RunConfig load_run_config(const std::string& path);
// Overlays the file's keys onto an existing config (CLI default handling).
void apply_config_file(RunConfig& config, const std::string& path);
std::string dump_run_config(const RunConfig& config);

// Prints one warning line per hyperparameter outside its documented search
// range. Returns the warning count.
int warn_out_of_range(const training::TrainConfig& config);

struct EvalReport {
  std::vector<int> ks;
  std::vector<double> precision;
  std::size_t n_src_words = 0;
};

struct TrainOutcome {
  EvalReport test_report;
  double best_val_p1 = 0.0;
  std::size_t final_dict_size = 0;
  std::string checkpoint_path;
  std::string history_path;
};

// Full pipeline: load + normalize vectors, build contextual tables, parse
// dictionaries, train, evaluate on the test dictionary, and write the
// checkpoint, history, eval report, and effective config under out_dir.
// `extra` callbacks (optional) are invoked alongside the pipeline's own.
TrainOutcome run_train(const RunConfig& config, const training::TrainCallbacks* extra = nullptr);

EvalReport run_eval(const std::string& checkpoint, const std::string& src_vec,
                    const std::string& tgt_vec, const std::string& test_dict,
                    const std::vector<int>& ks, std::size_t max_vocab, int threads);

void run_induce(const std::string& checkpoint, const std::string& src_vec,
                const std::string& tgt_vec, const std::string& out_path, int k,
                std::size_t max_vocab, int threads);

// Synthetic task: a Gaussian source space, a random orthogonal map, optional
// per-word jitter, and disjoint seed/test dictionaries over s{i}/t{i} words.
struct SynthSpec {
  std::size_t vocab = 1000;
  int dim = 32;
  double noise_sigma = 0.0;
  std::size_t seed_pairs = 200;
  std::size_t test_pairs = 200;
  std::uint64_t rng_seed = 1;
  std::string distortion = "per-word-jitter";  // or "none"
};

struct SynthData {
  embio::EmbeddingTable src;
  embio::EmbeddingTable tgt;
  Matrix q;  // the orthogonal map the target space was built with
  std::vector<std::pair<std::string, std::string>> seed_dict;
  std::vector<std::pair<std::string, std::string>> test_dict;
};

SynthData synth_generate(const SynthSpec& spec);

struct SynthPaths {
  std::string src_vec;
  std::string tgt_vec;
  std::string train_dict;
  std::string test_dict;
};

// Writes src.vec / tgt.vec / train.dict / test.dict under out_dir.
SynthPaths synth_write(const SynthSpec& spec, const std::string& out_dir);

// Orthogonal least-squares fit: returns W with y ~ W x (mapped rows are
// X W^T), from the SVD of the seed cross-covariance.
Matrix procrustes_fit(const Matrix& x_rows, const Matrix& y_rows);

struct ProcrustesOutcome {
  Matrix w;
  EvalReport test_report;
};

// Baseline: normalize both spaces the same way as run_train, fit W on the
// seed pairs, evaluate with the same CSLS retrieval.
ProcrustesOutcome run_procrustes(const std::string& src_vec, const std::string& tgt_vec,
                                 const std::string& train_dict, const std::string& test_dict,
                                 const std::vector<int>& ks, std::size_t max_vocab, int csls_k,
                                 int threads);

void write_history(const std::vector<training::HistoryRecord>& history, const std::string& path);
std::string format_eval_report(const EvalReport& report);

}  // namespace rapo::pipeline
