#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rapo/error.hpp"
#include "rapo/mapping.hpp"
#include "rapo/pipeline.hpp"

namespace {

int env_threads() {
  const char* raw = std::getenv("RAPO_THREADS");
  if (raw == nullptr) return 1;
  const int n = std::atoi(raw);
  return n >= 1 ? n : 1;
}

// The config file supplies defaults, flags override: load it before CLI11
// binds the remaining options.
std::string prescan_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Bilingual lexicon induction: align two embedding spaces and retrieve translations"};
  app.require_subcommand(1);

  rapo::pipeline::RunConfig rc;
  rc.train.threads = env_threads();
  const std::string config_path = prescan_config_path(argc, argv);
  if (!config_path.empty()) rapo::pipeline::apply_config_file(rc, config_path);
  std::string activation = rapo::mapping::to_string(rc.train.activation);
  std::string width = rc.numeric_width == rapo::NumericWidth::single ? "single" : "double";

  auto* train = app.add_subcommand("train", "train an alignment and evaluate it");
  std::string config_opt;
  train->add_option("--config", config_opt, "JSON config file; flags override its values");
  train->add_option("--src-vec", rc.src_vec, "source-language .vec file");
  train->add_option("--tgt-vec", rc.tgt_vec, "target-language .vec file");
  train->add_option("--train-dict", rc.train_dict, "seed dictionary");
  train->add_option("--test-dict", rc.test_dict, "test dictionary");
  train->add_option("--out-dir", rc.out_dir, "output directory");
  train->add_option("--max-vocab", rc.max_vocab, "keep at most this many words per language");
  train->add_option("--max-neighbors", rc.max_neighbors, "contextual-vector cap, 0 = uncapped");
  train->add_option("--numeric-width", width, "table persistence width: single|double");
  train->add_option("--k-hard", rc.train.k_hard, "hard negatives per pair");
  train->add_option("--k-rand", rc.train.k_rand, "random negatives per pair");
  train->add_option("--activation", activation, "adapter activation: linear|tanh|sigmoid");
  train->add_option("--learning-rate", rc.train.learning_rate, "Adam learning rate");
  train->add_option("--tau-src", rc.train.tau_src, "source contextual similarity threshold");
  train->add_option("--tau-tgt", rc.train.tau_tgt, "target contextual similarity threshold");
  train->add_option("--lambda1", rc.train.lambda1, "distance-loss weight");
  train->add_option("--lambda2", rc.train.lambda2, "parameter regularizer weight");
  train->add_option("--iterations", rc.train.iterations, "self-learning rounds");
  train->add_option("--epochs", rc.train.epochs, "epochs per round");
  train->add_option("--patience", rc.train.patience, "early-stopping patience");
  train->add_option("--csls-k", rc.train.csls_k, "CSLS neighborhood size");
  train->add_option("--augment-pool", rc.train.augment_pool, "augmentation frequency pool");
  train->add_option("--batch-size", rc.train.batch_size, "pairs per optimizer step");
  train->add_option("--rng-seed", rc.train.rng_seed, "random seed");
  train->add_option("--self-learning", rc.train.self_learning, "augment the dictionary between rounds");
  train->add_option("--val-fraction", rc.train.val_fraction, "held-out source-word share");
  train->add_option("--chain-length", rc.train.chain_length, "reflectors per chain, 0 = dimension");
  train->add_option("--freeze-target", rc.train.freeze_target, "train the source side only");
  train->add_option("--threads", rc.train.threads, "worker threads (reproducible mode forces 1)");
  train->add_option("--reproducible", rc.train.reproducible, "serial deterministic mode");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test dictionary");
  std::string checkpoint, src_vec, tgt_vec, test_dict, out_path;
  std::vector<int> ks{1, 5, 10};
  std::size_t max_vocab = 200000;
  int threads = env_threads();
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--src-vec", src_vec, "source-language .vec file")->required()->check(CLI::ExistingFile);
  eval->add_option("--tgt-vec", tgt_vec, "target-language .vec file")->required()->check(CLI::ExistingFile);
  eval->add_option("--test-dict", test_dict, "test dictionary")->required()->check(CLI::ExistingFile);
  eval->add_option("--k-list", ks, "precision cutoffs");
  eval->add_option("--max-vocab", max_vocab, "keep at most this many words per language");
  eval->add_option("--threads", threads, "worker threads");

  auto* induce = app.add_subcommand("induce", "write top-k translations for every source word");
  int induce_k = 1;
  induce->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  induce->add_option("--src-vec", src_vec, "source-language .vec file")->required()->check(CLI::ExistingFile);
  induce->add_option("--tgt-vec", tgt_vec, "target-language .vec file")->required()->check(CLI::ExistingFile);
  induce->add_option("--out", out_path, "output translation file")->required();
  induce->add_option("--k", induce_k, "translations per source word");
  induce->add_option("--max-vocab", max_vocab, "keep at most this many words per language");
  induce->add_option("--threads", threads, "worker threads");

  auto* synth = app.add_subcommand("synth", "generate a synthetic aligned-space benchmark");
  rapo::pipeline::SynthSpec spec;
  std::string synth_out;
  synth->add_option("--vocab", spec.vocab, "words per language");
  synth->add_option("--dim", spec.dim, "embedding dimension");
  synth->add_option("--noise-sigma", spec.noise_sigma, "per-word jitter scale");
  synth->add_option("--seed-pairs", spec.seed_pairs, "training dictionary size");
  synth->add_option("--test-pairs", spec.test_pairs, "test dictionary size");
  synth->add_option("--rng-seed", spec.rng_seed, "random seed");
  synth->add_option("--distortion", spec.distortion, "none|per-word-jitter");
  synth->add_option("--out-dir", synth_out, "output directory")->required();

  auto* procrustes = app.add_subcommand("procrustes", "closed-form orthogonal baseline");
  std::string train_dict;
  int csls_k = 10;
  procrustes->add_option("--src-vec", src_vec, "source-language .vec file")->required()->check(CLI::ExistingFile);
  procrustes->add_option("--tgt-vec", tgt_vec, "target-language .vec file")->required()->check(CLI::ExistingFile);
  procrustes->add_option("--train-dict", train_dict, "seed dictionary")->required()->check(CLI::ExistingFile);
  procrustes->add_option("--test-dict", test_dict, "test dictionary")->required()->check(CLI::ExistingFile);
  procrustes->add_option("--k-list", ks, "precision cutoffs");
  procrustes->add_option("--csls-k", csls_k, "CSLS neighborhood size");
  procrustes->add_option("--max-vocab", max_vocab, "keep at most this many words per language");
  procrustes->add_option("--threads", threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (train->parsed()) {
    rc.train.activation = rapo::mapping::activation_from_string(activation);
    rc.numeric_width = width == "single" ? rapo::NumericWidth::single
                                         : (width == "double" ? rapo::NumericWidth::double_
                                                              : throw rapo::ConfigError(
                                                                    "numeric width must be single|double"));
    const auto outcome = rapo::pipeline::run_train(rc);
    std::cout << rapo::pipeline::format_eval_report(outcome.test_report);
    std::cout << "dict_size=" << outcome.final_dict_size << "\n";
    std::cout << "checkpoint=" << outcome.checkpoint_path << "\n";
    std::cout << "history=" << outcome.history_path << "\n";
  } else if (eval->parsed()) {
    const auto report =
        rapo::pipeline::run_eval(checkpoint, src_vec, tgt_vec, test_dict, ks, max_vocab, threads);
    std::cout << rapo::pipeline::format_eval_report(report);
  } else if (induce->parsed()) {
    rapo::pipeline::run_induce(checkpoint, src_vec, tgt_vec, out_path, induce_k, max_vocab, threads);
    std::cout << "translations=" << out_path << "\n";
  } else if (synth->parsed()) {
    const auto paths = rapo::pipeline::synth_write(spec, synth_out);
    std::cout << "src_vec=" << paths.src_vec << "\n"
              << "tgt_vec=" << paths.tgt_vec << "\n"
              << "train_dict=" << paths.train_dict << "\n"
              << "test_dict=" << paths.test_dict << "\n";
  } else if (procrustes->parsed()) {
    const auto outcome = rapo::pipeline::run_procrustes(src_vec, tgt_vec, train_dict, test_dict, ks,
                                                        max_vocab, csls_k, threads);
    std::cout << rapo::pipeline::format_eval_report(outcome.test_report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const rapo::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
