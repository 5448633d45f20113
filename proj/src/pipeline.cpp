#include "rapo/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <Eigen/SVD>

#include "json.hpp"
#include "rapo/error.hpp"
#include "rapo/mapping.hpp"
#include "rapo/retrieval.hpp"
#include "rapo/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace rapo::pipeline {

namespace {

std::string width_name(NumericWidth w) {
  return w == NumericWidth::single ? "single" : "double";
}

NumericWidth width_from_string(const std::string& s) {
  if (s == "single") return NumericWidth::single;
  if (s == "double") return NumericWidth::double_;
  throw ConfigError("numeric_width must be 'single' or 'double', got '" + s + "'");
}

struct PreparedTables {
  embio::EmbeddingTable src_emb;
  embio::ContextualTable src_ctx;
  embio::EmbeddingTable tgt_emb;
  embio::ContextualTable tgt_ctx;

  mapping::TablePack pack() const { return {&src_emb, &src_ctx, &tgt_emb, &tgt_ctx}; }
};

PreparedTables prepare_tables(const std::string& src_vec, const std::string& tgt_vec,
                              std::size_t max_vocab, double tau_src, double tau_tgt,
                              std::size_t max_neighbors, int threads) {
  PreparedTables out;
  out.src_emb = embio::normalize_pipeline(embio::load_vec_file(src_vec, max_vocab));
  out.tgt_emb = embio::normalize_pipeline(embio::load_vec_file(tgt_vec, max_vocab));
  out.src_ctx = embio::build_contextual_table(out.src_emb, tau_src, max_neighbors, 1024, threads);
  out.tgt_ctx = embio::build_contextual_table(out.tgt_emb, tau_tgt, max_neighbors, 1024, threads);
  return out;
}

lexicon::SeedLexicon parse_reported(const std::string& path, const char* label,
                                    const embio::EmbeddingTable& src,
                                    const embio::EmbeddingTable& tgt) {
  lexicon::ParseReport report;
  lexicon::SeedLexicon lex = lexicon::parse_dictionary(path, src, tgt, &report);
  std::cerr << "dict=" << label << " kept=" << report.kept << " skipped_oov=" << report.skipped_oov
            << " skipped_dup=" << report.skipped_dup << "\n";
  if (lex.pairs.empty())
    throw DataError(std::string(label) + " dictionary has no usable pairs: " + path);
  return lex;
}

EvalReport evaluate(const retrieval::RetrievalIndex& index, const lexicon::SeedLexicon& test,
                    const std::vector<int>& ks) {
  EvalReport report;
  report.ks = ks;
  for (int k : ks) report.precision.push_back(retrieval::precision_at_k(index, test, k));
  report.n_src_words = test.source_gold.size();
  return report;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  RunConfig config;
  apply_config_file(config, path);
  return config;
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "src_vec") config.src_vec = value.get<std::string>();
      else if (key == "tgt_vec") config.tgt_vec = value.get<std::string>();
      else if (key == "train_dict") config.train_dict = value.get<std::string>();
      else if (key == "test_dict") config.test_dict = value.get<std::string>();
      else if (key == "out_dir") config.out_dir = value.get<std::string>();
      else if (key == "max_vocab") config.max_vocab = value.get<std::size_t>();
      else if (key == "max_neighbors") config.max_neighbors = value.get<std::size_t>();
      else if (key == "numeric_width") config.numeric_width = width_from_string(value.get<std::string>());
      else if (key == "k_hard") config.train.k_hard = value.get<int>();
      else if (key == "k_rand") config.train.k_rand = value.get<int>();
      else if (key == "activation")
        config.train.activation = mapping::activation_from_string(value.get<std::string>());
      else if (key == "learning_rate") config.train.learning_rate = value.get<double>();
      else if (key == "tau_src") config.train.tau_src = value.get<double>();
      else if (key == "tau_tgt") config.train.tau_tgt = value.get<double>();
      else if (key == "lambda1") config.train.lambda1 = value.get<double>();
      else if (key == "lambda2") config.train.lambda2 = value.get<double>();
      else if (key == "iterations") config.train.iterations = value.get<int>();
      else if (key == "epochs") config.train.epochs = value.get<int>();
      else if (key == "patience") config.train.patience = value.get<int>();
      else if (key == "csls_k") config.train.csls_k = value.get<int>();
      else if (key == "augment_pool") config.train.augment_pool = value.get<std::size_t>();
      else if (key == "batch_size") config.train.batch_size = value.get<std::size_t>();
      else if (key == "rng_seed") config.train.rng_seed = value.get<std::uint64_t>();
      else if (key == "self_learning") config.train.self_learning = value.get<bool>();
      else if (key == "val_fraction") config.train.val_fraction = value.get<double>();
      else if (key == "chain_length") config.train.chain_length = value.get<Eigen::Index>();
      else if (key == "freeze_target") config.train.freeze_target = value.get<bool>();
      else if (key == "threads") config.train.threads = value.get<int>();
      else if (key == "reproducible") config.train.reproducible = value.get<bool>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::type_error& e) {
    throw ConfigError("config value has the wrong type: " + std::string(e.what()));
  }
}

std::string dump_run_config(const RunConfig& config) {
  ordered_json j;
  j["src_vec"] = config.src_vec;
  j["tgt_vec"] = config.tgt_vec;
  j["train_dict"] = config.train_dict;
  j["test_dict"] = config.test_dict;
  j["out_dir"] = config.out_dir;
  j["max_vocab"] = config.max_vocab;
  j["max_neighbors"] = config.max_neighbors;
  j["numeric_width"] = width_name(config.numeric_width);
  j["k_hard"] = config.train.k_hard;
  j["k_rand"] = config.train.k_rand;
  j["activation"] = mapping::to_string(config.train.activation);
  j["learning_rate"] = config.train.learning_rate;
  j["tau_src"] = config.train.tau_src;
  j["tau_tgt"] = config.train.tau_tgt;
  j["lambda1"] = config.train.lambda1;
  j["lambda2"] = config.train.lambda2;
  j["iterations"] = config.train.iterations;
  j["epochs"] = config.train.epochs;
  j["patience"] = config.train.patience;
  j["csls_k"] = config.train.csls_k;
  j["augment_pool"] = config.train.augment_pool;
  j["batch_size"] = config.train.batch_size;
  j["rng_seed"] = config.train.rng_seed;
  j["self_learning"] = config.train.self_learning;
  j["val_fraction"] = config.train.val_fraction;
  j["chain_length"] = static_cast<long long>(config.train.chain_length);
  j["freeze_target"] = config.train.freeze_target;
  j["threads"] = config.train.threads;
  j["reproducible"] = config.train.reproducible;
  return j.dump(2) + "\n";
}

int warn_out_of_range(const training::TrainConfig& config) {
  int warnings = 0;
  auto warn = [&](const char* key, const std::string& value) {
    std::cerr << "warn=out_of_search_range key=" << key << " value=" << value << "\n";
    ++warnings;
  };
  auto in_negative_set = [](int k) { return k == 64 || k == 128 || k == 192 || k == 256; };
  if (!in_negative_set(config.k_hard)) warn("k_hard", std::to_string(config.k_hard));
  if (!in_negative_set(config.k_rand)) warn("k_rand", std::to_string(config.k_rand));
  if (config.learning_rate < 0.001 || config.learning_rate > 0.003)
    warn("learning_rate", std::to_string(config.learning_rate));
  if (config.tau_src < 0.7 || config.tau_src > 0.99) warn("tau_src", std::to_string(config.tau_src));
  if (config.tau_tgt < 0.7 || config.tau_tgt > 0.99) warn("tau_tgt", std::to_string(config.tau_tgt));
  if (config.lambda1 < 0.5 || config.lambda1 > 2.5) warn("lambda1", std::to_string(config.lambda1));
  if (config.lambda2 < 0.001 || config.lambda2 > 0.1) warn("lambda2", std::to_string(config.lambda2));
  return warnings;
}

void write_history(const std::vector<training::HistoryRecord>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write history: " + path);
  char buf[256];
  for (const auto& rec : history) {
    std::snprintf(buf, sizeof(buf),
                  "iteration=%d epoch=%d loss=%.17g val_p1=%.17g dict_size=%zu wall_ms=%ld\n",
                  rec.iteration, rec.epoch, rec.loss, rec.val_p1, rec.dict_size, rec.wall_ms);
    out << buf;
  }
  if (!out) throw DataError("failed writing history: " + path);
}

std::string format_eval_report(const EvalReport& report) {
  std::string text;
  char buf[64];
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "p_at_%d=%.6f\n", report.ks[i], report.precision[i]);
    text += buf;
  }
  text += "n_src_words=" + std::to_string(report.n_src_words) + "\n";
  return text;
}

TrainOutcome run_train(const RunConfig& config_in, const training::TrainCallbacks* extra) {
  RunConfig config = config_in;
  if (config.train.reproducible && config.train.threads != 1) {
    std::cerr << "warn=reproducible_forces_serial threads=" << config.train.threads << "\n";
    config.train.threads = 1;
  }
  require_file(config.src_vec, "source vectors");
  require_file(config.tgt_vec, "target vectors");
  require_file(config.train_dict, "train dictionary");
  require_file(config.test_dict, "test dictionary");
  if (config.out_dir.empty()) throw ConfigError("out_dir is required");
  fs::create_directories(config.out_dir);
  warn_out_of_range(config.train);
  write_text(config.out_dir + "/config.json", dump_run_config(config));

  PreparedTables data =
      prepare_tables(config.src_vec, config.tgt_vec, config.max_vocab, config.train.tau_src,
                     config.train.tau_tgt, config.max_neighbors, config.train.threads);
  const mapping::TablePack tables = data.pack();
  const lexicon::SeedLexicon seed = parse_reported(config.train_dict, "train", data.src_emb, data.tgt_emb);
  const lexicon::SeedLexicon test = parse_reported(config.test_dict, "test", data.src_emb, data.tgt_emb);

  Rng init_rng(config.train.rng_seed);
  mapping::AlignmentModel model = mapping::init_model(data.src_emb.dim, config.train.chain_length,
                                                      config.train.activation, init_rng);
  const mapping::ModelMeta meta{config.train.tau_src, config.train.tau_tgt, config.max_neighbors};
  const std::string checkpoint = config.out_dir + "/model.bin";

  training::TrainCallbacks callbacks;
  callbacks.on_best = [&](const mapping::AlignmentModel& m, int c, int e, double v) {
    mapping::save_model(m, meta, checkpoint);
    if (extra != nullptr && extra->on_best) extra->on_best(m, c, e, v);
  };
  callbacks.on_augment = [&](int c, const std::vector<std::pair<Index, Index>>& added,
                             const mapping::AlignmentModel& m) {
    if (extra != nullptr && extra->on_augment) extra->on_augment(c, added, m);
  };

  training::TrainResult result = training::train(std::move(model), tables, seed, config.train, callbacks);
  mapping::save_model(result.model, meta, checkpoint);
  const std::string history_path = config.out_dir + "/history.txt";
  write_history(result.history, history_path);

  const retrieval::RetrievalIndex index =
      retrieval::build_index(result.model, tables, config.train.csls_k, config.train.threads);
  TrainOutcome outcome;
  outcome.test_report = evaluate(index, test, {1, 5, 10});
  outcome.best_val_p1 = result.best_val_p1;
  outcome.final_dict_size = result.final_lexicon.size();
  outcome.checkpoint_path = checkpoint;
  outcome.history_path = history_path;
  write_text(config.out_dir + "/eval.txt", format_eval_report(outcome.test_report));
  return outcome;
}

EvalReport run_eval(const std::string& checkpoint, const std::string& src_vec,
                    const std::string& tgt_vec, const std::string& test_dict,
                    const std::vector<int>& ks, std::size_t max_vocab, int threads) {
  require_file(checkpoint, "checkpoint");
  require_file(src_vec, "source vectors");
  require_file(tgt_vec, "target vectors");
  require_file(test_dict, "test dictionary");
  mapping::ModelMeta meta;
  const mapping::AlignmentModel model = mapping::load_model(checkpoint, &meta);
  PreparedTables data = prepare_tables(src_vec, tgt_vec, max_vocab, meta.tau_src, meta.tau_tgt,
                                       meta.max_neighbors, threads);
  const lexicon::SeedLexicon test = parse_reported(test_dict, "test", data.src_emb, data.tgt_emb);
  const retrieval::RetrievalIndex index = retrieval::build_index(model, data.pack(), 10, threads);
  return evaluate(index, test, ks);
}

void run_induce(const std::string& checkpoint, const std::string& src_vec,
                const std::string& tgt_vec, const std::string& out_path, int k,
                std::size_t max_vocab, int threads) {
  require_file(checkpoint, "checkpoint");
  require_file(src_vec, "source vectors");
  require_file(tgt_vec, "target vectors");
  mapping::ModelMeta meta;
  const mapping::AlignmentModel model = mapping::load_model(checkpoint, &meta);
  PreparedTables data = prepare_tables(src_vec, tgt_vec, max_vocab, meta.tau_src, meta.tau_tgt,
                                       meta.max_neighbors, threads);
  const retrieval::RetrievalIndex index = retrieval::build_index(model, data.pack(), 10, threads);
  retrieval::induce(index, data.src_emb.words, data.tgt_emb.words, out_path, k);
}

SynthData synth_generate(const SynthSpec& spec) {
  if (spec.vocab == 0) throw ConfigError("synth vocab must be positive");
  if (spec.dim <= 0) throw ConfigError("synth dim must be positive");
  if (spec.noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
  if (spec.seed_pairs + spec.test_pairs > spec.vocab)
    throw ConfigError("seed_pairs + test_pairs exceed the vocabulary");
  if (spec.distortion != "none" && spec.distortion != "per-word-jitter")
    throw ConfigError("distortion must be 'none' or 'per-word-jitter'");
  const double sigma = spec.distortion == "none" ? 0.0 : spec.noise_sigma;

  Rng rng(spec.rng_seed);
  const Eigen::Index n = static_cast<Eigen::Index>(spec.vocab);
  const Eigen::Index d = spec.dim;

  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double norm = 0.0;
    do {
      for (Eigen::Index c = 0; c < d; ++c) x(i, c) = rng.normal();
      norm = x.row(i).norm();
    } while (norm <= mapping::kEpsilonV);
    x.row(i) /= norm;
  }

  mapping::HouseholderChain chain;
  chain.raw.resize(d, d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index c = 0; c < d; ++c) chain.raw(i, c) = sd * rng.normal();
  Matrix q = mapping::chain_matrix(chain);

  Matrix y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector v = q * x.row(i).transpose();
    if (sigma > 0.0)
      for (Eigen::Index c = 0; c < d; ++c) v(c) += sigma * rng.normal();
    const double norm = v.norm();
    if (norm <= mapping::kEpsilonV) throw NumericError("synthetic target row collapsed to zero");
    y.row(i) = v.transpose() / norm;
  }

  SynthData out;
  out.q = std::move(q);
  out.src.dim = static_cast<int>(d);
  out.src.vectors = std::move(x);
  out.tgt.dim = static_cast<int>(d);
  out.tgt.vectors = std::move(y);
  out.src.words.reserve(spec.vocab);
  out.tgt.words.reserve(spec.vocab);
  for (std::size_t i = 0; i < spec.vocab; ++i) {
    out.src.words.push_back("s" + std::to_string(i));
    out.tgt.words.push_back("t" + std::to_string(i));
  }
  out.src.rebuild_index();
  out.tgt.rebuild_index();

  std::vector<std::size_t> order(spec.vocab);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  for (std::size_t i = 0; i < spec.seed_pairs; ++i)
    out.seed_dict.push_back({out.src.words[order[i]], out.tgt.words[order[i]]});
  for (std::size_t i = spec.seed_pairs; i < spec.seed_pairs + spec.test_pairs; ++i)
    out.test_dict.push_back({out.src.words[order[i]], out.tgt.words[order[i]]});
  return out;
}

SynthPaths synth_write(const SynthSpec& spec, const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("out_dir is required");
  fs::create_directories(out_dir);
  const SynthData data = synth_generate(spec);

  SynthPaths paths;
  paths.src_vec = out_dir + "/src.vec";
  paths.tgt_vec = out_dir + "/tgt.vec";
  paths.train_dict = out_dir + "/train.dict";
  paths.test_dict = out_dir + "/test.dict";
  embio::save_vec_file(data.src, paths.src_vec);
  embio::save_vec_file(data.tgt, paths.tgt_vec);

  auto write_dict = [](const std::vector<std::pair<std::string, std::string>>& dict,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dictionary: " + path);
    for (const auto& [s, t] : dict) out << s << ' ' << t << '\n';
    if (!out) throw DataError("failed writing dictionary: " + path);
  };
  write_dict(data.seed_dict, paths.train_dict);
  write_dict(data.test_dict, paths.test_dict);
  return paths;
}

Matrix procrustes_fit(const Matrix& x_rows, const Matrix& y_rows) {
  if (x_rows.rows() != y_rows.rows() || x_rows.cols() != y_rows.cols())
    throw ConfigError("procrustes_fit: row matrices must have matching shapes");
  if (x_rows.rows() == 0) throw ConfigError("procrustes_fit: no seed pairs");
  const Matrix cross = y_rows.transpose() * x_rows;
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues().minCoeff() < 1e-12)
    std::cerr << "warn=degenerate_seed_rank min_singular_value="
              << svd.singularValues().minCoeff() << "\n";
  return svd.matrixU() * svd.matrixV().transpose();
}

ProcrustesOutcome run_procrustes(const std::string& src_vec, const std::string& tgt_vec,
                                 const std::string& train_dict, const std::string& test_dict,
                                 const std::vector<int>& ks, std::size_t max_vocab, int csls_k,
                                 int threads) {
  require_file(src_vec, "source vectors");
  require_file(tgt_vec, "target vectors");
  require_file(train_dict, "train dictionary");
  require_file(test_dict, "test dictionary");
  const embio::EmbeddingTable src = embio::normalize_pipeline(embio::load_vec_file(src_vec, max_vocab));
  const embio::EmbeddingTable tgt = embio::normalize_pipeline(embio::load_vec_file(tgt_vec, max_vocab));
  const lexicon::SeedLexicon seed = parse_reported(train_dict, "train", src, tgt);
  const lexicon::SeedLexicon test = parse_reported(test_dict, "test", src, tgt);

  Matrix x_rows(static_cast<Eigen::Index>(seed.pairs.size()), src.dim);
  Matrix y_rows(static_cast<Eigen::Index>(seed.pairs.size()), tgt.dim);
  for (std::size_t p = 0; p < seed.pairs.size(); ++p) {
    x_rows.row(static_cast<Eigen::Index>(p)) = src.vectors.row(seed.pairs[p].first);
    y_rows.row(static_cast<Eigen::Index>(p)) = tgt.vectors.row(seed.pairs[p].second);
  }

  ProcrustesOutcome outcome;
  outcome.w = procrustes_fit(x_rows, y_rows);
  const retrieval::RetrievalIndex index = retrieval::build_index_from_mapped(
      src.vectors * outcome.w.transpose(), tgt.vectors, csls_k, threads);
  outcome.test_report = evaluate(index, test, ks);
  return outcome;
}

}  // namespace rapo::pipeline
