#include "rapo/mapping.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "rapo/error.hpp"
#include "rapo/parallel.hpp"

namespace rapo::mapping {

namespace {

constexpr char kModelMagic[8] = {'R', 'A', 'P', 'O', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kModelVersion = 1;

double checked_norm(const Eigen::Ref<const Eigen::RowVectorXd>& w) {
  const double n = w.norm();
  if (n <= kEpsilonV) throw NumericError("householder raw vector has near-zero norm");
  return n;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError(std::string("model checkpoint truncated reading ") + what);
  return v;
}

void write_block(std::ostream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Matrix read_block(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw DataError("model checkpoint truncated reading parameter block");
  return m;
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "linear" || name == "none") return Activation::linear;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "' (expected linear|tanh|sigmoid)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

AlignmentModel init_model(int dim, Eigen::Index chain_length, Activation activation, Rng& rng) {
  if (dim <= 0) throw ConfigError("model dimension must be positive");
  if (chain_length == 0) chain_length = dim;
  if (chain_length < 0) throw ConfigError("chain length must be positive");

  AlignmentModel model;
  model.src_adapter.weight = Matrix::Zero(dim, dim);
  model.src_adapter.activation = activation;
  model.tgt_adapter = model.src_adapter;

  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  auto sample_chain = [&] {
    HouseholderChain c;
    c.raw.resize(chain_length, dim);
    for (Eigen::Index i = 0; i < chain_length; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) c.raw(i, j) = sd * rng.normal();
    return c;
  };
  model.src_chain = sample_chain();
  model.tgt_chain = sample_chain();
  return model;
}

Vector apply_activation(Activation a, const Vector& x) {
  switch (a) {
    case Activation::linear: return x;
    case Activation::tanh: return x.array().tanh();
    case Activation::sigmoid: return (1.0 / (1.0 + (-x.array()).exp())).matrix();
  }
  return x;
}

Vector adapter_forward(const Adapter& adapter, const Vector& x, const Vector& x_bar,
                       AdapterTape* tape) {
  Vector offset = apply_activation(adapter.activation, adapter.weight * x_bar);
  Vector pre = x + offset;
  const double norm = pre.norm();
  if (norm <= kEpsilonV)
    throw NumericError("calibrated embedding collapsed to the zero vector");
  Vector out = pre / norm;
  if (tape != nullptr) {
    tape->act_out = std::move(offset);
    tape->x_tilde = out;
    tape->pre_norm = norm;
  }
  return out;
}

Vector adapter_calibrate(const Adapter& adapter, const Vector& x, const Vector& x_bar) {
  return adapter_forward(adapter, x, x_bar, nullptr);
}

void adapter_backward(const Adapter& adapter, const Vector& x_bar, const AdapterTape& tape,
                      const Vector& upstream, Matrix& grad_weight) {
  // Through the unit normalization: g_pre = (g - <g, out> out) / |pre|.
  Vector g_pre = (upstream - upstream.dot(tape.x_tilde) * tape.x_tilde) / tape.pre_norm;
  // Activation derivative from the stored output.
  Vector g_act;
  switch (adapter.activation) {
    case Activation::linear:
      g_act = g_pre;
      break;
    case Activation::tanh:
      g_act = (g_pre.array() * (1.0 - tape.act_out.array().square())).matrix();
      break;
    case Activation::sigmoid:
      g_act = (g_pre.array() * tape.act_out.array() * (1.0 - tape.act_out.array())).matrix();
      break;
  }
  grad_weight.noalias() += g_act * x_bar.transpose();
}

Vector householder_reflect(const Vector& v_raw, const Vector& z) {
  const double norm = v_raw.norm();
  if (norm <= kEpsilonV) throw NumericError("householder raw vector has near-zero norm");
  const Vector v = v_raw / norm;
  return z - 2.0 * z.dot(v) * v;
}

Vector chain_forward(const HouseholderChain& chain, const Vector& z, ChainTape* tape) {
  const Eigen::Index n = chain.length();
  if (chain.dim() != z.size() && n > 0)
    throw ConfigError("chain dimension does not match the input vector");
  Vector cur = z;
  if (tape != nullptr) {
    tape->zs.resize(n + 1, z.size());
    tape->zs.row(0) = cur.transpose();
  }
  for (Eigen::Index s = 1; s <= n; ++s) {
    const Eigen::Index q = n - s;  // H(v_n) first, H(v_1) last
    const double norm = checked_norm(chain.raw.row(q));
    const Eigen::RowVectorXd v = chain.raw.row(q) / norm;
    cur -= 2.0 * (v * cur)(0) * v.transpose();
    if (tape != nullptr) tape->zs.row(s) = cur.transpose();
  }
  return cur;
}

Vector chain_apply(const HouseholderChain& chain, const Vector& z) {
  return chain_forward(chain, z, nullptr);
}

Vector chain_backward(const HouseholderChain& chain, const ChainTape& tape,
                      const Vector& upstream, Matrix& grad_raw) {
  const Eigen::Index n = chain.length();
  Vector g = upstream;
  for (Eigen::Index s = n; s >= 1; --s) {
    const Eigen::Index q = n - s;
    const double norm = checked_norm(chain.raw.row(q));
    const Vector v = chain.raw.row(q).transpose() / norm;
    const Vector z_in = tape.zs.row(s - 1).transpose();
    // u = z - 2 <z,v> v  =>  dL/dv = -2(<v,g> z + <v,z> g), dL/dz = H(v) g.
    const double vg = v.dot(g);
    const double vz = v.dot(z_in);
    Vector g_v = -2.0 * (vg * z_in + vz * g);
    // v = w/|w|:  dL/dw = (g_v - <g_v, v> v) / |w|.
    grad_raw.row(q) += ((g_v - g_v.dot(v) * v) / norm).transpose();
    g -= 2.0 * vg * v;
  }
  return g;
}

Matrix chain_matrix(const HouseholderChain& chain) {
  const Eigen::Index d = chain.dim();
  const Eigen::Index n = chain.length();
  Matrix m = Matrix::Identity(d, d);
  for (Eigen::Index s = 1; s <= n; ++s) {
    const Eigen::Index q = n - s;
    const double norm = checked_norm(chain.raw.row(q));
    const Vector v = chain.raw.row(q).transpose() / norm;
    const Eigen::RowVectorXd vt_m = v.transpose() * m;
    m.noalias() -= 2.0 * v * vt_m;
  }
  return m;
}

Matrix forward_map(const AlignmentModel& model, Side side, const std::vector<Index>& indices,
                   const embio::EmbeddingTable& emb, const embio::ContextualTable& ctx) {
  if (ctx.vectors.rows() != emb.vectors.rows())
    throw ConfigError("contextual table is not aligned with the embedding table");
  const Adapter& adapter = model.adapter(side);
  const HouseholderChain& chain = model.chain(side);
  Matrix out(static_cast<Eigen::Index>(indices.size()), emb.dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Index i = indices[r];
    if (i < 0 || static_cast<std::size_t>(i) >= emb.size())
      throw ConfigError("forward_map index out of range: " + std::to_string(i));
    try {
      const Vector x_tilde =
          adapter_calibrate(adapter, emb.vectors.row(i).transpose(), ctx.vectors.row(i).transpose());
      out.row(r) = chain_apply(chain, x_tilde).transpose();
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (word '" + emb.words[i] + "')");
    }
  }
  return out;
}

Matrix map_table(const AlignmentModel& model, Side side, const embio::EmbeddingTable& emb,
                 const embio::ContextualTable& ctx, int threads) {
  if (ctx.vectors.rows() != emb.vectors.rows())
    throw ConfigError("contextual table is not aligned with the embedding table");
  const Adapter& adapter = model.adapter(side);
  const HouseholderChain& chain = model.chain(side);

  // Normalize the reflectors once; every row then costs O(n d).
  const Eigen::Index n = chain.length();
  Matrix units(n, chain.dim());
  for (Eigen::Index q = 0; q < n; ++q)
    units.row(q) = chain.raw.row(q) / checked_norm(chain.raw.row(q));

  Matrix out(emb.vectors.rows(), emb.dim);
  parallel_chunks(emb.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        Vector z = adapter_calibrate(adapter, emb.vectors.row(i).transpose(),
                                     ctx.vectors.row(i).transpose());
        for (Eigen::Index s = 1; s <= n; ++s) {
          const Eigen::Index q = n - s;
          z -= 2.0 * (units.row(q) * z)(0) * units.row(q).transpose();
        }
        out.row(i) = z.transpose();
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (word '" + emb.words[i] + "')");
      }
    }
  });
  return out;
}

void save_model(const AlignmentModel& model, const ModelMeta& meta, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model checkpoint: " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  write_pod(out, kModelVersion);
  write_pod(out, static_cast<std::uint32_t>(model.dim()));
  write_pod(out, static_cast<std::uint32_t>(model.src_chain.length()));
  write_pod(out, static_cast<std::uint32_t>(model.tgt_chain.length()));
  write_pod(out, static_cast<std::uint8_t>(model.src_adapter.activation));
  write_pod(out, static_cast<std::uint8_t>(model.tgt_adapter.activation));
  write_pod(out, meta.tau_src);
  write_pod(out, meta.tau_tgt);
  write_pod(out, static_cast<std::uint64_t>(meta.max_neighbors));
  write_block(out, model.src_adapter.weight);
  write_block(out, model.tgt_adapter.weight);
  write_block(out, model.src_chain.raw);
  write_block(out, model.tgt_chain.raw);
  if (!out) throw DataError("failed writing model checkpoint: " + path);
}

AlignmentModel load_model(const std::string& path, ModelMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw DataError("not a model checkpoint (bad magic): " + path);
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kModelVersion)
    throw DataError("unsupported model checkpoint version " + std::to_string(version));
  const auto dim = read_pod<std::uint32_t>(in, "dim");
  const auto n_src = read_pod<std::uint32_t>(in, "source chain length");
  const auto n_tgt = read_pod<std::uint32_t>(in, "target chain length");
  const auto act_src = read_pod<std::uint8_t>(in, "source activation");
  const auto act_tgt = read_pod<std::uint8_t>(in, "target activation");
  if (act_src > 2 || act_tgt > 2) throw DataError("model checkpoint has invalid activation");

  ModelMeta m;
  m.tau_src = read_pod<double>(in, "tau_src");
  m.tau_tgt = read_pod<double>(in, "tau_tgt");
  m.max_neighbors = static_cast<std::size_t>(read_pod<std::uint64_t>(in, "max_neighbors"));
  if (meta != nullptr) *meta = m;

  AlignmentModel model;
  model.src_adapter.activation = static_cast<Activation>(act_src);
  model.tgt_adapter.activation = static_cast<Activation>(act_tgt);
  model.src_adapter.weight = read_block(in, dim, dim);
  model.tgt_adapter.weight = read_block(in, dim, dim);
  model.src_chain.raw = read_block(in, n_src, dim);
  model.tgt_chain.raw = read_block(in, n_tgt, dim);
  return model;
}

}  // namespace rapo::mapping
