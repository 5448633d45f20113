#include "rapo/embio.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <numeric>

#include "rapo/error.hpp"
#include "rapo/parallel.hpp"

namespace rapo::embio {

namespace {

constexpr double kDegenerateNorm = 1e-12;
constexpr char kTableMagic[8] = {'R', 'A', 'P', 'O', 'T', 'B', 'L', '\0'};
constexpr std::uint32_t kTableVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError(std::string("table container truncated reading ") + what);
  return v;
}

void write_matrix(std::ostream& os, const Matrix& m, NumericWidth width) {
  if (width == NumericWidth::double_) {
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
  } else {
    std::vector<float> row(m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = static_cast<float>(m(i, j));
      os.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(sizeof(float) * row.size()));
    }
  }
}

Matrix read_matrix(std::istream& is, std::size_t rows, std::size_t cols, std::uint8_t width) {
  Matrix m(rows, cols);
  if (width == 8) {
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
  } else {
    std::vector<float> row(cols);
    for (std::size_t i = 0; i < rows; ++i) {
      is.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(sizeof(float) * cols));
      for (std::size_t j = 0; j < cols; ++j) m(i, j) = row[j];
    }
  }
  if (!is) throw DataError("table container truncated reading matrix data");
  return m;
}

struct ContainerHeader {
  std::uint8_t kind = 0;
  std::uint8_t width = 8;
  std::uint32_t dim = 0;
  std::uint64_t vocab = 0;
};

void write_header(std::ostream& os, const ContainerHeader& h) {
  os.write(kTableMagic, sizeof(kTableMagic));
  write_pod(os, kTableVersion);
  write_pod(os, h.kind);
  write_pod(os, h.width);
  write_pod(os, h.dim);
  write_pod(os, h.vocab);
}

ContainerHeader read_header(std::istream& is, std::uint8_t expected_kind) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kTableMagic, sizeof(magic)) != 0)
    throw DataError("not a table container (bad magic)");
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kTableVersion)
    throw DataError("unsupported table container version " + std::to_string(version));
  ContainerHeader h;
  h.kind = read_pod<std::uint8_t>(is, "kind");
  h.width = read_pod<std::uint8_t>(is, "width");
  h.dim = read_pod<std::uint32_t>(is, "dim");
  h.vocab = read_pod<std::uint64_t>(is, "vocab");
  if (h.kind != expected_kind)
    throw DataError("table container holds a different table kind");
  if (h.width != 4 && h.width != 8)
    throw DataError("table container has invalid numeric width");
  return h;
}

double parse_double(const char* begin, const char* end, const char** next) {
  double value = 0.0;
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc()) return std::numeric_limits<double>::quiet_NaN();
  *next = res.ptr;
  return value;
}

}  // namespace

Index EmbeddingTable::find(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? Index{-1} : it->second;
}

void EmbeddingTable::rebuild_index() {
  index_.clear();
  index_.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i)
    index_.emplace(words[i], static_cast<Index>(i));
}

EmbeddingTable load_vec_file(const std::string& path, std::size_t max_vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vec file: " + path);
  if (max_vocab == 0) throw ConfigError("max_vocab must be positive");

  std::string line;
  if (!std::getline(in, line)) throw DataError("vec file is empty: " + path);
  std::uint64_t count = 0;
  std::uint32_t dim = 0;
  {
    const char* p = line.data();
    const char* end = p + line.size();
    auto r1 = std::from_chars(p, end, count);
    if (r1.ec != std::errc() || r1.ptr == end || *r1.ptr != ' ')
      throw DataError("malformed vec header in " + path + ": '" + line + "'");
    auto r2 = std::from_chars(r1.ptr + 1, end, dim);
    if (r2.ec != std::errc() || dim == 0)
      throw DataError("malformed vec header in " + path + ": '" + line + "'");
  }

  const std::size_t cap = std::min<std::size_t>(count, max_vocab);
  EmbeddingTable table;
  table.dim = static_cast<int>(dim);
  table.words.reserve(cap);
  std::vector<double> data;
  data.reserve(cap * dim);
  std::unordered_map<std::string, Index> seen;
  seen.reserve(cap);

  std::size_t line_no = 1;
  std::vector<double> row(dim);
  while (table.words.size() < cap && std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    const char* sep = static_cast<const char*>(std::memchr(p, ' ', line.size()));
    if (sep == nullptr)
      throw DataError("vec row without values at line " + std::to_string(line_no));
    std::string word(p, sep);
    const char* cur = sep;
    std::size_t got = 0;
    while (cur < end) {
      while (cur < end && *cur == ' ') ++cur;
      if (cur == end) break;
      const char* next = cur;
      const double v = parse_double(cur, end, &next);
      if (next == cur || std::isnan(v))
        throw DataError("unparseable value at line " + std::to_string(line_no) + " in " + path);
      if (got < dim) row[got] = v;
      ++got;
      cur = next;
    }
    if (got != dim)
      throw DataError("vec row arity mismatch at line " + std::to_string(line_no) + ": expected " +
                      std::to_string(dim) + " values, got " + std::to_string(got));
    if (seen.find(word) != seen.end()) continue;  // keep first occurrence
    seen.emplace(word, static_cast<Index>(table.words.size()));
    table.words.push_back(std::move(word));
    data.insert(data.end(), row.begin(), row.end());
  }

  if (table.words.empty()) throw DataError("no rows retained from vec file: " + path);
  table.vectors = Eigen::Map<const Matrix>(data.data(),
                                           static_cast<Eigen::Index>(table.words.size()), dim);
  table.rebuild_index();
  return table;
}

void save_vec_file(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vec file: " + path);
  out << table.size() << ' ' << table.dim << '\n';
  char buf[32];
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.words[i];
    for (int j = 0; j < table.dim; ++j) {
      const int len = std::snprintf(buf, sizeof(buf), " %.17g", table.vectors(i, j));
      out.write(buf, len);
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing vec file: " + path);
}

EmbeddingTable length_normalize(const EmbeddingTable& table) {
  EmbeddingTable out = table;
  for (Eigen::Index i = 0; i < out.vectors.rows(); ++i) {
    const double norm = out.vectors.row(i).norm();
    if (norm <= kDegenerateNorm)
      throw NumericError("degenerate (zero-norm) vector for word '" + table.words[i] + "'");
    out.vectors.row(i) /= norm;
  }
  return out;
}

EmbeddingTable center_columns(const EmbeddingTable& table) {
  EmbeddingTable out = table;
  const Eigen::RowVectorXd mean = out.vectors.colwise().mean();
  out.vectors.rowwise() -= mean;
  return out;
}

EmbeddingTable normalize_pipeline(const EmbeddingTable& table) {
  return length_normalize(center_columns(length_normalize(table)));
}

ContextualTable build_contextual_table(const EmbeddingTable& table, double threshold,
                                       std::size_t max_neighbors, std::size_t block_size,
                                       int threads) {
  if (threshold <= 0.0) throw ConfigError("contextual threshold must be > 0");
  if (threshold >= 1.0) throw ConfigError("contextual threshold must be < 1 (self must qualify)");
  const std::size_t n = table.size();
  if (n == 0) throw DataError("cannot build contextual table over an empty vocabulary");
  for (Eigen::Index i = 0; i < table.vectors.rows(); ++i) {
    if (std::abs(table.vectors.row(i).norm() - 1.0) > 1e-4)
      throw ConfigError("contextual table requires unit-normalized rows (word '" +
                        table.words[i] + "')");
  }
  if (block_size == 0) block_size = 1;

  ContextualTable ctx;
  ctx.threshold = threshold;
  ctx.vectors.resize(n, table.dim);
  ctx.neighbor_counts.assign(n, 0);

  const std::size_t n_blocks = (n + block_size - 1) / block_size;
  parallel_chunks(n_blocks, threads, [&](std::size_t bfirst, std::size_t blast) {
    std::vector<std::pair<double, Index>> quals;
    for (std::size_t b = bfirst; b < blast; ++b) {
      const std::size_t row0 = b * block_size;
      const std::size_t rows = std::min(block_size, n - row0);
      const Matrix sims = table.vectors.middleRows(row0, rows) * table.vectors.transpose();
      for (std::size_t r = 0; r < rows; ++r) {
        const Index self = static_cast<Index>(row0 + r);
        quals.clear();
        for (std::size_t j = 0; j < n; ++j) {
          const Index jj = static_cast<Index>(j);
          if (jj == self || sims(r, j) > threshold)
            quals.emplace_back(sims(r, j), jj);
        }
        if (max_neighbors > 0 && quals.size() > max_neighbors) {
          std::sort(quals.begin(), quals.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
          });
          quals.resize(max_neighbors);
        }
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(table.dim);
        for (const auto& [sim, j] : quals) acc += table.vectors.row(j);
        ctx.vectors.row(self) = acc / static_cast<double>(quals.size());
        ctx.neighbor_counts[self] = static_cast<Index>(quals.size());
      }
    }
  });
  return ctx;
}

void save_table(const EmbeddingTable& table, const std::string& path, NumericWidth width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write table container: " + path);
  ContainerHeader h;
  h.kind = 0;
  h.width = width == NumericWidth::double_ ? 8 : 4;
  h.dim = static_cast<std::uint32_t>(table.dim);
  h.vocab = table.size();
  write_header(out, h);
  for (const auto& w : table.words) {
    write_pod(out, static_cast<std::uint32_t>(w.size()));
    out.write(w.data(), static_cast<std::streamsize>(w.size()));
  }
  write_matrix(out, table.vectors, width);
  if (!out) throw DataError("failed writing table container: " + path);
}

void save_table(const ContextualTable& table, const std::string& path, NumericWidth width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write table container: " + path);
  ContainerHeader h;
  h.kind = 1;
  h.width = width == NumericWidth::double_ ? 8 : 4;
  h.dim = static_cast<std::uint32_t>(table.vectors.cols());
  h.vocab = static_cast<std::uint64_t>(table.vectors.rows());
  write_header(out, h);
  write_pod(out, table.threshold);
  for (const Index c : table.neighbor_counts) write_pod(out, c);
  write_matrix(out, table.vectors, width);
  if (!out) throw DataError("failed writing table container: " + path);
}

EmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open table container: " + path);
  const ContainerHeader h = read_header(in, 0);
  EmbeddingTable table;
  table.dim = static_cast<int>(h.dim);
  table.words.reserve(h.vocab);
  for (std::uint64_t i = 0; i < h.vocab; ++i) {
    const auto len = read_pod<std::uint32_t>(in, "word length");
    std::string w(len, '\0');
    in.read(w.data(), len);
    if (!in) throw DataError("table container truncated reading words");
    table.words.push_back(std::move(w));
  }
  table.vectors = read_matrix(in, h.vocab, h.dim, h.width);
  table.rebuild_index();
  return table;
}

ContextualTable load_contextual_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open table container: " + path);
  const ContainerHeader h = read_header(in, 1);
  ContextualTable table;
  table.threshold = read_pod<double>(in, "threshold");
  table.neighbor_counts.resize(h.vocab);
  for (auto& c : table.neighbor_counts) c = read_pod<Index>(in, "neighbor count");
  table.vectors = read_matrix(in, h.vocab, h.dim, h.width);
  return table;
}

}  // namespace rapo::embio
