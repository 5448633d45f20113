#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "rapo/error.hpp"
#include "rapo/mapping.hpp"
#include "rapo/rng.hpp"

using namespace rapo;
using testutil::unit;

namespace {

mapping::HouseholderChain random_chain(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  mapping::HouseholderChain c;
  c.raw.resize(n, d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) c.raw(i, j) = sd * rng.normal();
  return c;
}

Vector random_vector(Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(d);
  for (Eigen::Index j = 0; j < d; ++j) v(j) = rng.normal();
  return v;
}

double orthogonality_defect(const Matrix& p) {
  return (p * p.transpose() - Matrix::Identity(p.rows(), p.cols())).norm();
}

}  // namespace

TEST_CASE("activation names parse and print") {
  CHECK(mapping::activation_from_string("linear") == mapping::Activation::linear);
  CHECK(mapping::activation_from_string("none") == mapping::Activation::linear);
  CHECK(mapping::activation_from_string("tanh") == mapping::Activation::tanh);
  CHECK(mapping::activation_from_string("sigmoid") == mapping::Activation::sigmoid);
  CHECK_THROWS_AS(mapping::activation_from_string("relu"), ConfigError);
  CHECK(mapping::to_string(mapping::Activation::sigmoid) == "sigmoid");
}

TEST_CASE("model initialization starts at zero adapters and full-length chains") {
  Rng rng(5);
  const auto model = mapping::init_model(6, 0, mapping::Activation::tanh, rng);
  CHECK(model.dim() == 6);
  CHECK(model.src_adapter.weight.isZero(0.0));
  CHECK(model.tgt_adapter.weight.isZero(0.0));
  CHECK(model.src_chain.length() == 6);
  CHECK(model.tgt_chain.length() == 6);
  CHECK(model.src_chain.raw.allFinite());
  CHECK((model.src_chain.raw.array() != model.tgt_chain.raw.array()).any());

  Rng rng2(5);
  const auto shallow = mapping::init_model(6, 2, mapping::Activation::linear, rng2);
  CHECK(shallow.src_chain.length() == 2);
  CHECK_THROWS_AS(mapping::init_model(0, 0, mapping::Activation::tanh, rng), ConfigError);
}

TEST_CASE("adapter calibration hand examples") {
  mapping::Adapter adapter;
  adapter.weight = Matrix::Zero(2, 2);
  const Vector x = unit(2, 0);
  const Vector x_bar = random_vector(2, 3);

  SUBCASE("zero weight with tanh is the identity on unit inputs") {
    adapter.activation = mapping::Activation::tanh;
    const Vector out = mapping::adapter_calibrate(adapter, x, x_bar);
    CHECK((out - x).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("zero weight with sigmoid produces the constant-offset result") {
    adapter.activation = mapping::Activation::sigmoid;
    const Vector out = mapping::adapter_calibrate(adapter, x, x_bar);
    // offset (0.5, 0.5), pre (1.5, 0.5), norm sqrt(2.5)
    CHECK(out(0) == doctest::Approx(0.94868329805051377).epsilon(1e-14));
    CHECK(out(1) == doctest::Approx(0.31622776601683794).epsilon(1e-14));
    CHECK(std::abs(out.norm() - 1.0) <= 1e-15);
  }

  SUBCASE("identity weight with linear doubles then renormalizes") {
    adapter.weight = Matrix::Identity(2, 2);
    adapter.activation = mapping::Activation::linear;
    const Vector out = mapping::adapter_calibrate(adapter, x, x);
    CHECK((out - x).cwiseAbs().maxCoeff() <= 1e-15);
  }

  SUBCASE("degenerate calibrated vector is an error") {
    adapter.activation = mapping::Activation::linear;
    CHECK_THROWS_AS(mapping::adapter_calibrate(adapter, Vector::Zero(2), x_bar), NumericError);
  }
}

TEST_CASE("householder reflection hand examples") {
  const Vector v = unit(3, 0);
  Vector z(3);
  z << 1, 2, 3;
  const Vector r = mapping::householder_reflect(v, z);
  CHECK(r(0) == -1.0);
  CHECK(r(1) == 2.0);
  CHECK(r(2) == 3.0);

  // Orthogonal input is fixed.
  Vector perp(3);
  perp << 0, 2, 3;
  CHECK((mapping::householder_reflect(v, perp) - perp).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(mapping::householder_reflect(Vector::Zero(3), z), NumericError);
}

TEST_CASE("reflection is an involution and preserves norms") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Vector v = random_vector(8, seed);
    const Vector z = random_vector(8, seed + 100);
    const Vector twice = mapping::householder_reflect(v, mapping::householder_reflect(v, z));
    CHECK((twice - z).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(mapping::householder_reflect(v, z).norm() - z.norm()) <= 1e-12);
  }
}

TEST_CASE("chain application order puts the last reflector on the input first") {
  mapping::HouseholderChain chain;
  chain.raw.resize(2, 4);
  chain.raw.row(0) = random_vector(4, 1).transpose();
  chain.raw.row(1) = random_vector(4, 2).transpose();
  const Vector z = random_vector(4, 3);
  const Vector expect = mapping::householder_reflect(
      chain.raw.row(0).transpose(),
      mapping::householder_reflect(chain.raw.row(1).transpose(), z));
  CHECK((mapping::chain_apply(chain, z) - expect).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("chain edge cases") {
  mapping::HouseholderChain empty;
  const Vector z = random_vector(5, 4);
  CHECK((mapping::chain_apply(empty, z) - z).cwiseAbs().maxCoeff() == 0.0);

  const auto chain = testutil::involutive_chain(5, 9);
  CHECK((mapping::chain_apply(chain, z) - z).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("chain agrees with its dense matrix") {
  const Eigen::Index d = 16;
  for (Eigen::Index n : {Eigen::Index{1}, d / 2, d}) {
    const auto chain = random_chain(n, d, static_cast<std::uint64_t>(n) + 40);
    const Matrix p = mapping::chain_matrix(chain);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Vector z = random_vector(d, 500 + s);
      const Vector fast = mapping::chain_apply(chain, z);
      CHECK((fast - p * z).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(std::abs(fast.norm() - z.norm()) <= 1e-12);
    }
  }
}

TEST_CASE("chain matrices are orthogonal with determinant (-1)^n") {
  mapping::HouseholderChain single;
  single.raw = unit(4, 0).transpose();
  const Matrix m = mapping::chain_matrix(single);
  Matrix expect = Matrix::Identity(4, 4);
  expect(0, 0) = -1.0;
  CHECK((m - expect).cwiseAbs().maxCoeff() <= 1e-15);

  for (Eigen::Index n = 1; n <= 4; ++n) {
    const auto chain = random_chain(n, 6, static_cast<std::uint64_t>(n) + 77);
    const Matrix p = mapping::chain_matrix(chain);
    CHECK(orthogonality_defect(p) <= 1e-10);
    const double det = Eigen::MatrixXd(p).determinant();
    CHECK(std::abs(det - (n % 2 == 0 ? 1.0 : -1.0)) <= 1e-8);
  }
}

TEST_CASE("forward map composes adapter and chain") {
  const Eigen::Index d = 2;
  embio::EmbeddingTable emb = testutil::make_table(Matrix::Identity(2, 2), "w");
  const auto ctx = testutil::self_ctx(emb);

  mapping::AlignmentModel model;
  model.src_adapter.weight = Matrix::Zero(d, d);
  model.src_adapter.activation = mapping::Activation::sigmoid;
  model.tgt_adapter = model.src_adapter;
  mapping::HouseholderChain e1_chain;
  e1_chain.raw = unit(d, 0).transpose();
  model.src_chain = e1_chain;
  model.tgt_chain = e1_chain;

  // Sigmoid offset gives (0.9487, 0.3162); reflecting in e1 negates x.
  const Matrix out = mapping::forward_map(model, Side::source, {0}, emb, ctx);
  CHECK(out(0, 0) == doctest::Approx(-0.94868329805051377).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(0.31622776601683794).epsilon(1e-14));
}

TEST_CASE("identity-configured model maps every word to itself") {
  const auto emb = testutil::random_table(12, 6, 13);
  const auto ctx = testutil::self_ctx(emb);
  const auto model = testutil::identity_model(6);
  std::vector<Index> all(12);
  for (Index i = 0; i < 12; ++i) all[static_cast<std::size_t>(i)] = i;
  const Matrix out = mapping::forward_map(model, Side::source, all, emb, ctx);
  CHECK((out - emb.vectors).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("forward map outputs unit rows for arbitrary models") {
  Rng rng(31);
  const auto model = mapping::init_model(6, 0, mapping::Activation::sigmoid, rng);
  const auto emb = testutil::random_table(10, 6, 14);
  const auto ctx = testutil::self_ctx(emb);
  std::vector<Index> all(10);
  for (Index i = 0; i < 10; ++i) all[static_cast<std::size_t>(i)] = i;
  const Matrix out = mapping::forward_map(model, Side::source, all, emb, ctx);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    CHECK(std::abs(out.row(i).norm() - 1.0) <= 1e-12);
}

TEST_CASE("forward map errors carry the word and check bounds") {
  auto emb = testutil::random_table(3, 4, 15);
  emb.vectors.row(1).setZero();
  const auto ctx = testutil::self_ctx(emb);
  const auto model = testutil::identity_model(4);
  CHECK_THROWS_WITH_AS(mapping::forward_map(model, Side::source, {1}, emb, ctx),
                       doctest::Contains("w1"), NumericError);
  CHECK_THROWS_AS(mapping::forward_map(model, Side::source, {7}, emb, ctx), ConfigError);
}

TEST_CASE("map_table matches forward_map and is thread independent") {
  Rng rng(77);
  const auto model = mapping::init_model(5, 0, mapping::Activation::tanh, rng);
  const auto emb = testutil::random_table(23, 5, 16);
  const auto ctx = testutil::self_ctx(emb);
  std::vector<Index> all(23);
  for (Index i = 0; i < 23; ++i) all[static_cast<std::size_t>(i)] = i;
  const Matrix direct = mapping::forward_map(model, Side::source, all, emb, ctx);
  const Matrix serial = mapping::map_table(model, Side::source, emb, ctx, 1);
  const Matrix threaded = mapping::map_table(model, Side::source, emb, ctx, 4);
  CHECK((serial - direct).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((threaded - serial).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("map_table propagates worker errors") {
  auto emb = testutil::random_table(40, 4, 17);
  emb.vectors.row(33).setZero();
  const auto ctx = testutil::self_ctx(emb);
  const auto model = testutil::identity_model(4);
  CHECK_THROWS_WITH_AS(mapping::map_table(model, Side::source, emb, ctx, 4),
                       doctest::Contains("w33"), NumericError);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
  const std::string dir = testutil::scratch_dir("mapping_ckpt");
  Rng rng(101);
  auto model = mapping::init_model(5, 3, mapping::Activation::sigmoid, rng);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) model.src_adapter.weight(i, j) = rng.normal();
  model.tgt_adapter.activation = mapping::Activation::linear;
  const mapping::ModelMeta meta{0.85, 0.92, 7};

  const std::string path = dir + "/m.bin";
  mapping::save_model(model, meta, path);
  mapping::ModelMeta back_meta;
  const auto back = mapping::load_model(path, &back_meta);

  CHECK(back_meta.tau_src == meta.tau_src);
  CHECK(back_meta.tau_tgt == meta.tau_tgt);
  CHECK(back_meta.max_neighbors == meta.max_neighbors);
  CHECK(back.src_adapter.activation == model.src_adapter.activation);
  CHECK(back.tgt_adapter.activation == model.tgt_adapter.activation);
  CHECK((back.src_adapter.weight.array() == model.src_adapter.weight.array()).all());
  CHECK((back.tgt_adapter.weight.array() == model.tgt_adapter.weight.array()).all());
  CHECK((back.src_chain.raw.array() == model.src_chain.raw.array()).all());
  CHECK((back.tgt_chain.raw.array() == model.tgt_chain.raw.array()).all());

  CHECK_THROWS_AS(mapping::load_model(dir + "/absent.bin"), DataError);
  CHECK_THROWS_AS(mapping::load_model(testutil::write_file(dir, "junk.bin", "XYZ")), DataError);
}
