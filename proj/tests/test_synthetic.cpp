#include <doctest.h>

#include <cmath>

#include "gmrf/synthetic.hpp"
#include "test_support.hpp"

using namespace gmrf;
using gmrf::testing::max_abs;

namespace {

/// Largest entrywise deviation of the sample covariance from `cov`, in
/// standard errors sqrt(Σii Σjj + Σij²) / sqrt(N).
double max_standard_errors(const MatrixXd& x, const VectorXd& mean, const MatrixXd& cov) {
  const MatrixXd c = x.rowwise() - mean.transpose();
  const MatrixXd emp = c.transpose() * c / static_cast<double>(x.rows());
  double worst = 0;
  for (Index i = 0; i < cov.rows(); ++i)
    for (Index j = 0; j < cov.cols(); ++j) {
      const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / static_cast<double>(x.rows()));
      worst = std::max(worst, std::abs(emp(i, j) - cov(i, j)) / se);
    }
  return worst;
}

/// Dense first-difference construction of the diffusion operator.
MatrixXd dense_diffusion(const DiffusionSpec& spec) {
  const Index n = spec.rows * spec.cols;
  const Index ex = spec.rows * (spec.cols - 1), ey = (spec.rows - 1) * spec.cols;
  Rng rng(spec.seed);
  VectorXd ax(ex), by(ey);
  if (spec.edge_rule == EdgeRule::Midpoint) {
    for (Index e = 0; e < ex; ++e) ax(e) = rng.uniform(spec.coeff_low, spec.coeff_high);
    for (Index e = 0; e < ey; ++e) by(e) = rng.uniform(spec.coeff_low, spec.coeff_high);
  } else {
    VectorXd a(n), b(n);
    for (Index i = 0; i < n; ++i) a(i) = rng.uniform(spec.coeff_low, spec.coeff_high);
    for (Index i = 0; i < n; ++i) b(i) = rng.uniform(spec.coeff_low, spec.coeff_high);
    Index e = 0;
    for (Index r = 0; r < spec.rows; ++r)
      for (Index c = 0; c + 1 < spec.cols; ++c, ++e) ax(e) = (a(r * spec.cols + c) + a(r * spec.cols + c + 1)) / 2;
    e = 0;
    for (Index r = 0; r + 1 < spec.rows; ++r)
      for (Index c = 0; c < spec.cols; ++c, ++e) by(e) = (b(r * spec.cols + c) + b((r + 1) * spec.cols + c)) / 2;
  }
  MatrixXd dx = MatrixXd::Zero(ex, n), dy = MatrixXd::Zero(ey, n);
  Index e = 0;
  for (Index r = 0; r < spec.rows; ++r)
    for (Index c = 0; c + 1 < spec.cols; ++c, ++e) {
      dx(e, r * spec.cols + c) = -1;
      dx(e, r * spec.cols + c + 1) = 1;
    }
  e = 0;
  for (Index r = 0; r + 1 < spec.rows; ++r)
    for (Index c = 0; c < spec.cols; ++c, ++e) {
      dy(e, r * spec.cols + c) = -1;
      dy(e, (r + 1) * spec.cols + c) = 1;
    }
  return dx.transpose() * ax.asDiagonal() * dx + dy.transpose() * by.asDiagonal() * dy +
         spec.anchor_value() * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("laplacian2d_precision") {
  CHECK(laplacian2d_precision(LatticeSpec{1, 1}).dense()(0, 0) == 4.0);

  const auto q = laplacian2d_precision(LatticeSpec{32, 32});
  CHECK(q.dim() == 1024);
  const MatrixXd d = q.dense();
  for (Index r = 0; r < 32; ++r)
    for (Index c = 0; c < 32; ++c) {
      const Index i = r * 32 + c;
      const bool interior = r > 0 && r < 31 && c > 0 && c < 31;
      CHECK(d(i, i) == 4.0);
      const Index off = static_cast<Index>(q.pattern().neighbors(i).size()) - 1;
      if (interior) {
        CHECK(off == 4);
        CHECK(d.row(i).sum() == 0.0);
      } else {
        CHECK(d.row(i).sum() > 0.0);
      }
    }
  CHECK_THROWS_AS(laplacian2d_precision(LatticeSpec{0, 3}), InvalidArgument);
}

TEST_CASE("diffusion operator") {
  SUBCASE("single edge without the anchor is singular") {
    DiffusionSpec spec{1, 2, 1.0, 1.0, 0, 0.0};
    const auto op = diffusion_operator(spec);
    const MatrixXd m = scatter(op.pattern, op.values);
    MatrixXd expected(2, 2);
    expected << 1, -1, -1, 1;
    CHECK(max_abs(m - expected) == 0.0);
    CHECK_FALSE(try_cholesky(m).has_value());
  }
  SUBCASE("unit coefficients reproduce the Laplacian stencil in the interior") {
    DiffusionSpec spec{5, 5, 1.0, 1.0, 0, std::nullopt};
    const MatrixXd m = diffusion_precision(spec).dense();
    const Index i = 2 * 5 + 2;
    CHECK(m(i, i) == doctest::Approx(4.0 + 1e-2));
    CHECK(m(i, i + 1) == -1.0);
    CHECK(m(i, i + 5) == -1.0);
  }
  SUBCASE("seeded 10x10 draw matches a dense construction") {
    for (std::uint64_t seed : {1u, 2u, 3u})
      for (EdgeRule rule : {EdgeRule::NodeMean, EdgeRule::Midpoint}) {
        DiffusionSpec spec;
        spec.seed = seed;
        spec.edge_rule = rule;
        const auto q = diffusion_precision(spec);
        CHECK(q.dim() == 100);
        CHECK(q.pattern() == laplacian2d_precision(LatticeSpec{10, 10}).pattern());
        CHECK(max_abs(q.dense() - dense_diffusion(spec)) < 1e-14);
        CHECK(try_cholesky(q.dense()).has_value());
      }
  }
  SUBCASE("invalid ranges") {
    DiffusionSpec spec;
    spec.coeff_low = 0;
    CHECK_THROWS_AS(diffusion_precision(spec), InvalidArgument);
    spec.coeff_low = 2;
    CHECK_THROWS_AS(diffusion_precision(spec), InvalidArgument);
  }
}

TEST_CASE("sample_gmrf examples") {
  SUBCASE("identity") {
    const MatrixXd x = sample_gmrf(SparseSpdd::identity(4), VectorXd::Zero(4), 100000, 7);
    CHECK(x.rows() == 100000);
    CHECK(max_abs(x.transpose() * x / 100000.0 - MatrixXd::Identity(4, 4)) < 0.05);
  }
  SUBCASE("scaled diagonal") {
    const MatrixXd x = sample_gmrf(SparseSpdd::diagonal(VectorXd::Constant(1, 4.0)), VectorXd::Zero(1), 100000, 8);
    CHECK(max_standard_errors(x, VectorXd::Zero(1), MatrixXd::Constant(1, 1, 0.25)) < 3);
  }
  SUBCASE("tridiagonal") {
    MatrixXd q(2, 2), cov(2, 2);
    q << 2, -1, -1, 2;
    cov << 2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3;
    const MatrixXd x = sample_gmrf(SparseSpdd::from_dense(q, SupportPattern::full(2)), VectorXd::Zero(2), 100000, 9);
    CHECK(max_standard_errors(x, VectorXd::Zero(2), cov) < 3);
  }
  SUBCASE("mean is added") {
    const VectorXd mu = (VectorXd(2) << 5, -3).finished();
    const MatrixXd x = sample_gmrf(SparseSpdd::identity(2), mu, 50000, 10);
    CHECK(max_abs(x.colwise().mean().transpose() - mu) < 0.05);
    CHECK_THROWS_AS(sample_gmrf(SparseSpdd::identity(2), VectorXd(VectorXd::Zero(3)), 5, 1), DimensionMismatch);
  }
}

TEST_CASE("sampled covariance matches the inverse precision for every generator") {
  std::vector<SparseSpdd> qs{laplacian2d_precision(LatticeSpec{3, 3}), laplacian2d_precision(LatticeSpec{2, 5}),
                             diffusion_precision(DiffusionSpec{3, 3, 0.1, 1.0, 4, std::nullopt}),
                             diffusion_precision(DiffusionSpec{2, 5, 0.1, 1.0, 5, std::nullopt})};
  std::uint64_t seed = 100;
  for (const auto& q : qs) {
    const MatrixXd x = sample_gmrf(q, VectorXd::Zero(q.dim()), 200000, seed++);
    CHECK(max_standard_errors(x, VectorXd::Zero(q.dim()), spd_inverse(q)) < 5);
  }
}

TEST_CASE("make_clustering_dataset") {
  SUBCASE("single component") {
    const auto ds = make_clustering_dataset(1, DiffusionSpec{3, 3, 0.1, 1.0, 0, std::nullopt}, 10, 20, 1);
    CHECK(ds.data.cols() == 9);
    CHECK(ds.data.rows() >= 10);
    CHECK(ds.data.rows() <= 20);
    for (int l : ds.labels) CHECK(l == 0);
  }
  SUBCASE("ten component shape") {
    const auto ds = make_clustering_dataset(10, DiffusionSpec{}, 1500, 3000, 2);
    CHECK(ds.data.cols() == 100);
    CHECK(ds.data.rows() >= 15000);
    CHECK(ds.data.rows() <= 30000);
    CHECK(ds.precisions.size() == 10);
    std::vector<Index> seen(10, 0);
    for (int l : ds.labels) seen[static_cast<std::size_t>(l)]++;
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(seen[k] == ds.counts[k]);
      CHECK(ds.counts[k] >= 1500);
      CHECK(ds.counts[k] <= 3000);
      CHECK(try_cholesky(ds.precisions[k].dense()).has_value());
    }
    // Shuffled: the first rows do not all come from one component.
    bool mixed = false;
    for (std::size_t i = 1; i < 50; ++i) mixed |= ds.labels[i] != ds.labels[0];
    CHECK(mixed);
  }
  SUBCASE("deterministic per seed") {
    const DiffusionSpec spec{4, 4, 0.1, 1.0, 0, std::nullopt};
    const auto a = make_clustering_dataset(3, spec, 50, 80, 11);
    const auto b = make_clustering_dataset(3, spec, 50, 80, 11);
    const auto c = make_clustering_dataset(3, spec, 50, 80, 12);
    CHECK(a.labels == b.labels);
    CHECK((a.data == b.data));
    const bool same = a.data.rows() == c.data.rows() && a.data == c.data;
    CHECK_FALSE(same);
  }
  SUBCASE("bad ranges") {
    CHECK_THROWS_AS(make_clustering_dataset(0, DiffusionSpec{}, 1, 2, 0), InvalidArgument);
    CHECK_THROWS_AS(make_clustering_dataset(2, DiffusionSpec{}, 5, 2, 0), InvalidArgument);
  }
}

TEST_CASE("Rng is reproducible and streams differ") {
  Rng a(42), b(42), c = Rng(42).substream(1);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
    differs |= x != c.next();
  }
  CHECK(differs);
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    const auto k = u.uniform_int(-2, 2);
    CHECK(k >= -2);
    CHECK(k <= 2);
  }
}
