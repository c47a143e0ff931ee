#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "gmrf/precision_mle.hpp"
#include "gmrf/synthetic.hpp"
#include "test_support.hpp"

using namespace gmrf;
using gmrf::testing::max_abs;

namespace {

SparseSpdd full_spd(const MatrixXd& m) { return SparseSpdd::from_dense(m, SupportPattern::full(m.rows())); }

MatrixXd mat2(double a, double b, double c, double d) {
  MatrixXd m(2, 2);
  m << a, b, c, d;
  return m;
}

/// Nelder–Mead simplex search; test-only derivative-free oracle.
VectorXd nelder_mead(const std::function<double(const VectorXd&)>& f, VectorXd x0, double step, int iters) {
  const Index d = x0.size();
  std::vector<VectorXd> pts{x0};
  for (Index i = 0; i < d; ++i) {
    VectorXd p = x0;
    p(i) += step;
    pts.push_back(p);
  }
  std::vector<double> fv;
  for (const auto& p : pts) fv.push_back(f(p));
  for (int it = 0; it < iters; ++it) {
    std::vector<std::size_t> idx(pts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
    std::vector<VectorXd> sp;
    std::vector<double> sf;
    for (auto i : idx) {
      sp.push_back(pts[i]);
      sf.push_back(fv[i]);
    }
    pts = sp;
    fv = sf;
    VectorXd centroid = VectorXd::Zero(d);
    for (Index i = 0; i < d; ++i) centroid += pts[static_cast<std::size_t>(i)];
    centroid /= static_cast<double>(d);
    const VectorXd xr = centroid + (centroid - pts.back());
    const double fr = f(xr);
    if (fr < fv.front()) {
      const VectorXd xe = centroid + 2.0 * (centroid - pts.back());
      const double fe = f(xe);
      if (fe < fr) pts.back() = xe, fv.back() = fe;
      else pts.back() = xr, fv.back() = fr;
    } else if (fr < fv[fv.size() - 2]) {
      pts.back() = xr, fv.back() = fr;
    } else {
      const VectorXd xc = centroid + 0.5 * (pts.back() - centroid);
      const double fc = f(xc);
      if (fc < fv.back()) {
        pts.back() = xc, fv.back() = fc;
      } else {
        for (std::size_t i = 1; i < pts.size(); ++i) {
          pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
          fv[i] = f(pts[i]);
        }
      }
    }
  }
  return pts[static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin())];
}

}  // namespace

TEST_CASE("neg_log_likelihood") {
  CHECK(neg_log_likelihood(SparseSpdd::identity(5), MatrixXd::Identity(5, 5)) == doctest::Approx(5.0));
  const auto q1 = SparseSpdd::diagonal(VectorXd::Constant(1, 2.0));
  CHECK(neg_log_likelihood(q1, MatrixXd::Ones(1, 1)) == doctest::Approx(-std::log(2.0) + 2.0).epsilon(1e-14));
  CHECK(neg_log_likelihood(q1, MatrixXd::Ones(1, 1)) == doctest::Approx(1.306853).epsilon(1e-6));
  const auto q2 = full_spd(mat2(2, -1, -1, 2));
  CHECK(neg_log_likelihood(q2, MatrixXd::Identity(2, 2)) == doctest::Approx(-std::log(3.0) + 4.0).epsilon(1e-14));
  CHECK(neg_log_likelihood(q2, MatrixXd::Identity(2, 2)) == doctest::Approx(2.901388).epsilon(1e-6));
  CHECK_THROWS_AS(neg_log_likelihood(q2, MatrixXd::Identity(3, 3)), DimensionMismatch);

  SUBCASE("pattern trace equals the dense trace") {
    Rng rng(1);
    const auto q = gmrf::testing::random_sparse_spd(9, 0.3, rng);
    const MatrixXd s = gmrf::testing::random_spd(9, rng);
    const double dense = -std::log((q.dense()).determinant()) + (q.dense() * s).trace();
    CHECK(neg_log_likelihood(q, s) == doctest::Approx(dense).epsilon(1e-12));
  }
}

TEST_CASE("gradient") {
  CHECK(max_abs(gradient(SparseSpdd::identity(3), MatrixXd::Identity(3, 3))) == 0.0);
  const auto q1 = SparseSpdd::diagonal(VectorXd::Constant(1, 2.0));
  CHECK(gradient(q1, MatrixXd::Ones(1, 1))(0, 0) == doctest::Approx(0.5));
  const auto q2 = SparseSpdd::diagonal((VectorXd(2) << 1, 4).finished());
  CHECK(max_abs(gradient(q2, MatrixXd::Identity(2, 2)) - mat2(0, 0, 0, 0.75)) < 1e-15);
}

TEST_CASE("gradient matches central finite differences") {
  Rng rng(21);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.uniform_int(0, 7));
    const MatrixXd qd = gmrf::testing::random_spd(n, rng);
    const MatrixXd s = gmrf::testing::random_spd(n, rng);
    const MatrixXd g = gradient(full_spd(qd), s);
    double worst = 0;
    for (Index i = 0; i < n; ++i)
      for (Index j = i; j < n; ++j) {
        MatrixXd e = MatrixXd::Zero(n, n);
        e(i, j) = e(j, i) = 1.0;
        const double fd = (neg_log_likelihood(full_spd(qd + h * e), s) - neg_log_likelihood(full_spd(qd - h * e), s)) / (2 * h);
        // Moving an off-diagonal pair shifts both (i,j) and (j,i).
        worst = std::max(worst, std::abs(fd / (i == j ? 1.0 : 2.0) - g(i, j)));
      }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("dense_mle") {
  CHECK(max_abs(dense_mle(MatrixXd::Identity(3, 3)).q.dense() - MatrixXd::Identity(3, 3)) < 1e-15);
  CHECK(max_abs(dense_mle(mat2(2, 0, 0, 4)).q.dense() - mat2(0.5, 0, 0, 0.25)) < 1e-15);
  const auto r = dense_mle(mat2(2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3));
  CHECK(max_abs(r.q.dense() - mat2(2, -1, -1, 2)) < 1e-12);
  CHECK(r.ridge == 0.0);

  Rng rng(4);
  const MatrixXd s = gmrf::testing::random_spd(6, rng);
  CHECK(max_abs(gradient(dense_mle(s).q, s)) < 1e-8);

  SUBCASE("rank-deficient covariance") {
    const MatrixXd x = gmrf::testing::random_matrix(2, 4, rng);
    const MatrixXd sing = x.transpose() * x / 2.0;
    CHECK_THROWS_AS(dense_mle(sing, false), SingularCovariance);
    const auto reg = dense_mle(sing);
    CHECK(reg.ridge == doctest::Approx(1e-6 * sing.diagonal().mean()));
  }
}

TEST_CASE("hessian_apply") {
  Rng rng(6);
  const auto full3 = SupportPattern::full(3);
  const MatrixXd delta = gmrf::testing::random_symmetric(3, rng);
  CHECK(max_abs(hessian_apply(MatrixXd::Identity(3, 3), delta, full3) - delta) < 1e-15);
  CHECK(max_abs(hessian_apply(MatrixXd(2.0 * MatrixXd::Identity(3, 3)), delta, full3) - 4.0 * delta) < 1e-14);
  const MatrixXd w = mat2(2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3);
  const MatrixXd w2 = mat2(5.0 / 9, 4.0 / 9, 4.0 / 9, 5.0 / 9);
  CHECK(max_abs(hessian_apply(w, MatrixXd::Identity(2, 2), SupportPattern::full(2)) - w2) < 1e-15);

  SUBCASE("restricted to a sparse pattern") {
    const auto q = gmrf::testing::random_sparse_spd(8, 0.3, rng);
    const MatrixXd wq = spd_inverse(q);
    const MatrixXd d = project_to_pattern(gmrf::testing::random_symmetric(8, rng), q.pattern());
    CHECK(max_abs(hessian_apply(wq, d, q.pattern()) - project_to_pattern(MatrixXd(wq * d * wq), q.pattern())) < 1e-12);
  }
}

TEST_CASE("hessian_apply matches finite differences of the gradient") {
  Rng rng(31);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.uniform_int(0, 7));
    const MatrixXd qd = gmrf::testing::random_spd(n, rng);
    const MatrixXd s = gmrf::testing::random_spd(n, rng);
    const MatrixXd delta = gmrf::testing::random_symmetric(n, rng);
    const MatrixXd fd = (gradient(full_spd(qd + h * delta), s) - gradient(full_spd(qd - h * delta), s)) / (2 * h);
    const MatrixXd w = spd_inverse(full_spd(qd));
    CHECK(max_abs(hessian_apply(w, delta, SupportPattern::full(n)) - fd) < 1e-4);
  }
}

TEST_CASE("precond_weights") {
  const auto full2 = SupportPattern::full(2);
  const VectorXd m1 = precond_weights(MatrixXd::Identity(2, 2), full2);
  CHECK(max_abs(m1 - VectorXd::Ones(3)) == 0.0);
  // Pairs in order (0,0), (0,1), (1,1).
  const VectorXd m2 = precond_weights(mat2(2, 0, 0, 3), full2);
  CHECK(m2(0) == 4.0);
  CHECK(m2(1) == 6.0);
  CHECK(m2(2) == 9.0);
  CHECK(precond_weights(mat2(1, 0.5, 0.5, 1), full2)(1) == doctest::Approx(1.25));
}

TEST_CASE("proj_pcg") {
  MleConfig cfg;
  cfg.pcg_tol = 1e-12;
  Rng rng(12);
  const auto full = SupportPattern::full(4);
  const MatrixXd g = gmrf::testing::random_symmetric(4, rng);

  const auto r1 = proj_pcg(SparseSpdd::identity(4), g, full, cfg);
  CHECK(r1.converged);
  CHECK(max_abs(scatter(full, r1.delta) + g) < 1e-10);

  const auto r2 = proj_pcg(SparseSpdd::diagonal(VectorXd::Constant(4, 2.0)), g, full, cfg);
  CHECK(max_abs(scatter(full, r2.delta) + 4.0 * g) < 1e-10);

  const auto diag2 = SupportPattern::diagonal(2);
  const auto r3 = proj_pcg(SparseSpdd::diagonal((VectorXd(2) << 1, 4).finished()), mat2(0, 0, 0, 0.75), diag2, cfg);
  CHECK(max_abs(scatter(diag2, r3.delta) - mat2(0, 0, 0, -12)) < 1e-10);

  SUBCASE("solves the restricted Newton system on a sparse pattern") {
    const auto q = gmrf::testing::random_sparse_spd(10, 0.3, rng);
    const MatrixXd w = spd_inverse(q);
    const VectorXd gv = gather(gmrf::testing::random_symmetric(10, rng), q.pattern());
    const auto r = proj_pcg<double>(w, gv, q.pattern(), cfg);
    CHECK(r.converged);
    const VectorXd resid = hessian_apply_pattern<double>(w, q.pattern(), r.delta) + gv;
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-9);
    CHECK(pattern_dot(q.pattern(), gv, r.delta) < 0);
  }
  SUBCASE("a truncated solve is still a descent direction") {
    MleConfig loose;
    loose.max_pcg_iters = 1;
    const auto q = gmrf::testing::random_sparse_spd(10, 0.4, rng);
    const VectorXd gv = gather(gmrf::testing::random_symmetric(10, rng), q.pattern());
    const auto r = proj_pcg<double>(spd_inverse(q), gv, q.pattern(), loose);
    CHECK(r.iterations == 1);
    CHECK(pattern_dot(q.pattern(), gv, r.delta) < 0);
  }
}

TEST_CASE("armijo_spd_search") {
  MleConfig cfg;
  SUBCASE("1-d Newton step overshoots to a singular matrix") {
    const auto q = SparseSpdd::diagonal(VectorXd(VectorXd::Constant(1, 2.0)));
    const MatrixXd s = MatrixXd::Ones(1, 1);
    const auto step = armijo_spd_search(q, s, VectorXd(VectorXd::Constant(1, 0.5)), VectorXd(VectorXd::Constant(1, -2.0)), cfg);
    CHECK(step.alpha == 0.5);
    CHECK(step.q(0, 0) == doctest::Approx(1.0));
    CHECK(step.objective == doctest::Approx(1.0));
  }
  SUBCASE("q = I, s = 2I") {
    const Index n = 3;
    const auto q = SparseSpdd::identity(n);
    const MatrixXd s = 2.0 * MatrixXd::Identity(n, n);
    const auto step = armijo_spd_search(q, s, VectorXd(VectorXd::Ones(n)), VectorXd(VectorXd::Constant(n, -1.0)), cfg);
    CHECK(step.alpha == 0.5);
    CHECK(step.objective == doctest::Approx(n * (std::log(2.0) + 1.0)));
    // With c above 2(1 - log 2) the half step no longer qualifies.
    MleConfig strict = cfg;
    strict.armijo_c = 0.7;
    CHECK(armijo_spd_search(q, s, VectorXd(VectorXd::Ones(n)), VectorXd(VectorXd::Constant(n, -1.0)), strict).alpha == 0.25);
  }
  SUBCASE("an ascent direction is rejected") {
    const auto q = SparseSpdd::identity(2);
    CHECK_THROWS_AS(armijo_spd_search(q, MatrixXd::Identity(2, 2), VectorXd(VectorXd::Ones(2)), VectorXd(VectorXd::Ones(2)), cfg),
                    InvalidArgument);
  }
  SUBCASE("budget exhausted") {
    MleConfig tiny = cfg;
    tiny.max_backtracks = 1;
    tiny.backtrack_factor = 0.9;
    const auto q = SparseSpdd::diagonal(VectorXd(VectorXd::Constant(1, 2.0)));
    CHECK_THROWS_AS(armijo_spd_search(q, MatrixXd::Ones(1, 1), VectorXd(VectorXd::Constant(1, 0.5)),
                                      VectorXd(VectorXd::Constant(1, -100.0)), tiny),
                    LineSearchFailed);
  }
}

TEST_CASE("estimate_known_support examples") {
  SUBCASE("already stationary") {
    const auto r = estimate_known_support(MatrixXd::Identity(3, 3), SupportPattern::diagonal(3));
    CHECK(r.converged);
    CHECK(r.iterations == 0);
    CHECK(max_abs(r.q.dense() - MatrixXd::Identity(3, 3)) < 1e-15);
  }
  SUBCASE("tridiagonal truth from its exact covariance") {
    MatrixXd qt(3, 3);
    qt << 2, -1, 0, -1, 2, -1, 0, -1, 2;
    const auto tri = SupportPattern::from_nonzeros(qt);
    const auto r = estimate_known_support(MatrixXd(qt.inverse()), tri);
    CHECK(r.converged);
    CHECK(max_abs(r.q.dense() - qt) < 1e-6);
    CHECK(r.q.pattern() == tri);
  }
  SUBCASE("diagonal support decouples per coordinate") {
    Rng rng(10);
    const MatrixXd x = gmrf::testing::random_matrix(10, 3, rng);
    const MatrixXd s = x.transpose() * x / 10.0;
    const auto r = estimate_known_support(s, SupportPattern::diagonal(3));
    for (Index i = 0; i < 3; ++i) CHECK(r.q(i, i) == doctest::Approx(1.0 / s(i, i)).epsilon(1e-9));
  }
  SUBCASE("warm start outside the support is rejected") {
    MatrixXd qt(2, 2);
    qt << 2, -1, -1, 2;
    CHECK_THROWS_AS(estimate_known_support(MatrixXd::Identity(2, 2), SupportPattern::diagonal(2),
                                           std::optional(SparseSpdd::from_dense(qt, SupportPattern::full(2)))),
                    InvalidArgument);
  }
}

TEST_CASE("the exact covariance of a sparse precision recovers it") {
  // A gradient of size g leaves Q about λmax(Q)²·g from the optimum, so the
  // 1e-6 recovery bound needs a tighter stop than the default.
  MleConfig cfg;
  cfg.outer_tol = 1e-9;
  Rng rng(100);
  for (int trial = 0; trial < 25; ++trial) {
    const Index n = 4 + static_cast<Index>(rng.uniform_int(0, 8));
    const auto qt = gmrf::testing::random_sparse_spd(n, 0.3, rng);
    const MatrixXd s = spd_inverse(qt);
    const auto r = estimate_known_support(s, qt.pattern(), std::nullopt, cfg);
    CHECK(r.converged);
    CHECK(max_abs(r.q.dense() - qt.dense()) < 1e-6);
    // Monotone objective up to rounding, support preserved.
    for (std::size_t t = 1; t < r.objective_trace.size(); ++t)
      CHECK(r.objective_trace[t] <= r.objective_trace[t - 1] + 1e-12 * std::abs(r.objective_trace[t - 1]));
    CHECK(r.q.pattern().is_subset_of(qt.pattern()));
  }
}

TEST_CASE("known-support MLE agrees with a derivative-free search") {
  Rng rng(55);
  for (int trial = 0; trial < 12; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.uniform_int(0, 2));
    std::vector<std::pair<Index, Index>> pairs;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.5) pairs.emplace_back(i, j);
    const auto pat = SupportPattern::from_pairs(n, pairs);
    const MatrixXd x = gmrf::testing::random_matrix(3 * n, n, rng);
    const MatrixXd s = x.transpose() * x / static_cast<double>(3 * n) + 0.1 * MatrixXd::Identity(n, n);

    const auto r = estimate_known_support(s, pat);
    const double newton = neg_log_likelihood(r.q, s);

    auto f = [&](const VectorXd& v) {
      auto q = SparseSpdd::try_create(pat, v);
      return q ? neg_log_likelihood(*q, s) : std::numeric_limits<double>::infinity();
    };
    VectorXd x0 = gather(MatrixXd(s.diagonal().cwiseInverse().asDiagonal()), pat);
    VectorXd best = x0;
    for (int restart = 0; restart < 4; ++restart) best = nelder_mead(f, best, 0.2, 4000);
    CHECK(newton <= f(best) + 1e-4);
    CHECK(std::abs(newton - f(best)) < 1e-4);
  }
}

TEST_CASE("MleConfig validation") {
  MleConfig cfg;
  cfg.armijo_c = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.max_pcg_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.outer_tol = 0;
  CHECK_THROWS_AS(estimate_known_support(MatrixXd::Identity(2, 2), SupportPattern::diagonal(2), std::nullopt, cfg),
                  InvalidArgument);
}
