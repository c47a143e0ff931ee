#include <doctest.h>

#include <cmath>
#include <map>

#include "gmrf/evaluation.hpp"
#include "gmrf/glasso.hpp"
#include "gmrf/synthetic.hpp"
#include "test_support.hpp"

using namespace gmrf;

namespace {

struct Brute {
  double ha, hb, mi;
  std::size_t ka, kb;  // distinct labels
};

/// Entropies straight from pair frequencies, no table object involved.
Brute brute_force(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1 / n;
    pb[b[i]] += 1 / n;
    pab[{a[i], b[i]}] += 1 / n;
  }
  Brute r{0, 0, 0, pa.size(), pb.size()};
  for (auto [k, p] : pa) r.ha -= p * std::log(p);
  for (auto [k, p] : pb) r.hb -= p * std::log(p);
  for (auto [k, p] : pab) r.mi += p * std::log(p / (pa[k.first] * pb[k.second]));
  return r;
}

std::vector<int> random_labels(std::size_t n, int k, Rng& rng) {
  std::vector<int> l(n);
  for (auto& x : l) x = static_cast<int>(rng.uniform_int(0, k - 1));
  return l;
}

}  // namespace

TEST_CASE("nmi and vi examples") {
  const std::vector<int> a{0, 0, 1, 1}, b{0, 1, 0, 1}, c{0, 0, 0, 1}, renamed{7, 7, 3, 3};
  CHECK(nmi(a, a) == doctest::Approx(1.0));
  CHECK(nmi(a, b) == doctest::Approx(0.0));
  CHECK(nmi(a, c) == doctest::Approx(0.343711018485).epsilon(1e-10));
  CHECK(vi(a, a) == 0.0);
  CHECK(vi(a, b) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
  CHECK(vi(a, renamed) == doctest::Approx(0.0));
  CHECK(nmi(a, renamed) == doctest::Approx(1.0));

  const std::vector<int> one{5, 5, 5, 5};
  CHECK(nmi(one, one) == 1.0);
  CHECK(nmi(one, a) == 0.0);
  CHECK(nmi(a, one) == 0.0);

  const std::vector<int> shorter{0, 1};
  CHECK_THROWS_AS(nmi(a, shorter), LengthMismatch);
  CHECK_THROWS_AS(vi(a, shorter), LengthMismatch);
  CHECK_THROWS_AS(nmi(std::vector<int>{}, std::vector<int>{}), EmptyInput);
}

TEST_CASE("nmi and vi match brute-force entropies") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const auto a = random_labels(n, static_cast<int>(rng.uniform_int(1, 4)), rng);
    const auto b = random_labels(n, static_cast<int>(rng.uniform_int(1, 4)), rng);
    const auto br = brute_force(a, b);
    CHECK(std::abs(vi(a, b) - std::max(0.0, br.ha + br.hb - 2 * br.mi)) < 1e-10);
    double expected;
    if (br.ka == 1 && br.kb == 1) expected = 1.0;
    else if (br.ka == 1 || br.kb == 1) expected = 0.0;
    else expected = br.mi / ((br.ha + br.hb) / 2);
    CHECK(std::abs(nmi(a, b) - expected) < 1e-10);
  }
}

TEST_CASE("metric symmetries") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 12));
    const auto a = random_labels(n, 3, rng), b = random_labels(n, 3, rng), c = random_labels(n, 3, rng);
    CHECK(nmi(a, b) == doctest::Approx(nmi(b, a)).epsilon(1e-12));
    CHECK(vi(a, b) == doctest::Approx(vi(b, a)).epsilon(1e-12));
    CHECK(vi(a, c) <= vi(a, b) + vi(b, c) + 1e-12);

    std::vector<int> relabeled(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) relabeled[i] = (a[i] * 5 + 2) % 7 + 10;
    CHECK(nmi(relabeled, b) == doctest::Approx(nmi(a, b)).epsilon(1e-12));
    CHECK(vi(relabeled, b) == doctest::Approx(vi(a, b)).epsilon(1e-12));

    CHECK(vi(a, a) == doctest::Approx(0.0));
    const auto br = brute_force(a, a);
    if (br.ka > 1) CHECK(nmi(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("ContingencyTable marginals") {
  const std::vector<int> a{3, 3, 1, 1, 1}, b{0, 2, 2, 2, 0};
  const ContingencyTable t(a, b);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 2);
  CHECK(t.total() == 5);
  CHECK(t.count(0, 0) == 1);
  CHECK(t.count(1, 1) == 2);
  CHECK(t.row_sums()[1] == 3);
  CHECK(t.col_sums()[0] == 2);
}

TEST_CASE("bias_report") {
  Rng rng(3);
  SUBCASE("truth against itself") {
    const auto q = gmrf::testing::random_sparse_spd(6, 0.3, rng);
    const auto rep = bias_report(q, spd_inverse(q), {{"truth", q}}, 0.1);
    REQUIRE(rep.estimators.size() == 1);
    CHECK(*rep.estimators[0].mean_relative_error == doctest::Approx(0.0));
    CHECK(rep.gershgorin.empty());
    CHECK_FALSE(rep.kkt.has_value());
  }
  SUBCASE("doubled diagonal") {
    const VectorXd d = (VectorXd(3) << 1, 2, 5).finished();
    const auto truth = SparseSpdd::diagonal(d);
    const auto est = SparseSpdd::diagonal(VectorXd(2 * d));
    const auto rep = bias_report(truth, MatrixXd::Identity(3, 3), {{"est", est}}, 0.0);
    CHECK(*rep.estimators[0].mean_relative_error == doctest::Approx(1.0));
  }
  SUBCASE("spectra are sorted and sum to the trace") {
    const auto q = gmrf::testing::random_sparse_spd(10, 0.3, rng);
    const auto q2 = gmrf::testing::random_sparse_spd(10, 0.5, rng);
    const auto rep = bias_report(std::nullopt, spd_inverse(q), {{"a", q}, {"b", q2}}, 0.1, std::string("b"));
    CHECK_FALSE(rep.estimators[0].mean_relative_error.has_value());
    const SparseSpdd* mats[] = {&q, &q2};
    for (std::size_t e = 0; e < 2; ++e) {
      const VectorXd& ev = rep.estimators[e].eigenvalues;
      CHECK(std::is_sorted(ev.data(), ev.data() + ev.size()));
      const double tr = mats[e]->dense().trace();
      CHECK(std::abs(ev.sum() - tr) <= 1e-6 * std::abs(tr));
    }
    CHECK(rep.gershgorin.size() == 10);
    CHECK(rep.kkt.has_value());
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(bias_report(SparseSpdd::identity(3), MatrixXd::Identity(2, 2), {}, 0.1), DimensionMismatch);
  }
}

TEST_CASE("Gershgorin discs of the inverse contain its spectrum") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = gmrf::testing::random_sparse_spd(8, 0.4, rng);
    const auto rows = gershgorin_rows(q, spd_inverse(q), 0.1);
    const VectorXd mu = eigenvalues_sym(spd_inverse(q));
    for (Index k = 0; k < mu.size(); ++k) {
      bool inside = false;
      for (const auto& g : rows) inside |= std::abs(mu(k) - g.center) <= g.radius + 1e-12;
      CHECK(inside);
    }
  }
}

TEST_CASE("kkt_sign_check") {
  SUBCASE("diagonal estimate is vacuous") {
    const auto r = kkt_sign_check(SparseSpdd::identity(3), MatrixXd::Identity(3, 3), 0.1);
    CHECK(r.entries.empty());
    CHECK(r.fraction == 1.0);
    CHECK(r.max_residual == 0.0);
  }
  SUBCASE("hand-built optimality") {
    // Pick Q, set W = Q⁻¹, then S = W - λ sign(Q) off the diagonal and S = W on it.
    MatrixXd qd(2, 2);
    qd << 2, -1, -1, 2;
    const auto q = SparseSpdd::from_dense(qd, SupportPattern::full(2));
    const double lambda = 0.1;
    MatrixXd s = qd.inverse();
    s(0, 1) += lambda;
    s(1, 0) += lambda;
    const auto r = kkt_sign_check(q, s, lambda);
    CHECK(r.max_residual < 1e-15);
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].sign_s == 1);
    CHECK(r.entries[0].sign_q == -1);
    CHECK(r.fraction == 1.0);
  }
  SUBCASE("converged GLASSO output satisfies the exact condition") {
    const auto truth = laplacian2d_precision(LatticeSpec{4, 4});
    Rng rng(11);
    const MatrixXd x = sample_gmrf(truth, VectorXd::Zero(16), 100, rng);
    const MatrixXd s = x.transpose() * x / 100.0;
    GlassoConfig cfg;
    cfg.lambda = 0.1;
    const auto g = glasso_solve(s, cfg);
    REQUIRE(g.converged);
    CHECK(kkt_sign_check(g.q, s, cfg.lambda).max_residual <= cfg.newton_tol);
  }
}
