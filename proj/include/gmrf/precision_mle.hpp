#pragma once

// Support-constrained maximum-likelihood estimation of a precision matrix:
//
//   minimize  -log det Q + tr(Q S)   over SPD Q with Supp(Q) ⊆ Ω
//
// by projected Newton steps. Each Newton direction solves
// P_Ω(W Δ W) = -P_Ω(S - W), W = Q⁻¹, by preconditioned CG in pattern
// coordinates; the Hessian W ⊗ W is only ever applied, never formed.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "gmrf/matrix_core.hpp"

namespace gmrf {

struct MleConfig {
  double outer_tol = 1e-6;  ///< max-abs of the projected gradient
  int max_outer_iters = 200;
  double pcg_tol = 1e-2;  ///< relative residual of the Newton system
  int max_pcg_iters = 200;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 40;

  void validate() const {
    if (!(outer_tol > 0) || !(pcg_tol > 0)) throw InvalidArgument("MLE tolerances must be positive");
    if (max_outer_iters < 1 || max_pcg_iters < 1 || max_backtracks < 1)
      throw InvalidArgument("MLE iteration budgets must be at least 1");
    if (!(armijo_c > 0 && armijo_c < 1)) throw InvalidArgument("armijo_c must lie in (0, 1)");
    if (!(backtrack_factor > 0 && backtrack_factor < 1))
      throw InvalidArgument("backtrack_factor must lie in (0, 1)");
  }
};

/// Relative size of the diagonal shift used when a covariance fails Cholesky.
inline constexpr double kRidgeEpsilon = 1e-6;

template <typename Scalar>
struct MleResult {
  SparseSpd<Scalar> q;
  std::vector<Scalar> objective_trace;  ///< initial value, then one per Newton step; non-increasing up to rounding
  bool converged = false;
  int iterations = 0;
};

// ---------------------------------------------------------------------------
// Objective and derivatives.

template <typename Scalar, typename Derived>
void check_dims(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<Derived>& s) {
  if (s.rows() != q.dim() || s.cols() != q.dim())
    throw DimensionMismatch("precision and covariance dimensions differ");
}

/// -log det Q + tr(Q S), with the trace taken over the pattern of Q.
template <typename Scalar, typename Derived>
Scalar neg_log_likelihood(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<Derived>& s) {
  check_dims(q, s);
  return -q.log_det() + pattern_dot(q.pattern(), q.values(), gather(s, q.pattern()));
}

/// S - Q⁻¹ (dense).
template <typename Scalar, typename Derived>
Matrix<Scalar> gradient(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<Derived>& s) {
  check_dims(q, s);
  return s - spd_inverse(q);
}

/// Mean of the diagonal times kRidgeEpsilon, or kRidgeEpsilon when that is zero.
template <typename Derived>
typename Derived::Scalar ridge_amount(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  const Scalar mean_diag = s.diagonal().mean();
  return Scalar(kRidgeEpsilon) * (mean_diag > Scalar(0) ? mean_diag : Scalar(1));
}

template <typename Scalar>
struct DenseMle {
  SparseSpd<Scalar> q;
  Scalar ridge = 0;  ///< diagonal shift that was added to S (0 when none was needed)
};

/// Unconstrained MLE S⁻¹. When S fails Cholesky and `allow_ridge` is set, the
/// inverse of S + ridge·I is returned and the ridge is reported.
template <typename Derived>
DenseMle<typename Derived::Scalar> dense_mle(const Eigen::MatrixBase<Derived>& s,
                                             bool allow_ridge = true) {
  using Scalar = typename Derived::Scalar;
  const Index n = s.rows();
  if (s.cols() != n) throw DimensionMismatch();
  Scalar ridge(0);
  Eigen::LLT<Matrix<Scalar>> llt(s.derived());
  if (llt.info() != Eigen::Success) {
    if (!allow_ridge) throw SingularCovariance();
    ridge = ridge_amount(s);
    llt.compute(s.derived() + ridge * Matrix<Scalar>::Identity(n, n));
    if (llt.info() != Eigen::Success) throw SingularCovariance();
  }
  Matrix<Scalar> inv = llt.solve(Matrix<Scalar>::Identity(n, n));
  inv = (inv + inv.transpose()) * Scalar(0.5);
  auto q = SparseSpd<Scalar>::try_create(SupportPattern::full(n), gather(inv, SupportPattern::full(n)));
  if (!q) throw SingularCovariance("inverse covariance is not numerically positive-definite");
  return {std::move(*q), ridge};
}

/// Default starting point diag(1 / max(s_ii, floor)).
template <typename Derived>
SparseSpd<typename Derived::Scalar> default_diagonal_start(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  const Scalar floor = ridge_amount(s);
  Vector<Scalar> d(s.rows());
  for (Index i = 0; i < s.rows(); ++i) {
    const Scalar sii = std::max(s(i, i), floor);
    if (!(sii > Scalar(0)) || !std::isfinite(sii)) throw SingularCovariance("covariance diagonal is not positive");
    d(i) = Scalar(1) / sii;
  }
  return SparseSpd<Scalar>::diagonal(d);
}

/// P_Ω(W Δ W) in pattern coordinates; `delta` holds Δ on the pattern.
template <typename Scalar>
Vector<Scalar> hessian_apply_pattern(const Matrix<Scalar>& w, const SupportPattern& pattern,
                                     const Vector<Scalar>& delta) {
  const Index n = pattern.dim();
  if (w.rows() != n || w.cols() != n) throw DimensionMismatch();
  // A = Δ W costs |Ω|·n; each requested entry (W A)_ij = W_:i · A_:j costs n more.
  const Eigen::SparseMatrix<Scalar> d = to_sparse(pattern, delta);
  const Matrix<Scalar> a = d * w;
  Vector<Scalar> out(static_cast<Index>(pattern.size()));
  for (std::size_t p = 0; p < pattern.size(); ++p)
    out(static_cast<Index>(p)) = w.col(pattern[p].i).dot(a.col(pattern[p].j));
  return out;
}

/// P_Ω(W Δ W) for a dense Δ supported on Ω.
template <typename DerivedW, typename DerivedD>
Matrix<typename DerivedW::Scalar> hessian_apply(const Eigen::MatrixBase<DerivedW>& w,
                                                const Eigen::MatrixBase<DerivedD>& delta,
                                                const SupportPattern& pattern) {
  using Scalar = typename DerivedW::Scalar;
  if (delta.rows() != pattern.dim() || delta.cols() != pattern.dim()) throw DimensionMismatch();
  const Matrix<Scalar> wm = w;
  return scatter(pattern, hessian_apply_pattern<Scalar>(wm, pattern, gather(delta, pattern)));
}

/// Diagonal of the Hessian restricted to the pattern:
/// M_ij = W_ii W_jj + W_ij² off the diagonal, M_ii = W_ii².
template <typename Derived>
Vector<typename Derived::Scalar> precond_weights(const Eigen::MatrixBase<Derived>& w,
                                                 const SupportPattern& pattern) {
  using Scalar = typename Derived::Scalar;
  if (w.rows() != pattern.dim() || w.cols() != pattern.dim()) throw DimensionMismatch();
  Vector<Scalar> m(static_cast<Index>(pattern.size()));
  for (std::size_t p = 0; p < pattern.size(); ++p) {
    const auto [i, j] = pattern[p];
    m(static_cast<Index>(p)) = i == j ? w(i, i) * w(i, i) : w(i, i) * w(j, j) + w(i, j) * w(i, j);
  }
  return m;
}

template <typename Scalar>
struct PcgResult {
  Vector<Scalar> delta;  ///< pattern coordinates
  int iterations = 0;
  bool converged = false;
  Scalar relative_residual = 0;
};

/// Projected preconditioned CG for P_Ω(W Δ W) = -g. All inner products are
/// Frobenius products over Ω (off-diagonal pairs counted twice), the inner
/// product in which the restricted Hessian is self-adjoint.
///
/// The default preconditioner is the Hessian diagonal. Given `q` = W⁻¹ it is
/// R ↦ P_Ω(Q R Q) instead, the exact inverse on a full pattern, which stays
/// effective when W has a few outlying eigenvalues.
template <typename Scalar>
PcgResult<Scalar> proj_pcg(const Matrix<Scalar>& w, const Vector<Scalar>& g,
                           const SupportPattern& pattern, const MleConfig& cfg,
                           const SparseSpd<Scalar>* q = nullptr) {
  const Index m = static_cast<Index>(pattern.size());
  if (g.size() != m) throw DimensionMismatch();
  if (q && q->dim() != pattern.dim()) throw DimensionMismatch();
  const Vector<Scalar> mult = pair_multiplicity<Scalar>(pattern);
  const Vector<Scalar> diag = q ? Vector<Scalar>() : precond_weights(w, pattern);
  auto precond = [&](const Vector<Scalar>& v) -> Vector<Scalar> {
    if (!q) return v.cwiseQuotient(diag);
    const Matrix<Scalar> qr = q->sparse() * scatter(pattern, v);
    const Matrix<Scalar> qrq = qr * q->sparse();
    return gather(qrq, pattern);
  };
  auto dot = [&](const Vector<Scalar>& a, const Vector<Scalar>& b) {
    return (mult.array() * a.array() * b.array()).sum();
  };

  PcgResult<Scalar> res;
  res.delta = Vector<Scalar>::Zero(m);
  const Scalar g_norm = std::sqrt(dot(g, g));
  if (g_norm == Scalar(0)) {
    res.converged = true;
    return res;
  }
  Vector<Scalar> r = -g;
  Vector<Scalar> z = precond(r);
  Vector<Scalar> p = z;
  Scalar rz = dot(r, z);
  res.relative_residual = Scalar(1);
  for (int it = 0; it < cfg.max_pcg_iters; ++it) {
    const Vector<Scalar> hp = hessian_apply_pattern(w, pattern, p);
    const Scalar php = dot(p, hp);
    if (!(php > Scalar(0))) break;
    const Scalar alpha = rz / php;
    res.delta += alpha * p;
    r -= alpha * hp;
    res.iterations = it + 1;
    res.relative_residual = std::sqrt(dot(r, r)) / g_norm;
    if (res.relative_residual <= Scalar(cfg.pcg_tol)) {
      res.converged = true;
      break;
    }
    z = precond(r);
    const Scalar rz_next = dot(r, z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return res;
}

/// Convenience overload: dense gradient restricted to Ω, W computed from q.
template <typename Scalar, typename Derived>
PcgResult<Scalar> proj_pcg(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<Derived>& g,
                           const SupportPattern& pattern, const MleConfig& cfg) {
  return proj_pcg<Scalar>(spd_inverse(q), gather(g, pattern), pattern, cfg);
}

template <typename Scalar>
struct LineSearchStep {
  Scalar alpha;
  SparseSpd<Scalar> q;
  Scalar objective;
};

/// Backtracking over α ∈ {1, β, β², …}: accepts the first α for which Q + αΔ
/// passes Cholesky and objective(Q + αΔ) <= f0 + c·α·slope. Q and Δ are given
/// as values on the same pattern. Returns nullopt when the budget runs out.
template <typename Scalar, typename Objective>
std::optional<LineSearchStep<Scalar>> spd_backtracking(const SupportPattern& pattern,
                                                       const Vector<Scalar>& q_values,
                                                       const Vector<Scalar>& delta, Scalar f0,
                                                       Scalar slope, double armijo_c,
                                                       double backtrack_factor, int max_backtracks,
                                                       Objective&& objective) {
  Scalar alpha(1);
  for (int k = 0; k <= max_backtracks; ++k, alpha *= Scalar(backtrack_factor)) {
    auto cand = SparseSpd<Scalar>::try_create(pattern, q_values + alpha * delta);
    if (!cand) continue;
    const Scalar f = objective(*cand);
    if (std::isfinite(f) && f <= f0 + Scalar(armijo_c) * alpha * slope)
      return LineSearchStep<Scalar>{alpha, std::move(*cand), f};
  }
  return std::nullopt;
}

/// Smallest objective change distinguishable from rounding in -log det Q + tr(QS),
/// where `scale` bounds the magnitude of the individual terms.
template <typename Scalar>
Scalar objective_resolution(Index n, Scalar scale) {
  return Scalar(1000) * Scalar(n) * std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), scale);
}

/// Armijo search with SPD guard on the unpenalized objective. `q` must live on
/// `pattern`; `g` and `delta` are pattern vectors with tr(gΔ) < 0.
template <typename Scalar, typename Derived>
LineSearchStep<Scalar> armijo_spd_search(const SparseSpd<Scalar>& q,
                                         const Eigen::MatrixBase<Derived>& s,
                                         const Vector<Scalar>& g, const Vector<Scalar>& delta,
                                         const MleConfig& cfg) {
  const auto& pattern = q.pattern();
  if (g.size() != static_cast<Index>(pattern.size()) || delta.size() != g.size())
    throw DimensionMismatch();
  const Scalar slope = pattern_dot(pattern, g, delta);
  if (!(slope < Scalar(0))) throw InvalidArgument("line search direction is not a descent direction");
  const Vector<Scalar> s_on = gather(s, pattern);
  auto objective = [&](const SparseSpd<Scalar>& cand) {
    return -cand.log_det() + pattern_dot(pattern, cand.values(), s_on);
  };
  auto step = spd_backtracking<Scalar>(pattern, q.values(), delta, objective(q), slope, cfg.armijo_c,
                                       cfg.backtrack_factor, cfg.max_backtracks, objective);
  if (!step) throw LineSearchFailed();
  return std::move(*step);
}

/// Projected Newton for the support-constrained MLE. `q0` defaults to
/// diag(1 / max(s_ii, floor)) and must be supported on `pattern`.
template <typename Derived>
MleResult<typename Derived::Scalar> estimate_known_support(
    const Eigen::MatrixBase<Derived>& s, const SupportPattern& pattern,
    const std::optional<SparseSpd<typename Derived::Scalar>>& q0 = std::nullopt,
    const MleConfig& cfg = {}) {
  using Scalar = typename Derived::Scalar;
  cfg.validate();
  if (s.rows() != pattern.dim() || s.cols() != pattern.dim()) throw DimensionMismatch();
  const Matrix<Scalar> sm = s;
  const Vector<Scalar> s_on = gather(sm, pattern);
  auto objective = [&](const SparseSpd<Scalar>& cand) {
    return -cand.log_det() + pattern_dot(pattern, cand.values(), s_on);
  };

  SparseSpd<Scalar> q = (q0 ? *q0 : default_diagonal_start(sm)).embedded_in(pattern);
  Scalar f = objective(q);
  MleResult<Scalar> res{q, {f}, false, 0};

  for (int t = 0; t < cfg.max_outer_iters; ++t) {
    const Matrix<Scalar> w = spd_inverse(q);
    const Vector<Scalar> g = s_on - gather(w, pattern);
    if (g.cwiseAbs().maxCoeff() <= Scalar(cfg.outer_tol)) {
      res.converged = true;
      break;
    }
    // Forcing term min(pcg_tol, |g|) keeps the final steps quadratically convergent.
    MleConfig inner = cfg;
    inner.pcg_tol = std::min(cfg.pcg_tol, static_cast<double>(g.cwiseAbs().maxCoeff()));
    Vector<Scalar> delta = proj_pcg<Scalar>(w, g, pattern, inner, &q).delta;
    Scalar slope = pattern_dot(pattern, g, delta);
    if (!(slope < Scalar(0))) {
      delta = -g.cwiseQuotient(precond_weights(w, pattern));
      slope = pattern_dot(pattern, g, delta);
    }
    const Scalar resolution =
        objective_resolution(pattern.dim(), std::abs(f) + std::abs(pattern_dot(pattern, q.values(), s_on)));
    if (-slope <= resolution) {
      // The objective can no longer rank steps, but the gradient still can:
      // take the full Newton step while it stays SPD and shrinks the gradient.
      auto cand = SparseSpd<Scalar>::try_create(pattern, q.values() + delta);
      if (!cand) break;
      const Vector<Scalar> g_cand = s_on - gather(spd_inverse(*cand), pattern);
      if (!(g_cand.cwiseAbs().maxCoeff() < g.cwiseAbs().maxCoeff())) break;
      q = std::move(*cand);
      f = objective(q);
      res.objective_trace.push_back(f);
      res.iterations = t + 1;
      continue;
    }
    auto step = spd_backtracking<Scalar>(pattern, q.values(), delta, f, slope, cfg.armijo_c,
                                         cfg.backtrack_factor, cfg.max_backtracks, objective);
    if (!step) {
      // Retry along the scaled gradient before concluding the objective is at its resolution.
      delta = -g.cwiseQuotient(precond_weights(w, pattern));
      slope = pattern_dot(pattern, g, delta);
      step = spd_backtracking<Scalar>(pattern, q.values(), delta, f, slope, cfg.armijo_c,
                                      cfg.backtrack_factor, cfg.max_backtracks, objective);
    }
    if (!step) {
      if (-slope <= resolution) break;
      throw LineSearchFailed("known-support MLE: no acceptable step at outer iteration " +
                             std::to_string(t));
    }
    q = std::move(step->q);
    f = step->objective;
    res.objective_trace.push_back(f);
    res.iterations = t + 1;
  }
  if (!res.converged) {
    const Vector<Scalar> g = s_on - gather(spd_inverse(q), pattern);
    res.converged = g.cwiseAbs().maxCoeff() <= Scalar(cfg.outer_tol);
  }
  res.q = std::move(q);
  return res;
}

}  // namespace gmrf
