#pragma once

// Graphical lasso by proximal Newton with a free-set restriction, and the
// two-step debiased estimator built on top of it.
//
//   minimize  -log det Q + tr(Q S) + λ Σ_{i≠j} |Q_ij|   (+ λ Σ_i |Q_ii| if penalized)
//
// Each Newton step minimizes the quadratic model of the smooth part plus the
// exact ℓ1 term over the free set by cyclic coordinate descent, then applies
// an Armijo search on the penalized objective with a Cholesky guard.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "gmrf/matrix_core.hpp"
#include "gmrf/precision_mle.hpp"

namespace gmrf {

struct GlassoConfig {
  double lambda = 0.0;
  bool penalize_diagonal = false;
  double newton_tol = 1e-5;  ///< KKT max-violation
  int max_newton_iters = 100;
  int lasso_inner_iters = 20;  ///< coordinate-descent sweeps per Newton step
  bool sign_refine = true;     ///< polish each direction by fixed-sign PCG solves
  int sign_refine_rounds = 5;
  double sub_tol = 1e-6;       ///< stop sweeping once no coordinate moves more than this
  double prune_eps = 1e-8;     ///< |q_ij| at or below this is dropped from the result pattern
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 40;

  void validate() const {
    if (!(lambda >= 0)) throw InvalidArgument("lambda must be non-negative");
    if (!(newton_tol > 0) || !(sub_tol > 0) || !(prune_eps >= 0))
      throw InvalidArgument("GLASSO tolerances must be positive");
    if (max_newton_iters < 1 || lasso_inner_iters < 1 || max_backtracks < 1)
      throw InvalidArgument("GLASSO iteration budgets must be at least 1");
    if (!(armijo_c > 0 && armijo_c < 1) || !(backtrack_factor > 0 && backtrack_factor < 1))
      throw InvalidArgument("line-search parameters must lie in (0, 1)");
  }
};

template <typename Scalar>
struct GlassoResult {
  SparseSpd<Scalar> q;
  std::vector<Scalar> objective_trace;
  Scalar kkt_residual = 0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

inline double soft_threshold(double x, double t) {
  return x > t ? x - t : (x < -t ? x + t : 0.0);
}

template <typename Scalar>
Scalar sign(Scalar x) {
  return x > Scalar(0) ? Scalar(1) : (x < Scalar(0) ? Scalar(-1) : Scalar(0));
}

/// λ Σ|v| over a pattern vector, off-diagonal pairs counted twice.
template <typename Scalar>
Scalar l1_penalty(const SupportPattern& pattern, const Vector<Scalar>& v, double lambda,
                  bool penalize_diagonal) {
  Scalar acc(0);
  for (std::size_t p = 0; p < pattern.size(); ++p) {
    const Scalar a = std::abs(v(static_cast<Index>(p)));
    if (pattern[p].diagonal()) {
      if (penalize_diagonal) acc += a;
    } else {
      acc += Scalar(2) * a;
    }
  }
  return Scalar(lambda) * acc;
}

}  // namespace detail

template <typename Scalar, typename Derived>
Scalar glasso_objective(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<Derived>& s,
                        const GlassoConfig& cfg) {
  return neg_log_likelihood(q, s) +
         detail::l1_penalty(q.pattern(), q.values(), cfg.lambda, cfg.penalize_diagonal);
}

/// Free set from a precomputed W = Q⁻¹: current nonzeros, entries whose
/// gradient exceeds λ in magnitude, and the whole diagonal.
template <typename Scalar, typename DerivedW, typename DerivedS>
SupportPattern free_set_with_inverse(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<DerivedW>& w,
                                     const Eigen::MatrixBase<DerivedS>& s, double lambda) {
  const Index n = q.dim();
  std::vector<std::pair<Index, Index>> pairs;
  const auto& pat = q.pattern();
  for (std::size_t p = 0; p < pat.size(); ++p)
    if (!pat[p].diagonal() && q.values()(static_cast<Index>(p)) != Scalar(0))
      pairs.emplace_back(pat[p].i, pat[p].j);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < j; ++i)
      if (std::abs(s(i, j) - w(i, j)) > Scalar(lambda)) pairs.emplace_back(i, j);
  return SupportPattern::from_pairs(n, pairs);
}

template <typename Scalar, typename Derived>
SupportPattern free_set(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<Derived>& s, double lambda) {
  check_dims(q, s);
  return free_set_with_inverse(q, spd_inverse(q), s, lambda);
}

/// Maximum violation of the optimality conditions, W = Q⁻¹ given.
template <typename Scalar, typename DerivedW, typename DerivedS>
Scalar kkt_residual(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<DerivedW>& w,
                    const Eigen::MatrixBase<DerivedS>& s, const GlassoConfig& cfg) {
  const Index n = q.dim();
  const Scalar lambda(cfg.lambda);
  Scalar worst(0);
  const Matrix<Scalar>& qd = q.dense();
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i <= j; ++i) {
      const Scalar r = w(i, j) - s(i, j);
      Scalar v;
      if (i == j && !cfg.penalize_diagonal)
        v = std::abs(r);
      else if (qd(i, j) != Scalar(0))
        v = std::abs(r - lambda * detail::sign(qd(i, j)));
      else
        v = std::max(Scalar(0), std::abs(r) - lambda);
      worst = std::max(worst, v);
    }
  }
  return worst;
}

template <typename Scalar, typename Derived>
Scalar kkt_residual(const SparseSpd<Scalar>& q, const Eigen::MatrixBase<Derived>& s,
                    const GlassoConfig& cfg) {
  check_dims(q, s);
  return kkt_residual(q, spd_inverse(q), s, cfg);
}

template <typename Scalar>
struct LassoDirection {
  Vector<Scalar> delta;              ///< on the free set
  std::vector<Scalar> model_trace;   ///< subproblem objective before the first sweep and after each
  int sweeps = 0;
};

/// Newton direction for the penalized problem on the free set `free`:
/// approximately minimizes tr(GΔ) + ½ tr(ΔWΔW) + λ‖Q + Δ‖₁ by cyclic
/// coordinate descent with exact soft-threshold updates. `w` is Q⁻¹.
/// The subproblem objective is only recorded when `track_model` is set.
template <typename Scalar, typename DerivedS>
LassoDirection<Scalar> lasso_newton_direction(const SparseSpd<Scalar>& q, const Matrix<Scalar>& w,
                                              const Eigen::MatrixBase<DerivedS>& s,
                                              const SupportPattern& free, const GlassoConfig& cfg,
                                              bool track_model = false) {
  const Index n = q.dim();
  if (free.dim() != n || w.rows() != n || s.rows() != n) throw DimensionMismatch();
  const Index m = static_cast<Index>(free.size());
  const double lambda = cfg.lambda;

  Vector<Scalar> qv(m), g(m);
  for (std::size_t p = 0; p < free.size(); ++p) {
    const auto [i, j] = free[p];
    qv(static_cast<Index>(p)) = q(i, j);
    g(static_cast<Index>(p)) = s(i, j) - w(i, j);
  }

  LassoDirection<Scalar> out;
  out.delta = Vector<Scalar>::Zero(m);
  // U = Δ W, kept current after every coordinate move.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> u =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(n, n);

  auto model_at = [&](const Vector<Scalar>& d) {
    const Vector<Scalar> hd = hessian_apply_pattern(w, free, d);
    return pattern_dot(free, g, d) + Scalar(0.5) * pattern_dot(free, d, hd) +
           detail::l1_penalty<Scalar>(free, qv + d, lambda, cfg.penalize_diagonal);
  };
  auto model = [&]() { return model_at(out.delta); };
  if (track_model) out.model_trace.push_back(model());

  for (int sweep = 0; sweep < cfg.lasso_inner_iters; ++sweep) {
    Scalar max_move(0);
    for (std::size_t p = 0; p < free.size(); ++p) {
      const auto [i, j] = free[p];
      const Index pi = static_cast<Index>(p);
      const Scalar wdw = w.col(i).dot(u.col(j));
      Scalar mu;
      if (i == j) {
        const Scalar a = w(i, i) * w(i, i);
        const Scalar b = g(pi) + wdw;
        if (cfg.penalize_diagonal) {
          const Scalar c = qv(pi) + out.delta(pi);
          mu = -c + Scalar(detail::soft_threshold(c - b / a, lambda / a));
        } else {
          mu = -b / a;
        }
        if (mu != Scalar(0)) u.row(i) += mu * w.col(i).transpose();
      } else {
        const Scalar a = w(i, j) * w(i, j) + w(i, i) * w(j, j);
        const Scalar b = g(pi) + wdw;
        const Scalar c = qv(pi) + out.delta(pi);
        mu = -c + Scalar(detail::soft_threshold(c - b / a, lambda / a));
        if (mu != Scalar(0)) {
          u.row(i) += mu * w.col(j).transpose();
          u.row(j) += mu * w.col(i).transpose();
        }
      }
      out.delta(pi) += mu;
      max_move = std::max(max_move, std::abs(mu));
    }
    out.sweeps = sweep + 1;
    if (track_model) out.model_trace.push_back(model());
    if (max_move <= Scalar(cfg.sub_tol)) break;
  }

  // Coordinate descent crawls when W is ill-conditioned, often in moves too
  // small to trip sub_tol. With the signs of Q + Δ frozen the model is a smooth
  // quadratic on the nonzeros; each round solves it by PCG and moves toward
  // that solution while the true model drops.
  Scalar current = model();
  for (int round = 0; cfg.sign_refine && round < cfg.sign_refine_rounds && m > 0; ++round) {
    std::vector<std::pair<Index, Index>> active_pairs;
    std::vector<Index> active_idx;
    Vector<Scalar> fixed = out.delta;
    for (std::size_t p = 0; p < free.size(); ++p) {
      const auto [i, j] = free[p];
      const Index pi = static_cast<Index>(p);
      if (i == j || qv(pi) + out.delta(pi) != Scalar(0)) {
        active_pairs.emplace_back(i, j);
        active_idx.push_back(pi);
        fixed(pi) = 0;
      } else {
        fixed(pi) = -qv(pi);
      }
    }
    const SupportPattern active = SupportPattern::from_pairs(n, active_pairs);
    const Index ma = static_cast<Index>(active.size());
    std::vector<Index> to_free(static_cast<std::size_t>(ma));
    for (Index pi : active_idx) {
      const auto [i, j] = free[static_cast<std::size_t>(pi)];
      to_free[*active.find(i, j)] = pi;
    }
    const Vector<Scalar> h_fixed = hessian_apply_pattern(w, free, fixed);
    Vector<Scalar> rhs(ma), sign(ma);
    for (Index a = 0; a < ma; ++a) {
      const Index pi = to_free[static_cast<std::size_t>(a)];
      const Scalar c = qv(pi) + out.delta(pi);
      const bool penalized = !active[static_cast<std::size_t>(a)].diagonal() || cfg.penalize_diagonal;
      sign(a) = penalized ? (c > 0 ? Scalar(1) : (c < 0 ? Scalar(-1) : Scalar(0))) : Scalar(0);
      rhs(a) = g(pi) + h_fixed(pi) + Scalar(lambda) * sign(a);
    }
    MleConfig pcg;
    pcg.pcg_tol = 1e-6;
    pcg.max_pcg_iters = 20;
    const Vector<Scalar> da = proj_pcg<Scalar>(w, rhs, active, pcg, &q).delta;
    Vector<Scalar> target = fixed;
    for (Index a = 0; a < ma; ++a) target(to_free[static_cast<std::size_t>(a)]) = da(a);
    // Projected backtracking from the current direction toward the solve:
    // entries of Q + Δ leaving their orthant stop at zero.
    Scalar best = current;
    Vector<Scalar> best_delta;
    for (Scalar t(1); t > Scalar(1e-3); t *= Scalar(0.5)) {
      Vector<Scalar> cand = out.delta + t * (target - out.delta);
      for (Index a = 0; a < ma; ++a) {
        const Index pi = to_free[static_cast<std::size_t>(a)];
        if (sign(a) != Scalar(0) && (qv(pi) + cand(pi)) * sign(a) < Scalar(0)) cand(pi) = -qv(pi);
      }
      const Scalar mc = model_at(cand);
      if (mc < best) {
        best = mc;
        best_delta = std::move(cand);
        break;
      }
    }
    if (best_delta.size() == 0) break;
    out.delta = std::move(best_delta);
    const bool stalled = current - best <= Scalar(1e-12) * std::max(Scalar(1), std::abs(current));
    current = best;
    if (track_model) out.model_trace.push_back(current);
    if (stalled) break;
  }
  return out;
}

/// Convenience overload computing W = Q⁻¹.
template <typename Scalar, typename DerivedS>
LassoDirection<Scalar> lasso_newton_direction(const SparseSpd<Scalar>& q,
                                              const Eigen::MatrixBase<DerivedS>& s,
                                              const SupportPattern& free, const GlassoConfig& cfg,
                                              bool track_model = false) {
  check_dims(q, s);
  return lasso_newton_direction(q, spd_inverse(q), s, free, cfg, track_model);
}

template <typename Derived>
GlassoResult<typename Derived::Scalar> glasso_solve(
    const Eigen::MatrixBase<Derived>& s, const GlassoConfig& cfg,
    const std::optional<SparseSpd<typename Derived::Scalar>>& q0 = std::nullopt) {
  using Scalar = typename Derived::Scalar;
  cfg.validate();
  if (s.rows() != s.cols()) throw DimensionMismatch();
  const Matrix<Scalar> sm = s;
  if (q0 && q0->dim() != sm.rows()) throw DimensionMismatch("warm start has the wrong dimension");

  auto penalized = [&](const SparseSpd<Scalar>& cand) { return glasso_objective(cand, sm, cfg); };

  SparseSpd<Scalar> q = q0 ? *q0 : default_diagonal_start(sm);
  Scalar f = penalized(q);
  GlassoResult<Scalar> res{q, {f}, 0, false, 0};
  Matrix<Scalar> w = spd_inverse(q);
  res.kkt_residual = kkt_residual(q, w, sm, cfg);

  for (int t = 0; t < cfg.max_newton_iters; ++t) {
    if (res.kkt_residual <= Scalar(cfg.newton_tol)) {
      res.converged = true;
      break;
    }
    const SupportPattern free = free_set_with_inverse(q, w, sm, cfg.lambda);
    const auto dir = lasso_newton_direction(q, w, sm, free, cfg);

    Vector<Scalar> qv(static_cast<Index>(free.size()));
    Vector<Scalar> g(static_cast<Index>(free.size()));
    for (std::size_t p = 0; p < free.size(); ++p) {
      qv(static_cast<Index>(p)) = q(free[p].i, free[p].j);
      g(static_cast<Index>(p)) = sm(free[p].i, free[p].j) - w(free[p].i, free[p].j);
    }
    const Scalar slope = pattern_dot(free, g, dir.delta) +
                         detail::l1_penalty<Scalar>(free, qv + dir.delta, cfg.lambda, cfg.penalize_diagonal) -
                         detail::l1_penalty<Scalar>(free, qv, cfg.lambda, cfg.penalize_diagonal);
    if (!(slope < Scalar(0))) break;  // the model offers no further decrease

    auto step = spd_backtracking<Scalar>(free, qv, dir.delta, f, slope, cfg.armijo_c,
                                         cfg.backtrack_factor, cfg.max_backtracks, penalized);
    if (!step) {
      const Scalar scale = std::abs(f) + std::abs(pattern_dot(free, qv, gather(sm, free)));
      if (-slope <= objective_resolution(sm.rows(), scale)) break;
      throw LineSearchFailed("GLASSO: no acceptable step at Newton iteration " + std::to_string(t));
    }
    // Exact zeros produced by the soft threshold leave the pattern; the matrix is unchanged.
    q = step->q.pruned(Scalar(0));
    f = step->objective;
    res.objective_trace.push_back(f);
    res.iterations = t + 1;
    w = spd_inverse(q);
    res.kkt_residual = kkt_residual(q, w, sm, cfg);
  }
  if (!res.converged) res.converged = res.kkt_residual <= Scalar(cfg.newton_tol);

  SparseSpd<Scalar> pruned = q.pruned(Scalar(cfg.prune_eps));
  if (!(pruned.pattern() == q.pattern())) {
    res.kkt_residual = kkt_residual(pruned, sm, cfg);
    q = std::move(pruned);
  }
  res.q = std::move(q);
  return res;
}

template <typename Scalar>
struct DebiasResult {
  GlassoResult<Scalar> glasso;
  MleResult<Scalar> mle;
};

/// GLASSO for the support, then the support-constrained MLE on that support,
/// warm-started from the GLASSO estimate. `glasso_start` warm-starts step one.
template <typename Derived>
DebiasResult<typename Derived::Scalar> debias_with_glasso(
    const Eigen::MatrixBase<Derived>& s, const GlassoConfig& cfg, const MleConfig& mle_cfg,
    const std::optional<SparseSpd<typename Derived::Scalar>>& glasso_start = std::nullopt) {
  auto g = glasso_solve(s, cfg, glasso_start);
  const SupportPattern support = g.q.support(typename Derived::Scalar(cfg.prune_eps));
  auto m = estimate_known_support(s, support, std::optional(g.q), mle_cfg);
  return {std::move(g), std::move(m)};
}

template <typename Derived>
MleResult<typename Derived::Scalar> debias(const Eigen::MatrixBase<Derived>& s, const GlassoConfig& cfg,
                                           const MleConfig& mle_cfg = {}) {
  return debias_with_glasso(s, cfg, mle_cfg).mle;
}

}  // namespace gmrf
