#pragma once

// GMRF mixture model fitted by EM. The M-step precision estimator is
// pluggable: dense MLE, GLASSO, debiased GLASSO, or the MLE on a known,
// component-specific support.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "gmrf/glasso.hpp"
#include "gmrf/matrix_core.hpp"
#include "gmrf/precision_mle.hpp"
#include "gmrf/rng.hpp"

namespace gmrf {

template <typename Scalar>
struct GmrfComponent {
  Scalar weight;
  Vector<Scalar> mean;
  SparseSpd<Scalar> precision;
};

template <typename Scalar>
class MixtureModel {
public:
  explicit MixtureModel(std::vector<GmrfComponent<Scalar>> components) : components_(std::move(components)) {
    if (components_.empty()) throw InvalidArgument("a mixture needs at least one component");
    Scalar total(0);
    const Index n = components_.front().precision.dim();
    for (const auto& c : components_) {
      if (!(c.weight > Scalar(0))) throw InvalidArgument("component weights must be positive");
      if (c.precision.dim() != n || c.mean.size() != n) throw DimensionMismatch("component dimensions differ");
      total += c.weight;
    }
    if (std::abs(total - Scalar(1)) > Scalar(1e-12) * Scalar(components_.size()))
      throw InvalidArgument("component weights must sum to 1");
  }

  std::size_t size() const { return components_.size(); }
  Index dim() const { return components_.front().precision.dim(); }
  const GmrfComponent<Scalar>& operator[](std::size_t k) const { return components_[k]; }
  const std::vector<GmrfComponent<Scalar>>& components() const { return components_; }

private:
  std::vector<GmrfComponent<Scalar>> components_;
};

/// N×K soft assignments; each row sums to one.
template <typename Scalar>
using Responsibilities = Matrix<Scalar>;

struct BaselineEstimator {};
struct GlassoEstimator {
  GlassoConfig glasso;
};
struct DebiasedEstimator {
  GlassoConfig glasso;
  MleConfig mle;
};
struct KnownSupportEstimator {
  std::vector<SupportPattern> patterns;  ///< one per component, or a single shared one
  MleConfig mle;
};
using Estimator = std::variant<BaselineEstimator, GlassoEstimator, DebiasedEstimator, KnownSupportEstimator>;

enum class InitMethod { RandomResponsibilities, KMeansPlusPlus };

struct EmConfig {
  Estimator estimator = BaselineEstimator{};
  int k = 1;
  InitMethod init = InitMethod::RandomResponsibilities;
  double ll_tol = 1e-6;  ///< relative change of the total log-likelihood
  int max_em_iters = 500;
  double min_component_weight = 1e-6;  ///< as a fraction of N
  bool fix_means_to_zero = false;

  void validate() const {
    if (k < 1) throw InvalidArgument("K must be at least 1");
    if (!(ll_tol > 0) || !(min_component_weight >= 0)) throw InvalidArgument("EM tolerances must be positive");
    if (max_em_iters < 1) throw InvalidArgument("max_em_iters must be at least 1");
    if (const auto* ks = std::get_if<KnownSupportEstimator>(&estimator)) {
      if (ks->patterns.empty()) throw InvalidArgument("known-support estimator needs a pattern");
      if (ks->patterns.size() != 1 && ks->patterns.size() != static_cast<std::size_t>(k))
        throw InvalidArgument("known-support estimator needs one pattern or one per component");
    }
  }
};

inline std::string estimator_name(const Estimator& e) {
  return std::visit(
      [](const auto& est) -> std::string {
        using T = std::decay_t<decltype(est)>;
        if constexpr (std::is_same_v<T, BaselineEstimator>) return "baseline";
        else if constexpr (std::is_same_v<T, GlassoEstimator>) return "glasso";
        else if constexpr (std::is_same_v<T, DebiasedEstimator>) return "debiased";
        else return "known-support";
      },
      e);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
constexpr Scalar half_log_two_pi() {
  return Scalar(0.5) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

/// log N(x; μ, Q⁻¹) = ½ log det Q - (n/2) log 2π - ½ (x-μ)ᵀ Q (x-μ).
template <typename Scalar, typename Derived>
Scalar log_pdf(const GmrfComponent<Scalar>& c, const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != c.mean.size()) throw DimensionMismatch();
  const Vector<Scalar> d = x - c.mean;
  return Scalar(0.5) * c.precision.log_det() - Scalar(c.mean.size()) * half_log_two_pi<Scalar>() -
         Scalar(0.5) * c.precision.quad_form(d);
}

/// Per-row log N(x_i; μ, Q⁻¹) for all rows of `data`.
template <typename Scalar>
Vector<Scalar> log_pdf_rows(const GmrfComponent<Scalar>& c, const Matrix<Scalar>& data) {
  const Index n = c.mean.size();
  if (data.cols() != n) throw DimensionMismatch("data and model dimensions differ");
  Matrix<Scalar> d = data;
  if (!c.mean.isZero(0)) d.rowwise() -= c.mean.transpose();
  Vector<Scalar> quad;
  // Sparse products pay off only when the pattern is well below dense.
  if (c.precision.pattern().nnz() * 4 < static_cast<std::size_t>(n * n))
    quad = (d * c.precision.sparse()).cwiseProduct(d).rowwise().sum();
  else
    quad = (d * c.precision.dense()).cwiseProduct(d).rowwise().sum();
  const Scalar constant = Scalar(0.5) * c.precision.log_det() - Scalar(n) * half_log_two_pi<Scalar>();
  return (Scalar(-0.5) * quad).array() + constant;
}

template <typename Scalar>
struct EStepResult {
  Responsibilities<Scalar> w;
  Scalar total_log_likelihood;
  Vector<Scalar> point_log_likelihood;  ///< log Σ_k π_k N(x_i; ·)
};

template <typename Scalar>
EStepResult<Scalar> e_step(const MixtureModel<Scalar>& model, const Matrix<Scalar>& data) {
  const Index big_n = data.rows();
  const Index k_count = static_cast<Index>(model.size());
  Matrix<Scalar> logp(big_n, k_count);
  for (Index k = 0; k < k_count; ++k) {
    const auto& c = model[static_cast<std::size_t>(k)];
    logp.col(k) = log_pdf_rows(c, data).array() + std::log(c.weight);
  }
  EStepResult<Scalar> out{Matrix<Scalar>(big_n, k_count), Scalar(0), Vector<Scalar>(big_n)};
  for (Index i = 0; i < big_n; ++i) {
    const Scalar mx = logp.row(i).maxCoeff();
    const Scalar lse = mx + std::log((logp.row(i).array() - mx).exp().sum());
    out.w.row(i) = (logp.row(i).array() - lse).exp();
    out.w.row(i) /= out.w.row(i).sum();
    out.point_log_likelihood(i) = lse;
  }
  out.total_log_likelihood = out.point_log_likelihood.sum();
  return out;
}

template <typename Scalar>
struct WeightedStats {
  Vector<Scalar> mean;
  Matrix<Scalar> s;
  Scalar weight_sum;
};

/// Weighted mean and (1/Σw-normalized) covariance of component k. Throws
/// EmptyComponent when Σ_i w_ik < min_weight (absolute) or is not positive.
template <typename Scalar>
WeightedStats<Scalar> weighted_stats(const Matrix<Scalar>& data, const Responsibilities<Scalar>& w, Index k,
                                     bool fix_mean_zero, Scalar min_weight = Scalar(0)) {
  if (w.rows() != data.rows() || k < 0 || k >= w.cols()) throw DimensionMismatch();
  const auto wk = w.col(k);
  const Scalar sum = wk.sum();
  if (!(sum > Scalar(0)) || sum < min_weight)
    throw EmptyComponent("component " + std::to_string(k) + " has total weight " + std::to_string(double(sum)));
  WeightedStats<Scalar> st;
  st.weight_sum = sum;
  st.mean = fix_mean_zero ? Vector<Scalar>::Zero(data.cols()) : Vector<Scalar>((data.transpose() * wk) / sum);
  Matrix<Scalar> centered = data;
  if (!fix_mean_zero) centered.rowwise() -= st.mean.transpose();
  const Matrix<Scalar> scaled = centered.array().colwise() * wk.array().sqrt();
  st.s = Matrix<Scalar>::Zero(data.cols(), data.cols());
  st.s.template selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), Scalar(1) / sum);
  st.s = st.s.template selfadjointView<Eigen::Lower>();
  return st;
}

/// Solver state carried between M-steps: the previous GLASSO estimates, which
/// warm-start GLASSO for both the glasso and debiased estimators.
template <typename Scalar>
struct MStepState {
  std::vector<std::optional<SparseSpd<Scalar>>> glasso;
};

template <typename Scalar>
MixtureModel<Scalar> m_step(const Matrix<Scalar>& data, const Responsibilities<Scalar>& w, const EmConfig& cfg,
                            const std::optional<MixtureModel<Scalar>>& prev = std::nullopt,
                            MStepState<Scalar>* state = nullptr) {
  cfg.validate();
  const Index k_count = w.cols();
  if (k_count != cfg.k) throw DimensionMismatch("responsibilities have the wrong number of columns");
  const Scalar big_n(data.rows());
  if (state && state->glasso.size() != static_cast<std::size_t>(k_count)) state->glasso.resize(static_cast<std::size_t>(k_count));

  std::vector<GmrfComponent<Scalar>> comps;
  comps.reserve(static_cast<std::size_t>(k_count));
  for (Index k = 0; k < k_count; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    auto st = weighted_stats(data, w, k, cfg.fix_means_to_zero, Scalar(cfg.min_component_weight) * big_n);
    std::optional<SparseSpd<Scalar>> prev_q;
    if (prev && prev->size() == static_cast<std::size_t>(k_count)) prev_q = (*prev)[ku].precision;

    auto estimate = [&]() { return std::visit(
        [&](const auto& est) -> SparseSpd<Scalar> {
          using T = std::decay_t<decltype(est)>;
          if constexpr (std::is_same_v<T, BaselineEstimator>) {
            return dense_mle(st.s).q;
          } else if constexpr (std::is_same_v<T, GlassoEstimator>) {
            auto start = state && state->glasso[ku] ? state->glasso[ku] : prev_q;
            auto r = glasso_solve(st.s, est.glasso, start);
            if (state) state->glasso[ku] = r.q;
            return r.q;
          } else if constexpr (std::is_same_v<T, DebiasedEstimator>) {
            auto start = state ? state->glasso[ku] : std::nullopt;
            auto r = debias_with_glasso(st.s, est.glasso, est.mle, start);
            if (state) state->glasso[ku] = r.glasso.q;
            return r.mle.q;
          } else {
            const SupportPattern& pat = est.patterns.size() == 1 ? est.patterns.front() : est.patterns[ku];
            std::optional<SparseSpd<Scalar>> start;
            if (prev_q && prev_q->pattern().is_subset_of(pat)) start = prev_q;
            return estimate_known_support(st.s, pat, start, est.mle).q;
          }
        },
        cfg.estimator); };
    std::optional<SparseSpd<Scalar>> q;
    try {
      q = estimate();
    } catch (const EstimatorFailed&) {
      throw;
    } catch (const NumericalError& e) {
      throw EstimatorFailed(estimator_name(cfg.estimator) + " estimator failed on component " + std::to_string(k) +
                            ": " + e.what());
    }
    comps.push_back({st.weight_sum / big_n, std::move(st.mean), std::move(*q)});
  }
  // Re-normalize away the round-off in Σ_k Σ_i w_ik / N.
  Scalar total(0);
  for (const auto& c : comps) total += c.weight;
  for (auto& c : comps) c.weight /= total;
  return MixtureModel<Scalar>(std::move(comps));
}

/// Hard labels: argmax of each row, ties to the smallest index.
template <typename Scalar>
std::vector<int> argmax_rows(const Responsibilities<Scalar>& w) {
  std::vector<int> labels(static_cast<std::size_t>(w.rows()));
  for (Index i = 0; i < w.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < w.cols(); ++k)
      if (w(i, k) > w(i, best)) best = k;
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return labels;
}

template <typename Scalar>
std::vector<int> predict(const MixtureModel<Scalar>& model, const Matrix<Scalar>& data) {
  return argmax_rows(e_step(model, data).w);
}

/// Each row drawn from a symmetric Dirichlet(1).
template <typename Scalar>
Responsibilities<Scalar> random_responsibilities(Index rows, int k, Rng& rng) {
  Responsibilities<Scalar> w(rows, k);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < k; ++j) w(i, j) = Scalar(rng.exponential());
    w.row(i) /= w.row(i).sum();
  }
  return w;
}

/// Hard assignment to the nearest of K centers chosen by k-means++ seeding.
template <typename Scalar>
Responsibilities<Scalar> kmeans_pp_responsibilities(const Matrix<Scalar>& data, int k, Rng& rng) {
  const Index big_n = data.rows();
  std::vector<Index> centers{static_cast<Index>(rng.uniform_int(0, big_n - 1))};
  Vector<Scalar> d2 = (data.rowwise() - data.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const Scalar total = d2.sum();
    Index next = big_n - 1;
    if (total > Scalar(0)) {
      Scalar target = Scalar(rng.uniform()) * total;
      for (Index i = 0; i < big_n; ++i) {
        target -= d2(i);
        if (target < Scalar(0)) {
          next = i;
          break;
        }
      }
    } else {
      next = static_cast<Index>(rng.uniform_int(0, big_n - 1));
    }
    centers.push_back(next);
    d2 = d2.cwiseMin(Vector<Scalar>((data.rowwise() - data.row(next)).rowwise().squaredNorm()));
  }
  Responsibilities<Scalar> w = Responsibilities<Scalar>::Zero(big_n, k);
  for (Index i = 0; i < big_n; ++i) {
    Index best = 0;
    Scalar best_d = (data.row(i) - data.row(centers[0])).squaredNorm();
    for (std::size_t c = 1; c < centers.size(); ++c) {
      const Scalar dc = (data.row(i) - data.row(centers[c])).squaredNorm();
      if (dc < best_d) {
        best_d = dc;
        best = static_cast<Index>(c);
      }
    }
    w(i, best) = Scalar(1);
  }
  return w;
}

template <typename Scalar>
struct EmFit {
  MixtureModel<Scalar> model;
  std::vector<Scalar> ll_trace;  ///< total log-likelihood after each iteration
  Responsibilities<Scalar> responsibilities;
  bool converged = false;
  int reinitialized_components = 0;
};

/// EM from explicit initial responsibilities.
template <typename Scalar>
EmFit<Scalar> fit_em_from(const Matrix<Scalar>& data, const EmConfig& cfg, Responsibilities<Scalar> w) {
  cfg.validate();
  const Index big_n = data.rows();
  if (big_n < cfg.k) throw InvalidArgument("need at least K data points");
  if (w.rows() != big_n || w.cols() != cfg.k) throw DimensionMismatch("initial responsibilities have the wrong shape");
  const Scalar min_weight = Scalar(cfg.min_component_weight) * Scalar(big_n);
  for (Index k = 0; k < cfg.k; ++k)
    if (!(w.col(k).sum() > Scalar(0)) || w.col(k).sum() < min_weight)
      throw DegenerateInit("initialization leaves component " + std::to_string(k) + " empty");

  MStepState<Scalar> state;
  std::optional<MixtureModel<Scalar>> model;
  std::vector<Scalar> trace;
  Vector<Scalar> point_ll;
  bool converged = false;
  int reinit = 0;
  for (int it = 0; it < cfg.max_em_iters; ++it) {
    // Components that lost (almost) all their mass take over the worst-explained points.
    for (Index k = 0; k < cfg.k; ++k) {
      if (w.col(k).sum() >= min_weight && w.col(k).sum() > Scalar(0)) continue;
      const Index take = std::min(big_n, std::max<Index>(data.cols() + 1, big_n / (2 * cfg.k)));
      std::vector<Index> order(static_cast<std::size_t>(big_n));
      for (Index i = 0; i < big_n; ++i) order[static_cast<std::size_t>(i)] = i;
      std::partial_sort(order.begin(), order.begin() + take, order.end(),
                        [&](Index a, Index b) { return point_ll(a) < point_ll(b); });
      for (Index t = 0; t < take; ++t) {
        w.row(order[static_cast<std::size_t>(t)]).setZero();
        w(order[static_cast<std::size_t>(t)], k) = Scalar(1);
      }
      if (state.glasso.size() > static_cast<std::size_t>(k)) state.glasso[static_cast<std::size_t>(k)].reset();
      model.reset();
      ++reinit;
    }
    try {
      model = m_step(data, w, cfg, model, &state);
    } catch (const EstimatorFailed& e) {
      throw EstimatorFailed("EM iteration " + std::to_string(it) + ": " + e.what());
    }
    auto e = e_step(*model, data);
    w = std::move(e.w);
    point_ll = std::move(e.point_log_likelihood);
    const Scalar ll = e.total_log_likelihood;
    const bool small_change = !trace.empty() && std::abs(ll - trace.back()) <= Scalar(cfg.ll_tol) * std::abs(ll);
    trace.push_back(ll);
    if (small_change) {
      converged = true;
      break;
    }
  }
  return EmFit<Scalar>{std::move(*model), std::move(trace), std::move(w), converged, reinit};
}

template <typename Scalar>
EmFit<Scalar> fit_em(const Matrix<Scalar>& data, const EmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.rows() < cfg.k) throw InvalidArgument("need at least K data points");
  Rng rng(seed);
  Responsibilities<Scalar> w = cfg.init == InitMethod::KMeansPlusPlus
                                   ? kmeans_pp_responsibilities(data, cfg.k, rng)
                                   : random_responsibilities<Scalar>(data.rows(), cfg.k, rng);
  return fit_em_from(data, cfg, std::move(w));
}

/// Mean of -log p(x_i) over the rows of `data` under the mixture.
template <typename Scalar>
Scalar mean_negative_log_likelihood(const MixtureModel<Scalar>& model, const Matrix<Scalar>& data) {
  return -e_step(model, data).total_log_likelihood / Scalar(data.rows());
}

}  // namespace gmrf
