#include "gmrf/experiments.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "gmrf/io.hpp"

namespace gmrf {

Estimator make_estimator(const std::string& name, double lambda, std::vector<SupportPattern> support) {
  GlassoConfig g;
  g.lambda = lambda;
  g.validate();
  if (name == "baseline") return BaselineEstimator{};
  if (name == "glasso") return GlassoEstimator{g};
  if (name == "debiased") return DebiasedEstimator{g, {}};
  if (name == "known-support") {
    if (support.empty()) throw InvalidArgument("known-support needs a support pattern");
    return KnownSupportEstimator{std::move(support), {}};
  }
  throw InvalidArgument("unknown estimator '" + name + "' (expected baseline, glasso, debiased or known-support)");
}

MatrixXd empirical_covariance(const MatrixXd& data, const std::optional<VectorXd>& mean) {
  if (data.rows() == 0) throw EmptyInput("no data rows");
  if (!mean) return data.transpose() * data / static_cast<double>(data.rows());
  if (mean->size() != data.cols()) throw DimensionMismatch();
  const MatrixXd c = data.rowwise() - mean->transpose();
  return c.transpose() * c / static_cast<double>(data.rows());
}

double nnz_per_row(const SupportPattern& p) {
  return static_cast<double>(p.nnz()) / static_cast<double>(p.dim());
}

ClusterBenchConfig ClusterBenchConfig::small_profile() {
  ClusterBenchConfig c;
  c.k = 5;
  c.rows = 5;
  c.cols = 5;
  c.samples_low = 500;
  c.samples_high = 1000;
  return c;
}

void ClusterBenchConfig::validate() const {
  if (k < 1 || rows < 1 || cols < 1 || datasets < 1) throw InvalidArgument("cluster bench sizes must be positive");
  if (samples_low < 1 || samples_low > samples_high) throw InvalidArgument("sample range must satisfy 1 <= low <= high");
  if (!(lambda >= 0)) throw InvalidArgument("lambda must be non-negative");
  for (const auto& e : estimators) make_estimator(e, lambda, {SupportPattern::diagonal(1)});
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  r.count = static_cast<int>(xs.size());
  if (xs.empty()) return r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

ClusterBenchResult run_cluster_bench(const ClusterBenchConfig& cfg,
                                     const std::function<void(const ClusterRun&)>& progress) {
  cfg.validate();
  DiffusionSpec spec;
  spec.rows = cfg.rows;
  spec.cols = cfg.cols;
  spec.coeff_low = cfg.coeff_low;
  spec.coeff_high = cfg.coeff_high;
  spec.edge_rule = cfg.edge_rule;
  // Every component shares the 5-point lattice pattern, so one pattern serves all.
  const SupportPattern lattice = laplacian2d_precision(LatticeSpec{cfg.rows, cfg.cols}).pattern();

  ClusterBenchResult out;
  std::map<std::string, std::vector<double>> nmis, vis;
  for (int d = 0; d < cfg.datasets; ++d) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(d);
    const auto ds = make_clustering_dataset(cfg.k, spec, cfg.samples_low, cfg.samples_high, seed);
    for (const auto& name : cfg.estimators) {
      EmConfig em;
      em.k = cfg.k;
      em.estimator = make_estimator(name, cfg.lambda, {lattice});
      em.init = cfg.init;
      em.max_em_iters = cfg.max_em_iters;
      em.ll_tol = cfg.ll_tol;
      em.fix_means_to_zero = true;
      ClusterRun run;
      run.dataset = d;
      run.estimator = name;
      try {
        const auto fit = fit_em(ds.data, em, seed);
        const auto labels = argmax_rows(fit.responsibilities);
        run.nmi = nmi(labels, ds.labels);
        run.vi = vi(labels, ds.labels);
        run.final_log_likelihood = fit.ll_trace.back();
        run.em_iterations = static_cast<int>(fit.ll_trace.size());
        run.converged = fit.converged;
        nmis[name].push_back(run.nmi);
        vis[name].push_back(run.vi);
      } catch (const NumericalError& e) {
        run.error = e.what();
      }
      if (progress) progress(run);
      out.runs.push_back(std::move(run));
    }
  }
  for (const auto& name : cfg.estimators) {
    out.nmi[name] = mean_std(nmis[name]);
    out.vi[name] = mean_std(vis[name]);
  }
  return out;
}

std::vector<SweepRow> lambda_sweep(const MatrixXd& data, const SweepConfig& cfg) {
  if (cfg.lambdas.empty()) throw InvalidArgument("lambda grid is empty");
  if (!(cfg.train_fraction > 0 && cfg.train_fraction < 1)) throw InvalidArgument("split fraction must lie in (0, 1)");
  const Index big_n = data.rows();
  const Index n_train = static_cast<Index>(std::floor(cfg.train_fraction * static_cast<double>(big_n)));
  if (n_train < 1 || n_train >= big_n) throw InvalidArgument("split leaves an empty train or test set");

  std::vector<Index> order(static_cast<std::size_t>(big_n));
  std::iota(order.begin(), order.end(), Index(0));
  Rng rng(cfg.seed);
  for (Index i = big_n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  MatrixXd train(n_train, data.cols()), test(big_n - n_train, data.cols());
  for (Index i = 0; i < big_n; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    if (i < n_train) train.row(i) = data.row(src);
    else test.row(i - n_train) = data.row(src);
  }
  const VectorXd mean = cfg.zero_mean ? VectorXd::Zero(data.cols()) : VectorXd(train.colwise().mean().transpose());
  const MatrixXd s = empirical_covariance(train, mean);

  auto heldout = [&](const SparseSpdd& q) {
    const MixtureModel<double> model({GmrfComponent<double>{1.0, mean, q}});
    return mean_negative_log_likelihood(model, test);
  };
  const SparseSpdd baseline = dense_mle(s).q;
  const double baseline_nll = heldout(baseline);

  std::vector<SweepRow> rows;
  for (double lambda : cfg.lambdas) {
    GlassoConfig g = cfg.glasso;
    g.lambda = lambda;
    const auto r = debias_with_glasso(s, g, cfg.mle);
    rows.push_back({lambda, "glasso", nnz_per_row(r.glasso.q.pattern()), heldout(r.glasso.q)});
    rows.push_back({lambda, "debiased", nnz_per_row(r.mle.q.pattern()), heldout(r.mle.q)});
    rows.push_back({lambda, "baseline", nnz_per_row(baseline.pattern()), baseline_nll});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "lambda,estimator,nnz_per_row,heldout_nll\n";
  for (const auto& r : rows)
    out += io::format_double(r.lambda) + "," + r.estimator + "," + io::format_double(r.nnz_per_row) + "," +
           io::format_double(r.heldout_nll) + "\n";
  return out;
}

BiasReport run_bias_report(const MatrixXd& data, const BiasFitConfig& cfg) {
  if (cfg.truth && cfg.truth->dim() != data.cols()) throw DimensionMismatch("truth and data disagree in dimension");
  const std::optional<VectorXd> mean =
      cfg.zero_mean ? std::nullopt : std::optional<VectorXd>(data.colwise().mean().transpose());
  const MatrixXd s = empirical_covariance(data, mean);
  GlassoConfig g = cfg.glasso;
  g.lambda = cfg.lambda;

  std::vector<std::pair<std::string, SparseSpdd>> estimates;
  std::optional<std::string> glasso_name;
  std::optional<DebiasResult<double>> debiased;
  for (const auto& name : cfg.estimators) {
    if (name == "baseline") {
      estimates.emplace_back(name, dense_mle(s).q);
    } else if (name == "glasso" || name == "debiased") {
      if (!debiased) debiased = debias_with_glasso(s, g, cfg.mle);
      if (name == "glasso") {
        estimates.emplace_back(name, debiased->glasso.q);
        glasso_name = name;
      } else {
        estimates.emplace_back(name, debiased->mle.q);
      }
    } else if (name == "known-support") {
      const std::optional<SupportPattern> pat =
          cfg.support ? cfg.support : (cfg.truth ? std::optional(cfg.truth->pattern()) : std::nullopt);
      if (!pat) throw InvalidArgument("known-support needs a support pattern or a truth to take it from");
      estimates.emplace_back(name, estimate_known_support(s, *pat, std::nullopt, cfg.mle).q);
    } else {
      throw InvalidArgument("unknown estimator '" + name + "'");
    }
  }
  return bias_report(cfg.truth, s, estimates, cfg.lambda, glasso_name);
}

}  // namespace gmrf
