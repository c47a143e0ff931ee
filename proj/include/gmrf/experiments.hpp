#pragma once

// End-to-end pipelines shared by the command-line tool and the acceptance
// suite: the clustering benchmark on diffusion mixtures, the λ-sweep of
// held-out likelihood, and the eigenvalue-bias comparison.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmrf/evaluation.hpp"
#include "gmrf/mixture.hpp"
#include "gmrf/synthetic.hpp"

namespace gmrf {

/// The four estimator names accepted on the command line.
inline const std::vector<std::string>& estimator_names() {
  static const std::vector<std::string> names{"baseline", "glasso", "debiased", "known-support"};
  return names;
}

/// Builds an EM estimator from its name. `support` is required for
/// known-support: either one pattern shared by all components or one per component.
Estimator make_estimator(const std::string& name, double lambda, std::vector<SupportPattern> support = {});

/// Rows of `data` centered at `mean` (or not at all when absent), as (1/N) XᵀX.
MatrixXd empirical_covariance(const MatrixXd& data, const std::optional<VectorXd>& mean);

/// Average number of stored entries per row of the symmetric matrix, diagonal included.
double nnz_per_row(const SupportPattern& p);

struct ClusterBenchConfig {
  int k = 10;
  Index rows = 10;
  Index cols = 10;
  Index samples_low = 1500;
  Index samples_high = 3000;
  int datasets = 10;
  double lambda = 0.3;
  std::uint64_t seed = 0;
  double coeff_low = 0.1;
  double coeff_high = 1.0;
  EdgeRule edge_rule = EdgeRule::NodeMean;
  InitMethod init = InitMethod::RandomResponsibilities;
  int max_em_iters = 500;
  double ll_tol = 1e-6;
  std::vector<std::string> estimators = estimator_names();

  /// K = 5 on a 5×5 grid with 500–1000 samples per component.
  static ClusterBenchConfig small_profile();
  void validate() const;
};

struct ClusterRun {
  int dataset = 0;
  std::string estimator;
  double nmi = 0;
  double vi = 0;
  double final_log_likelihood = 0;
  int em_iterations = 0;
  bool converged = false;
  std::optional<std::string> error;  ///< set when the estimator threw; metrics are then unset
};

struct MeanStd {
  double mean = 0;
  double std = 0;  ///< sample standard deviation, 0 for a single run
  int count = 0;
};

struct ClusterBenchResult {
  std::vector<ClusterRun> runs;
  std::map<std::string, MeanStd> nmi;  ///< keyed by estimator, over successful runs
  std::map<std::string, MeanStd> vi;
};

/// Dataset d uses seed `cfg.seed + d` for generation and for EM initialization.
/// `progress` is called after every run.
ClusterBenchResult run_cluster_bench(const ClusterBenchConfig& cfg,
                                     const std::function<void(const ClusterRun&)>& progress = {});

MeanStd mean_std(const std::vector<double>& xs);

struct SweepRow {
  double lambda = 0;
  std::string estimator;  ///< glasso, debiased or baseline (λ-independent, repeated per λ)
  double nnz_per_row = 0;
  double heldout_nll = 0;
};

struct SweepConfig {
  std::vector<double> lambdas;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  bool zero_mean = false;  ///< otherwise the training mean is used
  GlassoConfig glasso;     ///< λ is overwritten per grid point
  MleConfig mle;
};

/// Shuffles the rows with `seed`, fits on the first ⌊fraction·N⌋ and scores
/// the mean negative log-likelihood of the rest.
std::vector<SweepRow> lambda_sweep(const MatrixXd& data, const SweepConfig& cfg);

std::string sweep_csv(const std::vector<SweepRow>& rows);

struct BiasFitConfig {
  double lambda = 0.25;
  std::vector<std::string> estimators{"known-support", "glasso", "debiased"};
  std::optional<SparseSpdd> truth;
  std::optional<SupportPattern> support;  ///< for known-support; defaults to the truth's pattern
  bool zero_mean = true;
  GlassoConfig glasso;
  MleConfig mle;
};

/// Fits each named single-Gaussian estimator to the empirical covariance of
/// `data` and compares their spectra; the GLASSO estimate gets diagnostics.
BiasReport run_bias_report(const MatrixXd& data, const BiasFitConfig& cfg);

}  // namespace gmrf
