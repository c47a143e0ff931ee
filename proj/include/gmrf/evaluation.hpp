#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmrf/matrix_core.hpp"

namespace gmrf {

// ---------------------------------------------------------------------------
// Partition comparison.

/// Co-occurrence counts of two labelings. Labels are arbitrary integers and
/// are mapped to dense row/column indices in order of first appearance.
class ContingencyTable {
public:
  ContingencyTable(std::span<const int> a, std::span<const int> b);

  std::size_t rows() const { return row_sums_.size(); }
  std::size_t cols() const { return col_sums_.size(); }
  std::size_t total() const { return total_; }
  std::size_t count(std::size_t r, std::size_t c) const { return counts_[r * cols() + c]; }
  const std::vector<std::size_t>& row_sums() const { return row_sums_; }
  const std::vector<std::size_t>& col_sums() const { return col_sums_; }

  /// Entropies and mutual information in nats.
  double row_entropy() const;
  double col_entropy() const;
  double joint_entropy() const;
  double mutual_information() const;

private:
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> row_sums_;
  std::vector<std::size_t> col_sums_;
  std::size_t total_ = 0;
};

/// I(A;B) / ((H(A) + H(B)) / 2). 1 when both labelings are a single cluster,
/// 0 when exactly one of them is.
double nmi(std::span<const int> a, std::span<const int> b);

/// H(A) + H(B) - 2 I(A;B), natural logarithms.
double vi(std::span<const int> a, std::span<const int> b);

// ---------------------------------------------------------------------------
// Bias diagnostics for precision estimates.

struct EstimatorSpectrum {
  std::string name;
  VectorXd eigenvalues;                      ///< ascending, of the precision estimate
  std::optional<double> mean_relative_error;  ///< vs the truth, rank-paired
};

/// Gershgorin data of Q_λ⁻¹ for one row, with the same quantities for S.
struct GershgorinRow {
  double center = 0;    ///< (Q_λ⁻¹)_ii
  double radius = 0;    ///< Σ_{j≠i} |(Q_λ⁻¹)_ij|
  double s_center = 0;  ///< S_ii
  double s_radius = 0;  ///< Σ_{j≠i} |S_ij|
  /// Σ_{j≠i, (i,j)∈Ω} (|S_ij| - λ) + Σ_{j∉Ω} |(Q_λ⁻¹)_ij|: the first-order bound on |S_ii - μ_i|.
  double first_order_bound = 0;
};

struct KktSignEntry {
  Index i = 0;
  Index j = 0;
  int sign_s = 0;
  int sign_q = 0;
  double residual = 0;  ///< |w_ij - s_ij - λ sign(q_ij)|
};

struct KktSignCheck {
  /// Share of entries (q_ij ≠ 0, i≠j, |s_ij| > λ) with sign(s_ij) = -sign(q_ij); 1 when none.
  double fraction = 1.0;
  /// Max of |w_ij - s_ij - λ sign(q_ij)| over all nonzero off-diagonal q_ij.
  double max_residual = 0.0;
  std::vector<KktSignEntry> entries;
};

struct BiasReport {
  double lambda = 0;
  std::optional<VectorXd> truth_eigenvalues;
  std::vector<EstimatorSpectrum> estimators;
  std::optional<std::string> glasso_name;
  std::vector<GershgorinRow> gershgorin;  ///< empty unless a GLASSO estimate was named
  std::optional<KktSignCheck> kkt;
};

double mean_relative_eigen_error(const VectorXd& estimate, const VectorXd& truth);

KktSignCheck kkt_sign_check(const SparseSpdd& q_lambda, const MatrixXd& s, double lambda);

std::vector<GershgorinRow> gershgorin_rows(const SparseSpdd& q_lambda, const MatrixXd& s, double lambda);

/// Eigenvalue spectra (and their errors when a truth is given) for every
/// estimate; Gershgorin and sign diagnostics for the estimate named
/// `glasso_name`, if any.
BiasReport bias_report(const std::optional<SparseSpdd>& q_true, const MatrixXd& s,
                       const std::vector<std::pair<std::string, SparseSpdd>>& estimates, double lambda,
                       const std::optional<std::string>& glasso_name = std::nullopt);

}  // namespace gmrf
