#include "gmrf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace gmrf {

namespace {

std::vector<std::size_t> dense_ids(std::span<const int> labels, std::size_t& distinct) {
  std::unordered_map<int, std::size_t> ids;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(ids.try_emplace(l, ids.size()).first->second);
  distinct = ids.size();
  return out;
}

double entropy_of(const std::vector<std::size_t>& counts, std::size_t total) {
  double h = 0;
  const double nt = static_cast<double>(total);
  for (std::size_t c : counts)
    if (c > 0) {
      const double p = static_cast<double>(c) / nt;
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace

ContingencyTable::ContingencyTable(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw LengthMismatch();
  if (a.empty()) throw EmptyInput("labelings are empty");
  std::size_t ra = 0, cb = 0;
  const auto ia = dense_ids(a, ra);
  const auto ib = dense_ids(b, cb);
  counts_.assign(ra * cb, 0);
  row_sums_.assign(ra, 0);
  col_sums_.assign(cb, 0);
  for (std::size_t k = 0; k < a.size(); ++k) {
    ++counts_[ia[k] * cb + ib[k]];
    ++row_sums_[ia[k]];
    ++col_sums_[ib[k]];
  }
  total_ = a.size();
}

double ContingencyTable::row_entropy() const { return entropy_of(row_sums_, total_); }
double ContingencyTable::col_entropy() const { return entropy_of(col_sums_, total_); }
double ContingencyTable::joint_entropy() const { return entropy_of(counts_, total_); }

double ContingencyTable::mutual_information() const {
  const double nt = static_cast<double>(total_);
  double mi = 0;
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t c = 0; c < cols(); ++c) {
      const std::size_t nrc = count(r, c);
      if (nrc == 0) continue;
      const double p = static_cast<double>(nrc) / nt;
      mi += p * std::log(static_cast<double>(nrc) * nt /
                         (static_cast<double>(row_sums_[r]) * static_cast<double>(col_sums_[c])));
    }
  return std::max(0.0, mi);
}

double nmi(std::span<const int> a, std::span<const int> b) {
  const ContingencyTable t(a, b);
  const bool single_a = t.rows() == 1, single_b = t.cols() == 1;
  if (single_a && single_b) return 1.0;
  if (single_a || single_b) return 0.0;
  const double denom = 0.5 * (t.row_entropy() + t.col_entropy());
  return std::clamp(t.mutual_information() / denom, 0.0, 1.0);
}

double vi(std::span<const int> a, std::span<const int> b) {
  const ContingencyTable t(a, b);
  return std::max(0.0, t.row_entropy() + t.col_entropy() - 2.0 * t.mutual_information());
}

double mean_relative_eigen_error(const VectorXd& estimate, const VectorXd& truth) {
  if (estimate.size() != truth.size() || truth.size() == 0) throw DimensionMismatch();
  return ((estimate - truth).cwiseAbs().array() / truth.array()).mean();
}

KktSignCheck kkt_sign_check(const SparseSpdd& q_lambda, const MatrixXd& s, double lambda) {
  if (s.rows() != q_lambda.dim() || s.cols() != q_lambda.dim()) throw DimensionMismatch();
  const MatrixXd w = spd_inverse(q_lambda);
  KktSignCheck out;
  std::size_t opposed = 0;
  const auto& pat = q_lambda.pattern();
  for (std::size_t p = 0; p < pat.size(); ++p) {
    const auto [i, j] = pat[p];
    const double q = q_lambda.values()(static_cast<Index>(p));
    if (i == j || q == 0.0) continue;
    const double sq = q > 0 ? 1.0 : -1.0;
    const double r = std::abs(w(i, j) - s(i, j) - lambda * sq);
    out.max_residual = std::max(out.max_residual, r);
    if (std::abs(s(i, j)) > lambda) {
      const int ss = s(i, j) > 0 ? 1 : (s(i, j) < 0 ? -1 : 0);
      out.entries.push_back({i, j, ss, static_cast<int>(sq), r});
      if (ss == -static_cast<int>(sq)) ++opposed;
    }
  }
  if (!out.entries.empty())
    out.fraction = static_cast<double>(opposed) / static_cast<double>(out.entries.size());
  return out;
}

std::vector<GershgorinRow> gershgorin_rows(const SparseSpdd& q_lambda, const MatrixXd& s, double lambda) {
  const Index n = q_lambda.dim();
  if (s.rows() != n || s.cols() != n) throw DimensionMismatch();
  const MatrixXd w = spd_inverse(q_lambda);
  const auto& pat = q_lambda.pattern();
  std::vector<GershgorinRow> rows(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& g = rows[static_cast<std::size_t>(i)];
    g.center = w(i, i);
    g.s_center = s(i, i);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      g.radius += std::abs(w(i, j));
      g.s_radius += std::abs(s(i, j));
      const bool in_support = pat.contains(i, j) && q_lambda(i, j) != 0.0;
      g.first_order_bound += in_support ? std::abs(s(i, j)) - lambda : std::abs(w(i, j));
    }
  }
  return rows;
}

BiasReport bias_report(const std::optional<SparseSpdd>& q_true, const MatrixXd& s,
                       const std::vector<std::pair<std::string, SparseSpdd>>& estimates, double lambda,
                       const std::optional<std::string>& glasso_name) {
  const Index n = s.rows();
  if (s.cols() != n) throw DimensionMismatch();
  BiasReport rep;
  rep.lambda = lambda;
  if (q_true) {
    if (q_true->dim() != n) throw DimensionMismatch("truth dimension differs from the data");
    rep.truth_eigenvalues = eigenvalues_sym(q_true->dense());
  }
  for (const auto& [name, q] : estimates) {
    if (q.dim() != n) throw DimensionMismatch("estimate '" + name + "' has the wrong dimension");
    EstimatorSpectrum spec{name, eigenvalues_sym(q.dense()), std::nullopt};
    if (rep.truth_eigenvalues) spec.mean_relative_error = mean_relative_eigen_error(spec.eigenvalues, *rep.truth_eigenvalues);
    rep.estimators.push_back(std::move(spec));
    if (glasso_name && name == *glasso_name) {
      rep.glasso_name = name;
      rep.gershgorin = gershgorin_rows(q, s, lambda);
      rep.kkt = kkt_sign_check(q, s, lambda);
    }
  }
  return rep;
}

}  // namespace gmrf
