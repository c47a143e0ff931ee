#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include "gmrf/errors.hpp"

namespace gmrf {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Symmetric set of index pairs allowed to be nonzero. The diagonal is always
/// part of the pattern. Each unordered pair (i <= j) is stored once, sorted
/// lexicographically; per-pattern value vectors use the same ordering.
class SupportPattern {
public:
  struct Pair {
    Index i;
    Index j;
    bool diagonal() const { return i == j; }
    friend bool operator==(const Pair&, const Pair&) = default;
    friend auto operator<=>(const Pair&, const Pair&) = default;
  };

  SupportPattern() = default;

  static SupportPattern diagonal(Index n) { return SupportPattern(n, {}); }

  static SupportPattern full(Index n) {
    std::vector<Pair> pairs;
    pairs.reserve(static_cast<std::size_t>(n * (n + 1) / 2));
    for (Index i = 0; i < n; ++i)
      for (Index j = i; j < n; ++j) pairs.push_back({i, j});
    return SupportPattern(n, std::move(pairs));
  }

  /// Pairs may be given in either orientation and may repeat.
  static SupportPattern from_pairs(Index n, std::span<const std::pair<Index, Index>> pairs) {
    std::vector<Pair> ps;
    ps.reserve(pairs.size());
    for (auto [i, j] : pairs) ps.push_back({i, j});
    return SupportPattern(n, std::move(ps));
  }

  /// Entries with |m(i,j)| > eps (upper triangle is read) plus the diagonal.
  template <typename Derived>
  static SupportPattern from_nonzeros(const Eigen::MatrixBase<Derived>& m, double eps = 0.0) {
    if (m.rows() != m.cols()) throw DimensionMismatch("pattern source must be square");
    std::vector<Pair> ps;
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = i + 1; j < m.cols(); ++j)
        if (std::abs(static_cast<double>(m(i, j))) > eps) ps.push_back({i, j});
    return SupportPattern(m.rows(), std::move(ps));
  }

  Index dim() const { return n_; }
  /// Number of unordered pairs, diagonal included.
  std::size_t size() const { return pairs_.size(); }
  /// Number of entries of the full square matrix covered by the pattern.
  std::size_t nnz() const { return 2 * pairs_.size() - static_cast<std::size_t>(n_); }
  std::span<const Pair> pairs() const { return pairs_; }
  const Pair& operator[](std::size_t p) const { return pairs_[p]; }

  std::optional<std::size_t> find(Index i, Index j) const {
    if (i > j) std::swap(i, j);
    const Pair key{i, j};
    auto it = std::lower_bound(pairs_.begin(), pairs_.end(), key);
    if (it == pairs_.end() || *it != key) return std::nullopt;
    return static_cast<std::size_t>(it - pairs_.begin());
  }

  bool contains(Index i, Index j) const { return find(i, j).has_value(); }

  /// Sorted column indices j with (i, j) in the pattern, i itself included.
  std::span<const Index> neighbors(Index i) const { return rows_[static_cast<std::size_t>(i)]; }

  bool is_subset_of(const SupportPattern& other) const {
    if (other.n_ != n_) return false;
    return std::includes(other.pairs_.begin(), other.pairs_.end(), pairs_.begin(), pairs_.end());
  }

  SupportPattern united_with(const SupportPattern& other) const {
    if (other.n_ != n_) throw DimensionMismatch("pattern union of different dimensions");
    std::vector<Pair> ps;
    ps.reserve(pairs_.size() + other.pairs_.size());
    std::set_union(pairs_.begin(), pairs_.end(), other.pairs_.begin(), other.pairs_.end(),
                   std::back_inserter(ps));
    return SupportPattern(n_, std::move(ps), /*sorted=*/true);
  }

  friend bool operator==(const SupportPattern& a, const SupportPattern& b) {
    return a.n_ == b.n_ && a.pairs_ == b.pairs_;
  }

private:
  SupportPattern(Index n, std::vector<Pair> pairs, bool sorted = false) : n_(n) {
    if (n < 1) throw InvalidArgument("pattern dimension must be at least 1");
    for (auto& p : pairs) {
      if (p.i < 0 || p.j < 0 || p.i >= n || p.j >= n)
        throw InvalidArgument("pattern index out of range");
      if (p.i > p.j) std::swap(p.i, p.j);
    }
    if (!sorted) {
      for (Index i = 0; i < n; ++i) pairs.push_back({i, i});
      std::sort(pairs.begin(), pairs.end());
      pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    }
    pairs_ = std::move(pairs);
    rows_.assign(static_cast<std::size_t>(n), {});
    for (const auto& p : pairs_) {
      rows_[static_cast<std::size_t>(p.i)].push_back(p.j);
      if (!p.diagonal()) rows_[static_cast<std::size_t>(p.j)].push_back(p.i);
    }
    for (auto& r : rows_) std::sort(r.begin(), r.end());
  }

  Index n_ = 0;
  std::vector<Pair> pairs_;
  std::vector<std::vector<Index>> rows_;
};

// ---------------------------------------------------------------------------
// Pattern-coordinate helpers. A "pattern vector" holds one value per unordered
// pair of a SupportPattern, in the pattern's order.

template <typename Derived>
Vector<typename Derived::Scalar> gather(const Eigen::MatrixBase<Derived>& m,
                                        const SupportPattern& pattern) {
  if (m.rows() != pattern.dim() || m.cols() != pattern.dim()) throw DimensionMismatch();
  Vector<typename Derived::Scalar> v(static_cast<Index>(pattern.size()));
  for (std::size_t p = 0; p < pattern.size(); ++p) v(static_cast<Index>(p)) = m(pattern[p].i, pattern[p].j);
  return v;
}

template <typename Scalar>
Matrix<Scalar> scatter(const SupportPattern& pattern, const Vector<Scalar>& values) {
  if (values.size() != static_cast<Index>(pattern.size())) throw DimensionMismatch();
  Matrix<Scalar> m = Matrix<Scalar>::Zero(pattern.dim(), pattern.dim());
  for (std::size_t p = 0; p < pattern.size(); ++p) {
    const auto [i, j] = pattern[p];
    m(i, j) = values(static_cast<Index>(p));
    m(j, i) = values(static_cast<Index>(p));
  }
  return m;
}

/// Multiplicity of each pair in the full square: 1 on the diagonal, 2 off it.
template <typename Scalar = double>
Vector<Scalar> pair_multiplicity(const SupportPattern& pattern) {
  Vector<Scalar> w(static_cast<Index>(pattern.size()));
  for (std::size_t p = 0; p < pattern.size(); ++p)
    w(static_cast<Index>(p)) = pattern[p].diagonal() ? Scalar(1) : Scalar(2);
  return w;
}

/// trace(A B) for symmetric A, B supported on the pattern, from pattern vectors.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar pattern_dot(const SupportPattern& pattern,
                                      const Eigen::MatrixBase<DerivedA>& a,
                                      const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  Scalar acc(0);
  for (std::size_t p = 0; p < pattern.size(); ++p) {
    const Scalar prod = a(static_cast<Index>(p)) * b(static_cast<Index>(p));
    acc += pattern[p].diagonal() ? prod : Scalar(2) * prod;
  }
  return acc;
}

template <typename Scalar>
Eigen::SparseMatrix<Scalar> to_sparse(const SupportPattern& pattern, const Vector<Scalar>& values) {
  std::vector<Eigen::Triplet<Scalar>> trips;
  trips.reserve(pattern.nnz());
  for (std::size_t p = 0; p < pattern.size(); ++p) {
    const auto [i, j] = pattern[p];
    const Scalar v = values(static_cast<Index>(p));
    trips.emplace_back(i, j, v);
    if (i != j) trips.emplace_back(j, i, v);
  }
  Eigen::SparseMatrix<Scalar> s(pattern.dim(), pattern.dim());
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

// ---------------------------------------------------------------------------
// Dense symmetric operations.

template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, static_cast<double>(m.cwiseAbs().maxCoeff()));
  return static_cast<double>((m - m.transpose()).cwiseAbs().maxCoeff()) <= rel_tol * scale;
}

/// Lower Cholesky factor, or nullopt when a pivot is not positive.
template <typename Derived>
std::optional<Matrix<typename Derived::Scalar>> try_cholesky(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw DimensionMismatch("cholesky of a non-square matrix");
  Eigen::LLT<Matrix<Scalar>> llt(m.derived());
  if (llt.info() != Eigen::Success) return std::nullopt;
  Matrix<Scalar> l = llt.matrixL();
  if (!l.diagonal().allFinite() || (l.diagonal().array() <= Scalar(0)).any()) return std::nullopt;
  return l;
}

template <typename Derived>
Matrix<typename Derived::Scalar> cholesky(const Eigen::MatrixBase<Derived>& m) {
  auto l = try_cholesky(m);
  if (!l) throw NotSpd();
  return std::move(*l);
}

/// Ascending eigenvalues of a symmetric matrix.
template <typename Derived>
Vector<typename Derived::Scalar> eigenvalues_sym(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw DimensionMismatch();
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(m.derived(), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

template <typename Derived>
Matrix<typename Derived::Scalar> project_to_pattern(const Eigen::MatrixBase<Derived>& m,
                                                    const SupportPattern& pattern) {
  return scatter(pattern, gather(m, pattern));
}

// ---------------------------------------------------------------------------

/// Symmetric positive-definite matrix stored on a support pattern. Immutable;
/// the dense form, Cholesky factor and log-determinant are computed once on
/// construction and shared between copies.
template <typename Scalar>
class SparseSpd {
public:
  /// Throws NotSpd when the values do not form a positive-definite matrix.
  SparseSpd(SupportPattern pattern, Vector<Scalar> values)
      : state_(make_state(std::move(pattern), std::move(values))) {
    if (!state_) throw NotSpd();
  }

  static std::optional<SparseSpd> try_create(SupportPattern pattern, Vector<Scalar> values) {
    auto st = make_state(std::move(pattern), std::move(values));
    if (!st) return std::nullopt;
    return SparseSpd(std::move(st));
  }

  /// Reads the entries of `m` that lie on `pattern`; everything else is dropped.
  template <typename Derived>
  static SparseSpd from_dense(const Eigen::MatrixBase<Derived>& m, SupportPattern pattern) {
    Vector<Scalar> v = gather(m, pattern).template cast<Scalar>();
    return SparseSpd(std::move(pattern), std::move(v));
  }

  static SparseSpd identity(Index n) {
    return SparseSpd(SupportPattern::diagonal(n), Vector<Scalar>::Ones(n));
  }

  static SparseSpd diagonal(const Vector<Scalar>& d) {
    return SparseSpd(SupportPattern::diagonal(d.size()), d);
  }

  Index dim() const { return state_->pattern.dim(); }
  const SupportPattern& pattern() const { return state_->pattern; }
  const Vector<Scalar>& values() const { return state_->values; }
  const Matrix<Scalar>& dense() const { return state_->dense; }
  const Eigen::SparseMatrix<Scalar>& sparse() const { return state_->sparse; }
  const Eigen::LLT<Matrix<Scalar>>& llt() const { return state_->llt; }
  Matrix<Scalar> chol_lower() const { return state_->llt.matrixL(); }
  Scalar log_det() const { return state_->log_det; }

  Scalar operator()(Index i, Index j) const { return state_->dense(i, j); }

  /// (x)ᵀ Q (x) evaluated over the pattern entries.
  template <typename Derived>
  Scalar quad_form(const Eigen::MatrixBase<Derived>& x) const {
    if (x.size() != dim()) throw DimensionMismatch();
    const auto& pat = pattern();
    Scalar acc(0);
    for (std::size_t p = 0; p < pat.size(); ++p) {
      const auto [i, j] = pat[p];
      const Scalar t = values()(static_cast<Index>(p)) * x(i) * x(j);
      acc += i == j ? t : Scalar(2) * t;
    }
    return acc;
  }

  /// The same matrix expressed on a superset pattern (new entries are zero).
  SparseSpd embedded_in(const SupportPattern& larger) const {
    if (!pattern().is_subset_of(larger))
      throw InvalidArgument("support of the matrix is not contained in the target pattern");
    Vector<Scalar> v = Vector<Scalar>::Zero(static_cast<Index>(larger.size()));
    const auto& pat = pattern();
    for (std::size_t p = 0; p < pat.size(); ++p)
      v(static_cast<Index>(*larger.find(pat[p].i, pat[p].j))) = values()(static_cast<Index>(p));
    return SparseSpd(larger, std::move(v));
  }

  /// Pattern of entries that are numerically nonzero (|v| > eps), plus the diagonal.
  SupportPattern support(Scalar eps = Scalar(0)) const {
    std::vector<std::pair<Index, Index>> kept;
    const auto& pat = pattern();
    for (std::size_t p = 0; p < pat.size(); ++p)
      if (!pat[p].diagonal() && std::abs(values()(static_cast<Index>(p))) > eps)
        kept.emplace_back(pat[p].i, pat[p].j);
    return SupportPattern::from_pairs(dim(), kept);
  }

  /// Drops off-diagonal entries with |v| <= eps from the pattern.
  SparseSpd pruned(Scalar eps) const {
    auto sup = support(eps);
    if (sup == pattern()) return *this;
    Vector<Scalar> v(static_cast<Index>(sup.size()));
    for (std::size_t p = 0; p < sup.size(); ++p)
      v(static_cast<Index>(p)) = values()(static_cast<Index>(*pattern().find(sup[p].i, sup[p].j)));
    return SparseSpd(std::move(sup), std::move(v));
  }

private:
  struct State {
    SupportPattern pattern;
    Vector<Scalar> values;
    Matrix<Scalar> dense;
    Eigen::SparseMatrix<Scalar> sparse;
    Eigen::LLT<Matrix<Scalar>> llt;
    Scalar log_det;
  };

  explicit SparseSpd(std::shared_ptr<const State> st) : state_(std::move(st)) {}

  static std::shared_ptr<const State> make_state(SupportPattern pattern, Vector<Scalar> values) {
    if (values.size() != static_cast<Index>(pattern.size()))
      throw DimensionMismatch("one value per pattern pair expected");
    if (!values.allFinite()) return nullptr;
    auto st = std::make_shared<State>();
    st->dense = scatter(pattern, values);
    st->llt.compute(st->dense);
    if (st->llt.info() != Eigen::Success) return nullptr;
    const auto d = st->llt.matrixLLT().diagonal();
    if (!d.allFinite() || (d.array() <= Scalar(0)).any()) return nullptr;
    st->log_det = Scalar(2) * d.array().log().sum();
    st->sparse = to_sparse(pattern, values);
    st->pattern = std::move(pattern);
    st->values = std::move(values);
    return st;
  }

  std::shared_ptr<const State> state_;
};

using SparseSpdd = SparseSpd<double>;

/// Dense inverse of an SPD matrix via its cached Cholesky factor.
template <typename Scalar>
Matrix<Scalar> spd_inverse(const SparseSpd<Scalar>& q) {
  Matrix<Scalar> inv = q.llt().solve(Matrix<Scalar>::Identity(q.dim(), q.dim()));
  // Symmetrize away round-off so downstream symmetry checks hold exactly.
  return (inv + inv.transpose()) * Scalar(0.5);
}

}  // namespace gmrf
