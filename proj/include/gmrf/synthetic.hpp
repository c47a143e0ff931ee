#pragma once

#include <cstdint>
#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

#include "gmrf/matrix_core.hpp"
#include "gmrf/rng.hpp"

namespace gmrf {

struct LatticeSpec {
  Index rows = 1;
  Index cols = 1;

  void validate() const {
    if (rows < 1 || cols < 1) throw InvalidArgument("lattice needs at least one row and column");
  }
};

/// How the coefficient fields a(x,y), b(x,y) are sampled onto grid edges.
enum class EdgeRule {
  /// One i.i.d. draw per edge: the field evaluated at the edge midpoint.
  Midpoint,
  /// i.i.d. draws per node; each edge takes the mean of its two endpoints.
  NodeMean,
};

/// Anisotropic diffusion on a rows×cols grid with coefficients uniform in
/// [coeff_low, coeff_high]: a on edges along a row, b on edges along a column.
struct DiffusionSpec {
  Index rows = 10;
  Index cols = 10;
  double coeff_low = 0.1;
  double coeff_high = 1.0;
  std::uint64_t seed = 0;
  /// Diagonal shift anchoring the constant null vector; defaults to 1e-2·coeff_low.
  std::optional<double> anchor;
  EdgeRule edge_rule = EdgeRule::NodeMean;

  double anchor_value() const { return anchor.value_or(1e-2 * coeff_low); }

  void validate() const {
    if (rows < 1 || cols < 1) throw InvalidArgument("grid needs at least one row and column");
    if (!(coeff_low > 0) || !(coeff_low <= coeff_high))
      throw InvalidArgument("diffusion coefficients need 0 < low <= high");
    if (!(anchor_value() >= 0)) throw InvalidArgument("anchor must be non-negative");
  }
};

/// A symmetric matrix stored on a pattern, not necessarily positive-definite.
template <typename Scalar>
struct PatternMatrix {
  SupportPattern pattern;
  Vector<Scalar> values;
};

/// 5-point Laplacian: 4 on the diagonal, -1 between lattice 4-neighbours;
/// boundary nodes simply lack the missing neighbours.
template <typename Scalar = double>
SparseSpd<Scalar> laplacian2d_precision(const LatticeSpec& spec) {
  spec.validate();
  const Index n = spec.rows * spec.cols;
  std::vector<std::pair<Index, Index>> edges;
  for (Index r = 0; r < spec.rows; ++r)
    for (Index c = 0; c < spec.cols; ++c) {
      const Index i = r * spec.cols + c;
      if (c + 1 < spec.cols) edges.emplace_back(i, i + 1);
      if (r + 1 < spec.rows) edges.emplace_back(i, i + spec.cols);
    }
  SupportPattern pattern = SupportPattern::from_pairs(n, edges);
  Vector<Scalar> v(static_cast<Index>(pattern.size()));
  for (std::size_t p = 0; p < pattern.size(); ++p)
    v(static_cast<Index>(p)) = pattern[p].diagonal() ? Scalar(4) : Scalar(-1);
  return SparseSpd<Scalar>(std::move(pattern), std::move(v));
}

/// Dₓᵀ diag(a_e) Dₓ + D_yᵀ diag(b_e) D_y + anchor·I on the 5-point pattern.
template <typename Scalar = double>
PatternMatrix<Scalar> diffusion_operator(const DiffusionSpec& spec) {
  spec.validate();
  const Index n = spec.rows * spec.cols;
  Rng rng(spec.seed);
  struct Edge {
    Index u, v;
    bool along_row;
    double coeff;
  };
  std::vector<Edge> edges;
  // Row-direction edges first, then column-direction edges, each row-major.
  for (Index r = 0; r < spec.rows; ++r)
    for (Index c = 0; c + 1 < spec.cols; ++c) edges.push_back({r * spec.cols + c, r * spec.cols + c + 1, true, 0.0});
  for (Index r = 0; r + 1 < spec.rows; ++r)
    for (Index c = 0; c < spec.cols; ++c) edges.push_back({r * spec.cols + c, (r + 1) * spec.cols + c, false, 0.0});

  if (spec.edge_rule == EdgeRule::Midpoint) {
    for (auto& e : edges) e.coeff = rng.uniform(spec.coeff_low, spec.coeff_high);
  } else {
    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (auto& x : a) x = rng.uniform(spec.coeff_low, spec.coeff_high);
    for (auto& x : b) x = rng.uniform(spec.coeff_low, spec.coeff_high);
    for (auto& e : edges) {
      const auto& field = e.along_row ? a : b;
      e.coeff = 0.5 * (field[static_cast<std::size_t>(e.u)] + field[static_cast<std::size_t>(e.v)]);
    }
  }
  std::vector<std::pair<Index, Index>> pairs;
  for (const auto& e : edges) pairs.emplace_back(e.u, e.v);

  PatternMatrix<Scalar> out{SupportPattern::from_pairs(n, pairs), {}};
  out.values = Vector<Scalar>::Zero(static_cast<Index>(out.pattern.size()));
  auto at = [&](Index i, Index j) -> Scalar& { return out.values(static_cast<Index>(*out.pattern.find(i, j))); };
  for (const auto& e : edges) {
    at(e.u, e.u) += Scalar(e.coeff);
    at(e.v, e.v) += Scalar(e.coeff);
    at(e.u, e.v) -= Scalar(e.coeff);
  }
  for (Index i = 0; i < n; ++i) at(i, i) += Scalar(spec.anchor_value());
  return out;
}

template <typename Scalar = double>
SparseSpd<Scalar> diffusion_precision(const DiffusionSpec& spec) {
  auto op = diffusion_operator<Scalar>(spec);
  return SparseSpd<Scalar>(std::move(op.pattern), std::move(op.values));
}

/// N×n samples of N(mean, Q⁻¹): x = L⁻ᵀ z + mean with Q = L Lᵀ. Normals are
/// drawn sample by sample, coordinate by coordinate.
template <typename Scalar>
Matrix<Scalar> sample_gmrf(const SparseSpd<Scalar>& q, const std::type_identity_t<Vector<Scalar>>& mean,
                           Index count, Rng& rng) {
  const Index n = q.dim();
  if (mean.size() != n) throw DimensionMismatch("mean has the wrong dimension");
  Matrix<Scalar> z(n, count);
  for (Index k = 0; k < count; ++k)
    for (Index i = 0; i < n; ++i) z(i, k) = Scalar(rng.normal());
  q.llt().matrixU().solveInPlace(z);
  Matrix<Scalar> x = z.transpose();
  x.rowwise() += mean.transpose();
  return x;
}

template <typename Scalar>
Matrix<Scalar> sample_gmrf(const SparseSpd<Scalar>& q, const std::type_identity_t<Vector<Scalar>>& mean,
                           Index count, std::uint64_t seed) {
  Rng rng(seed);
  return sample_gmrf(q, mean, count, rng);
}

template <typename Scalar = double>
struct ClusteringDataset {
  Matrix<Scalar> data;
  std::vector<int> labels;
  std::vector<SparseSpd<Scalar>> precisions;
  std::vector<Index> counts;
};

/// K zero-mean diffusion components with per-component sample counts drawn
/// uniformly in [samples_low, samples_high], rows shuffled.
///
/// Streams of `seed`: 0 draws counts and the shuffle, 2k+1 the coefficients
/// of component k, 2k+2 its samples.
template <typename Scalar = double>
ClusteringDataset<Scalar> make_clustering_dataset(int k_components, DiffusionSpec spec, Index samples_low,
                                                  Index samples_high, std::uint64_t seed) {
  if (k_components < 1) throw InvalidArgument("need at least one component");
  if (samples_low < 1 || samples_low > samples_high)
    throw InvalidArgument("sample range must satisfy 1 <= low <= high");
  Rng base(seed);
  Rng main = base.substream(0);
  ClusteringDataset<Scalar> ds;
  const Index n = spec.rows * spec.cols;
  Index total = 0;
  for (int k = 0; k < k_components; ++k) {
    spec.seed = Rng::stream_seed(seed, static_cast<std::uint64_t>(2 * k + 1));
    ds.precisions.push_back(diffusion_precision<Scalar>(spec));
    ds.counts.push_back(static_cast<Index>(main.uniform_int(samples_low, samples_high)));
    total += ds.counts.back();
  }
  Matrix<Scalar> stacked(total, n);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(total));
  Index row = 0;
  for (int k = 0; k < k_components; ++k) {
    Rng sampler = base.substream(static_cast<std::uint64_t>(2 * k + 2));
    const auto ku = static_cast<std::size_t>(k);
    stacked.middleRows(row, ds.counts[ku]) =
        sample_gmrf(ds.precisions[ku], Vector<Scalar>::Zero(n), ds.counts[ku], sampler);
    labels.insert(labels.end(), static_cast<std::size_t>(ds.counts[ku]), k);
    row += ds.counts[ku];
  }
  // Fisher-Yates on the row order.
  std::vector<Index> order(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  for (Index i = total - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(main.uniform_int(0, i))]);
  ds.data.resize(total, n);
  ds.labels.resize(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    ds.data.row(i) = stacked.row(src);
    ds.labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
  }
  return ds;
}

}  // namespace gmrf
