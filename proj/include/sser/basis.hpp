#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "sser/types.hpp"

namespace sser {

/// Axis-aligned box; in quantile space it is a subset of [0,1]^M.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  static Box unit(std::size_t dim) { return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)}; }

  std::size_t dim() const { return lo.size(); }
  double width(std::size_t i) const { return hi[i] - lo[i]; }
  /// Product of the side lengths (probability mass for a quantile-space box).
  double volume() const;
  bool contains(std::span<const double> u) const;
  std::vector<double> center() const;
};

enum class ExpansionSpace { QuantileSpace, RealEnvelope };

/// Orthonormal Legendre polynomial of degree n on [-1, 1] under the uniform
/// probability measure: sqrt(2n+1) P_n(t).
double legendre(int degree, double t);

/// Fills out[0..max_degree] with the orthonormal Legendre values at t.
void legendre_table(double t, int max_degree, double* out);

using MultiIndex = std::vector<int>;

/// Tensorized Legendre basis on a box, indexed by a multi-index set. The
/// affine map sends [center - half_width, center + half_width] to [-1, 1]
/// per dimension.
class BasisSpec {
public:
  BasisSpec() = default;
  BasisSpec(std::vector<MultiIndex> multi_indices, std::vector<double> center, std::vector<double> half_width,
            ExpansionSpace space);

  std::size_t size() const { return multi_indices_.size(); }
  std::size_t dim() const { return center_.size(); }
  const std::vector<MultiIndex>& multi_indices() const { return multi_indices_; }
  const std::vector<double>& center() const { return center_; }
  const std::vector<double>& half_width() const { return half_width_; }
  ExpansionSpace space() const { return space_; }
  int total_degree(std::size_t term) const { return total_degree_[term]; }
  int max_degree() const { return max_degree_; }

  /// Values of every basis function at one point (native coordinates).
  void evaluate_terms(std::span<const double> point, std::span<double> out) const;
  /// n x size() design matrix.
  Matrix design_matrix(const PointMatrix& points) const;

  /// Basis restricted to the given term indices, in the given order.
  BasisSpec subset(std::span<const std::size_t> terms) const;

private:
  std::vector<MultiIndex> multi_indices_;
  std::vector<double> center_;
  std::vector<double> half_width_;
  ExpansionSpace space_ = ExpansionSpace::QuantileSpace;
  std::vector<int> total_degree_;
  int max_degree_ = 0;
  // Flattened nonzero factors: term t uses factors [factor_offset_[t], factor_offset_[t+1]).
  std::vector<std::size_t> factor_offset_;
  std::vector<int> factor_dim_;
  std::vector<int> factor_degree_;
  std::vector<int> dim_max_degree_;
};

inline constexpr int kUnlimitedRank = std::numeric_limits<int>::max();

/// Multi-index set {alpha : |alpha|_1 <= p_max, #nonzero(alpha) <= rank_limit},
/// sorted by total degree then lexicographically (constant term first).
std::vector<MultiIndex> total_degree_set(std::size_t dim, int p_max, int rank_limit = kUnlimitedRank);

/// Basis orthonormal w.r.t. the uniform measure on `box`.
BasisSpec build_basis(const Box& box, int p_max, int rank_limit = kUnlimitedRank,
                      ExpansionSpace space = ExpansionSpace::QuantileSpace);

}  // namespace sser
