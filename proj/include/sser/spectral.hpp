#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sser/basis.hpp"
#include "sser/input_model.hpp"
#include "sser/rng.hpp"
#include "sser/types.hpp"

namespace sser {

/// Polynomial expansion sum_alpha a_alpha Psi_alpha over a (usually sparse)
/// basis. loo_error is the relative leave-one-out error of the fit.
struct PceExpansion {
  BasisSpec basis;
  Vector coefficients;
  double loo_error = 0.0;

  double evaluate(std::span<const double> point) const;
};

/// Evaluates e at every row of `points` (native coordinates of e.basis).
Vector evaluate_expansion(const PceExpansion& e, const PointMatrix& points);

/// Mean expansion plus B replications that share one basis. Replication
/// coefficients are stored column-wise: replication_coefficients.col(b).
struct BootstrapEnsemble {
  PceExpansion mean_expansion;
  Matrix replication_coefficients;

  std::size_t replications() const { return static_cast<std::size_t>(replication_coefficients.cols()); }
  const BasisSpec& basis() const { return mean_expansion.basis; }
  PceExpansion replication(std::size_t b) const;
};

struct FitOptions {
  bool degree_adaptive = true;
};

/// Degree-adaptive sparse regression: for p = 0..basis max degree, a
/// least-angle-regression path over the terms of degree <= p with an
/// ordinary-least-squares refit at every step, scored by relative LOO.
/// Returns the best model, restricted to its selected terms.
PceExpansion fit_sparse_expansion(const PointMatrix& points, const Vector& values, const BasisSpec& basis,
                                  const FitOptions& options = {});

enum class BootstrapMode {
  FixedSupport,     // refit coefficients on the mean expansion's support
  FullReselection,  // rerun the sparse selection on every resample
};

BootstrapEnsemble bootstrap_fit(const PointMatrix& points, const Vector& values, const BasisSpec& basis,
                                std::size_t replications, Rng& rng, BootstrapMode mode = BootstrapMode::FixedSupport);

/// Real-space box enveloping the image of a quantile-space box. Boundary
/// faces are sampled uniformly (area-weighted), mapped to real space, and
/// bounded. The corners that extremize each Gaussian-copula coordinate are
/// added to the boundary sample. For independent inputs the envelope is the
/// exact per-dimension quantile range.
Box compute_envelope(const InputModel& model, const Box& quantile_box, std::size_t n_boundary, Rng& rng);

namespace detail {

/// Weighted least squares on the given design columns; robust to rank deficiency.
Vector weighted_least_squares(const Matrix& design, const Vector& values, const Vector& weights);

struct SparseFit {
  std::vector<std::size_t> terms;  // indices into the candidate basis
  Vector coefficients;
  double loo_error = 0.0;
};

/// Sparse selection on a precomputed design matrix. term_degree[j] is the
/// total degree of column j; column 0 must be the constant term.
SparseFit select_sparse(const Matrix& psi, const Vector& values, std::span<const int> term_degree, int max_degree,
                        bool degree_adaptive);

/// Relative LOO error of an OLS fit via the leverage formula.
double relative_loo(const Matrix& design, const Vector& values, const Vector& coefficients);

}  // namespace detail

}  // namespace sser
