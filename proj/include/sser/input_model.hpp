#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sser/rng.hpp"
#include "sser/types.hpp"

namespace sser {

enum class Family { Gaussian, Lognormal, Uniform, TruncatedGaussian };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

/// Quantile coordinates are clipped to [kQuantileClip, 1 - kQuantileClip]
/// before mapping to real space.
inline constexpr double kQuantileClip = 1e-12;

/// One-dimensional marginal distribution, parameterized by the mean and
/// standard deviation of the physical variable. For TruncatedGaussian the
/// moments are those of the untruncated parent.
class Marginal {
public:
  static Marginal gaussian(double mean, double std);
  static Marginal lognormal(double mean, double std);
  static Marginal uniform(double lower, double upper);
  static Marginal uniform_moments(double mean, double std);
  static Marginal truncated_gaussian(double mean, double std, double lower, double upper);

  Family family() const { return family_; }
  double mean() const { return mean_; }
  double std() const { return std_; }
  /// Truncation bounds (TruncatedGaussian) or support (Uniform).
  std::optional<double> lower() const { return lower_; }
  std::optional<double> upper() const { return upper_; }

  double cdf(double x) const;
  double ppf(double p) const;

  /// Maps a standard normal variate z to x with cdf(x) = Phi(z). Uses the
  /// upper tail when z > 0 so that both tails keep full relative precision.
  double from_standard_normal(double z) const;
  /// Inverse of from_standard_normal.
  double to_standard_normal(double x) const;

  bool in_support(double x) const;

private:
  Marginal(Family family, double mean, double std, std::optional<double> lower, std::optional<double> upper);

  Family family_;
  double mean_;
  double std_;
  std::optional<double> lower_;
  std::optional<double> upper_;
  // Lognormal log-space parameters; truncated-Gaussian parent cdf at the bounds.
  double log_mu_ = 0.0;
  double log_sigma_ = 0.0;
  double cdf_lo_ = 0.0;
  double sf_hi_ = 0.0;
  double mass_ = 1.0;
};

/// Inverse CDF. Throws std::domain_error for p outside (0, 1).
double marginal_ppf(const Marginal& m, double p);

enum class CopulaKind { Independent, Gaussian };

struct CopulaModel {
  CopulaKind kind = CopulaKind::Independent;
  Eigen::MatrixXd correlation;  // only used for the Gaussian kind

  static CopulaModel independent() { return {}; }
  static CopulaModel gaussian(Eigen::MatrixXd correlation) { return {CopulaKind::Gaussian, std::move(correlation)}; }
};

/// Probabilistic input vector with a bijection between the unit hypercube
/// (quantile space) and the real space. Dependence is handled by the
/// Rosenblatt transform of a Gaussian copula, conditioning variables in
/// declaration order.
class InputModel {
public:
  InputModel(std::vector<Marginal> marginals, CopulaModel copula = {}, std::vector<std::string> names = {});

  std::size_t dim() const { return marginals_.size(); }
  const std::vector<Marginal>& marginals() const { return marginals_; }
  const CopulaModel& copula() const { return copula_; }
  const std::vector<std::string>& names() const { return names_; }
  bool independent() const { return copula_.kind == CopulaKind::Independent; }

  void quantile_to_real(std::span<const double> u, std::span<double> x) const;
  void real_to_quantile(std::span<const double> x, std::span<double> u) const;

  PointMatrix quantile_to_real(const PointMatrix& u) const;
  PointMatrix real_to_quantile(const PointMatrix& x) const;

  /// n i.i.d. draws, returned in real space (and optionally their quantile images).
  PointMatrix sample(std::size_t n, Rng& rng, PointMatrix* quantiles = nullptr) const;

private:
  std::vector<Marginal> marginals_;
  CopulaModel copula_;
  std::vector<std::string> names_;
  Eigen::MatrixXd chol_;  // lower Cholesky factor of the copula correlation
};

/// Uniform points in the box [lo, hi] (quantile coordinates).
PointMatrix sample_box(std::span<const double> lo, std::span<const double> hi, std::size_t n, Rng& rng);

}  // namespace sser
