#include "sser/input_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "sser/normal.hpp"

namespace sser {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_positive_std(double std) {
  if (!(std > 0.0) || !std::isfinite(std)) throw std::invalid_argument("marginal standard deviation must be > 0");
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::Gaussian: return "gaussian";
    case Family::Lognormal: return "lognormal";
    case Family::Uniform: return "uniform";
    case Family::TruncatedGaussian: return "truncated_gaussian";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  if (name == "gaussian" || name == "normal") return Family::Gaussian;
  if (name == "lognormal") return Family::Lognormal;
  if (name == "uniform") return Family::Uniform;
  if (name == "truncated_gaussian" || name == "truncated_normal") return Family::TruncatedGaussian;
  throw std::invalid_argument("unknown marginal family '" + name + "'");
}

Marginal::Marginal(Family family, double mean, double std, std::optional<double> lower, std::optional<double> upper)
    : family_(family), mean_(mean), std_(std), lower_(lower), upper_(upper) {}

Marginal Marginal::gaussian(double mean, double std) {
  require_positive_std(std);
  return Marginal(Family::Gaussian, mean, std, std::nullopt, std::nullopt);
}

Marginal Marginal::lognormal(double mean, double std) {
  require_positive_std(std);
  if (!(mean > 0.0)) throw std::invalid_argument("lognormal mean must be > 0");
  Marginal m(Family::Lognormal, mean, std, 0.0, std::nullopt);
  const double cv = std / mean;
  m.log_sigma_ = std::sqrt(std::log1p(cv * cv));
  m.log_mu_ = std::log(mean) - 0.5 * m.log_sigma_ * m.log_sigma_;
  return m;
}

Marginal Marginal::uniform(double lower, double upper) {
  if (!(upper > lower)) throw std::invalid_argument("uniform marginal requires upper > lower");
  return Marginal(Family::Uniform, 0.5 * (lower + upper), (upper - lower) / std::sqrt(12.0), lower, upper);
}

Marginal Marginal::uniform_moments(double mean, double std) {
  require_positive_std(std);
  const double half = std::sqrt(3.0) * std;
  return uniform(mean - half, mean + half);
}

Marginal Marginal::truncated_gaussian(double mean, double std, double lower, double upper) {
  require_positive_std(std);
  if (!(upper > lower)) throw std::invalid_argument("truncation bounds require upper > lower");
  Marginal m(Family::TruncatedGaussian, mean, std, lower, upper);
  m.cdf_lo_ = normal::cdf((lower - mean) / std);
  m.sf_hi_ = normal::sf((upper - mean) / std);
  m.mass_ = 1.0 - m.cdf_lo_ - m.sf_hi_;
  if (!(m.mass_ > 0.0)) throw std::invalid_argument("truncation interval carries no probability mass");
  return m;
}

bool Marginal::in_support(double x) const {
  if (!std::isfinite(x)) return false;
  switch (family_) {
    case Family::Gaussian: return true;
    case Family::Lognormal: return x > 0.0;
    case Family::Uniform:
    case Family::TruncatedGaussian: return x >= *lower_ && x <= *upper_;
  }
  return false;
}

double Marginal::cdf(double x) const {
  switch (family_) {
    case Family::Gaussian: return normal::cdf((x - mean_) / std_);
    case Family::Lognormal: return x <= 0.0 ? 0.0 : normal::cdf((std::log(x) - log_mu_) / log_sigma_);
    case Family::Uniform: return std::clamp((x - *lower_) / (*upper_ - *lower_), 0.0, 1.0);
    case Family::TruncatedGaussian: {
      if (x <= *lower_) return 0.0;
      if (x >= *upper_) return 1.0;
      return std::clamp((normal::cdf((x - mean_) / std_) - cdf_lo_) / mass_, 0.0, 1.0);
    }
  }
  return 0.0;
}

double Marginal::ppf(double p) const { return marginal_ppf(*this, p); }

double Marginal::from_standard_normal(double z) const {
  switch (family_) {
    case Family::Gaussian: return mean_ + std_ * z;
    case Family::Lognormal: return std::exp(log_mu_ + log_sigma_ * z);
    case Family::Uniform: {
      const double width = *upper_ - *lower_;
      return z <= 0.0 ? *lower_ + width * normal::cdf(z) : *upper_ - width * normal::sf(z);
    }
    case Family::TruncatedGaussian: {
      double t;
      if (z <= 0.0) {
        t = normal::ppf(cdf_lo_ + normal::cdf(z) * mass_);
      } else {
        t = normal::isf(sf_hi_ + normal::sf(z) * mass_);
      }
      return std::clamp(mean_ + std_ * t, *lower_, *upper_);
    }
  }
  return 0.0;
}

double Marginal::to_standard_normal(double x) const {
  if (!in_support(x)) throw std::domain_error("value outside the marginal support");
  switch (family_) {
    case Family::Gaussian: return (x - mean_) / std_;
    case Family::Lognormal: return (std::log(x) - log_mu_) / log_sigma_;
    case Family::Uniform: {
      const double width = *upper_ - *lower_;
      const double p = (x - *lower_) / width;
      return p <= 0.5 ? normal::ppf(p) : normal::isf((*upper_ - x) / width);
    }
    case Family::TruncatedGaussian: {
      const double t = (x - mean_) / std_;
      const double p = (normal::cdf(t) - cdf_lo_) / mass_;
      if (p <= 0.5) return normal::ppf(std::max(p, 0.0));
      return normal::isf(std::max((normal::sf(t) - sf_hi_) / mass_, 0.0));
    }
  }
  return 0.0;
}

double marginal_ppf(const Marginal& m, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("probability must lie in (0, 1)");
  return m.from_standard_normal(normal::ppf(p));
}

InputModel::InputModel(std::vector<Marginal> marginals, CopulaModel copula, std::vector<std::string> names)
    : marginals_(std::move(marginals)), copula_(std::move(copula)), names_(std::move(names)) {
  const auto m = static_cast<Eigen::Index>(marginals_.size());
  if (m == 0) throw std::invalid_argument("input model needs at least one marginal");
  if (names_.empty()) {
    for (Eigen::Index i = 0; i < m; ++i) names_.push_back("X" + std::to_string(i + 1));
  }
  if (static_cast<Eigen::Index>(names_.size()) != m) throw std::invalid_argument("one name per marginal required");

  if (copula_.kind == CopulaKind::Gaussian) {
    const auto& r = copula_.correlation;
    if (r.rows() != m || r.cols() != m) throw std::invalid_argument("correlation matrix must be M x M");
    for (Eigen::Index i = 0; i < m; ++i) {
      if (r(i, i) != 1.0) throw std::invalid_argument("correlation matrix diagonal must be exactly 1");
      for (Eigen::Index j = 0; j < i; ++j) {
        if (r(i, j) != r(j, i)) throw std::invalid_argument("correlation matrix must be symmetric");
        if (!(std::abs(r(i, j)) < 1.0)) throw std::invalid_argument("correlations must lie in (-1, 1)");
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("correlation matrix is not positive definite");
    chol_ = llt.matrixL();
  }
}

void InputModel::quantile_to_real(std::span<const double> u, std::span<double> x) const {
  const std::size_t m = dim();
  Eigen::VectorXd xi(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    xi[static_cast<Eigen::Index>(i)] = normal::ppf(std::clamp(u[i], kQuantileClip, 1.0 - kQuantileClip));
  }
  if (copula_.kind == CopulaKind::Gaussian) xi = chol_.triangularView<Eigen::Lower>() * xi;
  for (std::size_t i = 0; i < m; ++i) x[i] = marginals_[i].from_standard_normal(xi[static_cast<Eigen::Index>(i)]);
}

void InputModel::real_to_quantile(std::span<const double> x, std::span<double> u) const {
  const std::size_t m = dim();
  Eigen::VectorXd z(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) z[static_cast<Eigen::Index>(i)] = marginals_[i].to_standard_normal(x[i]);
  if (copula_.kind == CopulaKind::Gaussian) chol_.triangularView<Eigen::Lower>().solveInPlace(z);
  for (std::size_t i = 0; i < m; ++i) u[i] = normal::cdf(z[static_cast<Eigen::Index>(i)]);
}

PointMatrix InputModel::quantile_to_real(const PointMatrix& u) const {
  PointMatrix x(u.rows(), u.cols());
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    quantile_to_real(std::span<const double>(u.row(r).data(), dim()), std::span<double>(x.row(r).data(), dim()));
  }
  return x;
}

PointMatrix InputModel::real_to_quantile(const PointMatrix& x) const {
  PointMatrix u(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    real_to_quantile(std::span<const double>(x.row(r).data(), dim()), std::span<double>(u.row(r).data(), dim()));
  }
  return u;
}

PointMatrix InputModel::sample(std::size_t n, Rng& rng, PointMatrix* quantiles) const {
  const std::vector<double> lo(dim(), 0.0), hi(dim(), 1.0);
  PointMatrix u = sample_box(lo, hi, n, rng);
  PointMatrix x = quantile_to_real(u);
  if (quantiles) *quantiles = std::move(u);
  return x;
}

PointMatrix sample_box(std::span<const double> lo, std::span<const double> hi, std::size_t n, Rng& rng) {
  const auto m = static_cast<Eigen::Index>(lo.size());
  PointMatrix u(static_cast<Eigen::Index>(n), m);
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    for (Eigen::Index i = 0; i < m; ++i) u(r, i) = rng.uniform(lo[i], hi[i]);
  }
  return u;
}

}  // namespace sser
