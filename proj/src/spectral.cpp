#include "sser/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "sser/normal.hpp"

namespace sser {

double PceExpansion::evaluate(std::span<const double> point) const {
  thread_local std::vector<double> terms;
  terms.resize(basis.size());
  basis.evaluate_terms(point, terms);
  double v = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) v += coefficients[static_cast<Eigen::Index>(t)] * terms[t];
  return v;
}

Vector evaluate_expansion(const PceExpansion& e, const PointMatrix& points) {
  Vector out(points.rows());
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    out[r] = e.evaluate(std::span<const double>(points.row(r).data(), static_cast<std::size_t>(points.cols())));
  }
  return out;
}

PceExpansion BootstrapEnsemble::replication(std::size_t b) const {
  if (b >= replications()) throw std::out_of_range("bootstrap replication index out of range");
  return PceExpansion{mean_expansion.basis, replication_coefficients.col(static_cast<Eigen::Index>(b)), 0.0};
}

namespace detail {

Vector weighted_least_squares(const Matrix& design, const Vector& values, const Vector& weights) {
  const Vector sw = weights.cwiseSqrt();
  const Matrix a = sw.asDiagonal() * design;
  const Vector y = sw.cwiseProduct(values);
  // The threshold must be set before compute: the Z factor is built for the
  // rank seen at compute time, and solve reads it for the current rank.
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a.rows(), a.cols());
  cod.setThreshold(1e-12);
  cod.compute(a);
  return cod.solve(y);
}

namespace {

double sample_variance(const Vector& y) {
  if (y.size() < 2) return 0.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

struct OlsResult {
  Vector coefficients;
  double loo = std::numeric_limits<double>::infinity();
};

OlsResult ols_with_loo(const Matrix& design, const Vector& y, double variance) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  Eigen::HouseholderQR<Matrix> qr(design);
  OlsResult out;
  out.coefficients = qr.solve(y);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, k);
  const Vector h = q.rowwise().squaredNorm();
  const Vector resid = y - design * out.coefficients;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double denom = 1.0 - h[i];
    if (denom < 1e-10) return out;
    const double e = resid[i] / denom;
    acc += e * e;
  }
  out.loo = variance > 0.0 ? acc / static_cast<double>(n) / variance : 0.0;
  return out;
}

/// Least-angle regression (Efron et al. 2004, without the lasso
/// modification). Returns the order in which candidate columns enter.
std::vector<std::size_t> lars_path(const Matrix& psi, const Vector& y, std::span<const std::size_t> candidates,
                                   std::size_t max_active) {
  const Eigen::Index n = psi.rows();
  std::vector<std::size_t> usable;
  Matrix x(n, static_cast<Eigen::Index>(candidates.size()));
  Eigen::Index q = 0;
  for (std::size_t j : candidates) {
    Vector col = psi.col(static_cast<Eigen::Index>(j));
    col.array() -= col.mean();
    const double norm = col.norm();
    if (norm < 1e-12 * std::sqrt(static_cast<double>(n))) continue;
    x.col(q++) = col / norm;
    usable.push_back(j);
  }
  x.conservativeResize(n, q);

  std::vector<std::size_t> order;
  if (q == 0 || max_active == 0) return order;

  Vector r = y.array() - y.mean();
  Vector c = x.transpose() * r;
  std::vector<char> state(static_cast<std::size_t>(q), 0);  // 0 inactive, 1 active, 2 excluded
  std::vector<Eigen::Index> active;

  Eigen::Index first;
  const double c0 = c.cwiseAbs().maxCoeff(&first);
  if (c0 <= 1e-14 * std::max(1.0, r.norm())) return order;
  active.push_back(first);
  state[static_cast<std::size_t>(first)] = 1;
  order.push_back(usable[static_cast<std::size_t>(first)]);

  while (true) {
    const auto k = static_cast<Eigen::Index>(active.size());
    Matrix xa(n, k);
    double big_c = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      const double s = c[active[i]] >= 0.0 ? 1.0 : -1.0;
      xa.col(i) = s * x.col(active[i]);
      big_c = std::max(big_c, std::abs(c[active[i]]));
    }
    if (big_c <= 1e-12 * c0) break;
    if (static_cast<std::size_t>(k) >= max_active) break;

    const Matrix gram = xa.transpose() * xa;
    Eigen::LLT<Matrix> llt(gram);
    const Vector wv = llt.solve(Vector::Ones(k));
    const double sum = wv.sum();
    if (llt.info() != Eigen::Success || !(sum > 0.0)) break;
    const double aa = 1.0 / std::sqrt(sum);
    const Vector w = aa * wv;
    const Vector u = xa * w;
    const Vector a = x.transpose() * u;

    double gamma = big_c / aa;
    Eigen::Index next = -1;
    for (Eigen::Index j = 0; j < q; ++j) {
      if (state[static_cast<std::size_t>(j)] != 0) continue;
      const double g1 = (big_c - c[j]) / (aa - a[j]);
      const double g2 = (big_c + c[j]) / (aa + a[j]);
      for (double g : {g1, g2}) {
        if (g > 1e-14 && g < gamma) {
          gamma = g;
          next = j;
        }
      }
    }
    if (next < 0) break;
    r -= gamma * u;
    c = x.transpose() * r;

    // Reject candidates numerically collinear with the active set.
    Matrix trial(n, k + 1);
    for (Eigen::Index i = 0; i < k; ++i) trial.col(i) = x.col(active[i]);
    trial.col(k) = x.col(next);
    Eigen::LLT<Matrix> check(trial.transpose() * trial);
    const double pivot = check.info() == Eigen::Success ? check.matrixL()(k, k) : 0.0;
    if (!(pivot > 1e-7)) {
      state[static_cast<std::size_t>(next)] = 2;
      continue;
    }
    state[static_cast<std::size_t>(next)] = 1;
    active.push_back(next);
    order.push_back(usable[static_cast<std::size_t>(next)]);
  }
  return order;
}

}  // namespace

double relative_loo(const Matrix& design, const Vector& values, const Vector& coefficients) {
  const double variance = sample_variance(values);
  if (variance <= 0.0) return 0.0;
  Eigen::HouseholderQR<Matrix> qr(design);
  const Matrix q = qr.householderQ() * Matrix::Identity(design.rows(), design.cols());
  const Vector h = q.rowwise().squaredNorm();
  const Vector resid = values - design * coefficients;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    const double denom = 1.0 - h[i];
    if (denom < 1e-10) return std::numeric_limits<double>::infinity();
    acc += (resid[i] / denom) * (resid[i] / denom);
  }
  return acc / static_cast<double>(design.rows()) / variance;
}

SparseFit select_sparse(const Matrix& psi, const Vector& values, std::span<const int> term_degree, int max_degree,
                        bool degree_adaptive) {
  const Eigen::Index n = psi.rows();
  if (n < 2) throw std::invalid_argument("sparse fit needs at least 2 points");
  if (static_cast<std::size_t>(psi.cols()) != term_degree.size() || term_degree.empty() || term_degree[0] != 0) {
    throw std::invalid_argument("design columns must start with the constant term");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(values[i])) throw std::invalid_argument("non-finite value in regression data");
  }

  const double variance = sample_variance(values);
  const double mean = values.mean();
  const double constant_norm = psi.col(0).mean();  // the constant basis function evaluates to a fixed value

  SparseFit best;
  best.terms = {0};
  best.coefficients = Vector::Constant(1, mean / constant_norm);
  const double scale = std::max(1.0, mean * mean);
  if (variance <= 1e-28 * scale) {
    best.loo_error = 0.0;
    return best;
  }
  best.loo_error = static_cast<double>(n) / static_cast<double>(n - 1);

  const std::size_t max_active = n >= 2 ? static_cast<std::size_t>(n - 2) : 0;
  std::size_t previous_candidates = 0;
  for (int p = degree_adaptive ? 1 : max_degree; p <= max_degree; ++p) {
    std::vector<std::size_t> candidates;
    for (std::size_t j = 1; j < term_degree.size(); ++j) {
      if (term_degree[j] <= p) candidates.push_back(j);
    }
    if (candidates.empty() || candidates.size() == previous_candidates) continue;
    previous_candidates = candidates.size();

    const auto order = lars_path(psi, values, candidates, max_active);
    for (std::size_t k = 1; k <= order.size(); ++k) {
      Matrix design(n, static_cast<Eigen::Index>(k + 1));
      design.col(0) = psi.col(0);
      for (std::size_t i = 0; i < k; ++i) design.col(static_cast<Eigen::Index>(i + 1)) = psi.col(static_cast<Eigen::Index>(order[i]));
      const auto fit = ols_with_loo(design, values, variance);
      if (fit.loo < best.loo_error - 1e-12) {
        best.loo_error = fit.loo;
        best.terms.assign(1, 0);
        best.terms.insert(best.terms.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
        best.coefficients = fit.coefficients;
      }
    }
  }
  return best;
}

}  // namespace detail

namespace {

std::vector<int> degrees_of(const BasisSpec& basis) {
  std::vector<int> d(basis.size());
  for (std::size_t t = 0; t < basis.size(); ++t) d[t] = basis.total_degree(t);
  return d;
}

void require_constant_first(const BasisSpec& basis) {
  if (basis.size() == 0 || basis.total_degree(0) != 0) {
    throw std::invalid_argument("basis must start with the constant term");
  }
}

}  // namespace

PceExpansion fit_sparse_expansion(const PointMatrix& points, const Vector& values, const BasisSpec& basis,
                                  const FitOptions& options) {
  require_constant_first(basis);
  if (points.rows() != values.size()) throw std::invalid_argument("points and values differ in length");
  const Matrix psi = basis.design_matrix(points);
  const auto degrees = degrees_of(basis);
  const auto fit = detail::select_sparse(psi, values, degrees, basis.max_degree(), options.degree_adaptive);
  return PceExpansion{basis.subset(fit.terms), fit.coefficients, fit.loo_error};
}

BootstrapEnsemble bootstrap_fit(const PointMatrix& points, const Vector& values, const BasisSpec& basis,
                                std::size_t replications, Rng& rng, BootstrapMode mode) {
  if (replications < 2) throw std::invalid_argument("bootstrap needs at least 2 replications");
  require_constant_first(basis);
  if (points.rows() != values.size()) throw std::invalid_argument("points and values differ in length");

  const Eigen::Index n = points.rows();
  const Matrix psi = basis.design_matrix(points);
  const auto degrees = degrees_of(basis);
  const auto mean_fit = detail::select_sparse(psi, values, degrees, basis.max_degree(), true);

  Matrix support_design(n, static_cast<Eigen::Index>(mean_fit.terms.size()));
  for (std::size_t i = 0; i < mean_fit.terms.size(); ++i) {
    support_design.col(static_cast<Eigen::Index>(i)) = psi.col(static_cast<Eigen::Index>(mean_fit.terms[i]));
  }

  // Per-replication fits, expressed as (term index into basis, coefficient).
  std::vector<detail::SparseFit> fits(replications);
  for (std::size_t b = 0; b < replications; ++b) {
    Rng stream = rng.derive(b);
    Vector weights;
    bool drawn = false;
    for (int attempt = 0; attempt < 10 && !drawn; ++attempt) {
      weights = Vector::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) weights[static_cast<Eigen::Index>(stream.index(static_cast<std::uint64_t>(n)))] += 1.0;
      drawn = (weights.array() > 0.0).count() >= 2;
    }
    if (!drawn) {
      fits[b] = {mean_fit.terms, mean_fit.coefficients, 0.0};
      continue;
    }

    if (mode == BootstrapMode::FixedSupport) {
      fits[b] = {mean_fit.terms, detail::weighted_least_squares(support_design, values, weights), 0.0};
    } else {
      Eigen::Index rows = static_cast<Eigen::Index>(weights.sum());
      Matrix rpsi(rows, psi.cols());
      Vector ry(rows);
      Eigen::Index r = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (int c = 0; c < static_cast<int>(weights[i]); ++c, ++r) {
          rpsi.row(r) = psi.row(i);
          ry[r] = values[i];
        }
      }
      fits[b] = detail::select_sparse(rpsi, ry, degrees, basis.max_degree(), true);
    }
  }

  // Union of supports; the mean support comes first in its own order.
  std::vector<std::size_t> union_terms = mean_fit.terms;
  std::map<std::size_t, std::size_t> position;
  for (std::size_t i = 0; i < union_terms.size(); ++i) position[union_terms[i]] = i;
  for (const auto& f : fits) {
    for (std::size_t t : f.terms) {
      if (position.emplace(t, union_terms.size()).second) union_terms.push_back(t);
    }
  }

  BootstrapEnsemble ensemble;
  ensemble.mean_expansion.basis = basis.subset(union_terms);
  ensemble.mean_expansion.coefficients = Vector::Zero(static_cast<Eigen::Index>(union_terms.size()));
  ensemble.mean_expansion.coefficients.head(static_cast<Eigen::Index>(mean_fit.terms.size())) = mean_fit.coefficients;
  ensemble.mean_expansion.loo_error = mean_fit.loo_error;
  ensemble.replication_coefficients =
      Matrix::Zero(static_cast<Eigen::Index>(union_terms.size()), static_cast<Eigen::Index>(replications));
  for (std::size_t b = 0; b < replications; ++b) {
    for (std::size_t i = 0; i < fits[b].terms.size(); ++i) {
      ensemble.replication_coefficients(static_cast<Eigen::Index>(position[fits[b].terms[i]]), static_cast<Eigen::Index>(b)) =
          fits[b].coefficients[static_cast<Eigen::Index>(i)];
    }
  }
  return ensemble;
}

Box compute_envelope(const InputModel& model, const Box& quantile_box, std::size_t n_boundary, Rng& rng) {
  const std::size_t m = model.dim();
  if (quantile_box.dim() != m) throw std::invalid_argument("envelope box dimension mismatch");
  auto clip = [](double u) { return std::clamp(u, kQuantileClip, 1.0 - kQuantileClip); };

  Box env{std::vector<double>(m), std::vector<double>(m)};
  if (model.independent()) {
    for (std::size_t i = 0; i < m; ++i) {
      const auto& marginal = model.marginals()[i];
      env.lo[i] = marginal.from_standard_normal(normal::ppf(clip(quantile_box.lo[i])));
      env.hi[i] = marginal.from_standard_normal(normal::ppf(clip(quantile_box.hi[i])));
    }
    return env;
  }

  if (n_boundary < 2 * m) throw std::invalid_argument("envelope needs at least 2M boundary points");
  std::fill(env.lo.begin(), env.lo.end(), std::numeric_limits<double>::infinity());
  std::fill(env.hi.begin(), env.hi.end(), -std::numeric_limits<double>::infinity());
  std::vector<double> x(m);
  auto absorb = [&](const std::vector<double>& u) {
    model.quantile_to_real(u, x);
    for (std::size_t i = 0; i < m; ++i) {
      env.lo[i] = std::min(env.lo[i], x[i]);
      env.hi[i] = std::max(env.hi[i], x[i]);
    }
  };

  // Face areas: face (i, side) has area prod_{j != i} width_j.
  std::vector<double> cumulative(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double area = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) area *= quantile_box.width(j);
    }
    total += 2.0 * area;
    cumulative[i] = total;
  }
  std::vector<double> u(m);
  for (std::size_t s = 0; s < n_boundary; ++s) {
    const double pick = rng.uniform() * total;
    std::size_t face = static_cast<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    face = std::min(face, m - 1);
    for (std::size_t j = 0; j < m; ++j) u[j] = rng.uniform(quantile_box.lo[j], quantile_box.hi[j]);
    u[face] = rng.uniform() < 0.5 ? quantile_box.lo[face] : quantile_box.hi[face];
    absorb(u);
  }

  // Each real coordinate is monotone in every independent normal variate, so
  // its extremes over the box sit at corners chosen by the Cholesky signs.
  const Eigen::LLT<Eigen::MatrixXd> llt(model.copula().correlation);
  const Eigen::MatrixXd chol = llt.matrixL();
  for (std::size_t i = 0; i < m; ++i) {
    for (int side = 0; side < 2; ++side) {
      for (std::size_t j = 0; j < m; ++j) {
        const double coef = chol(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        const bool take_hi = (coef >= 0.0) == (side == 1);
        u[j] = take_hi ? quantile_box.hi[j] : quantile_box.lo[j];
      }
      absorb(u);
    }
  }
  return env;
}

}  // namespace sser
