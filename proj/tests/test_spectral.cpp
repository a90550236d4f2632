#include <cmath>
#include <set>

#include <Eigen/QR>

#include "doctest.h"
#include "generators.hpp"
#include "sser/basis.hpp"
#include "sser/normal.hpp"
#include "sser/spectral.hpp"

using namespace sser;

namespace {

Vector apply(const PointMatrix& u, double (*f)(const double*)) {
  Vector v(u.rows());
  for (Eigen::Index i = 0; i < u.rows(); ++i) v[i] = f(u.row(i).data());
  return v;
}

// Leave-one-out by explicit refits with a dense QR solve.
double explicit_relative_loo(const Matrix& psi, const Vector& y) {
  const Eigen::Index n = psi.rows();
  double press = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Matrix a(n - 1, psi.cols());
    Vector b(n - 1);
    for (Eigen::Index r = 0, k = 0; r < n; ++r) {
      if (r == i) continue;
      a.row(k) = psi.row(r);
      b[k++] = y[r];
    }
    const Vector c = a.colPivHouseholderQr().solve(b);
    const double e = y[i] - psi.row(i).dot(c);
    press += e * e;
  }
  const double var = (y.array() - y.mean()).square().sum() / static_cast<double>(n - 1);
  return press / static_cast<double>(n) / var;
}

}  // namespace

TEST_CASE("build_basis: multi-index set sizes") {
  CHECK(build_basis(Box::unit(2), 2).size() == 6);
  CHECK(build_basis(Box::unit(3), 2, 1).size() == 7);
  const BasisSpec b = build_basis(Box::unit(1), 0);
  REQUIRE(b.size() == 1);
  std::vector<double> out(1);
  for (double t : {0.0, 0.3, 1.0}) {
    b.evaluate_terms(std::vector<double>{t}, out);
    CHECK(out[0] == 1.0);
  }
}

TEST_CASE("build_basis: empty box and invalid settings are errors") {
  CHECK_THROWS(build_basis(Box{{0.2}, {0.2}}, 2));
  CHECK_THROWS(build_basis(Box::unit(2), -1));
  CHECK_THROWS(build_basis(Box::unit(2), 2, 0));
}

TEST_CASE("property: multi-index sets respect degree and rank limits") {
  gen::for_all(40, 101, [](Rng& rng, std::size_t) {
    const std::size_t dim = gen::integer(rng, 1, 6);
    const int p = static_cast<int>(gen::integer(rng, 0, 5));
    const int rank = static_cast<int>(gen::integer(rng, 1, 3));
    const auto set = total_degree_set(dim, p, rank);
    std::set<MultiIndex> seen(set.begin(), set.end());
    CHECK(seen.size() == set.size());
    CHECK(set.front() == MultiIndex(dim, 0));
    for (const auto& a : set) {
      int total = 0, nonzero = 0;
      for (int d : a) {
        total += d;
        nonzero += d > 0;
      }
      CHECK(total <= p);
      CHECK(nonzero <= rank);
    }
    if (rank >= static_cast<int>(dim)) {
      // C(dim + p, p)
      double c = 1;
      for (int k = 1; k <= p; ++k) c = c * static_cast<double>(dim + k) / k;
      CHECK(set.size() == static_cast<std::size_t>(std::lround(c)));
    }
  });
}

TEST_CASE("property: Legendre basis is orthonormal on its box") {
  gen::for_all(3, 102, [](Rng& rng, std::size_t) {
    const Box box = gen::box(rng, 2, 0.1);
    const BasisSpec basis = build_basis(box, 3);
    const PointMatrix u = sample_box(box.lo, box.hi, 100000, rng);
    const Matrix psi = basis.design_matrix(u);
    const Matrix gram = psi.transpose() * psi / static_cast<double>(u.rows());
    const Matrix err = gram - Matrix::Identity(basis.size(), basis.size());
    CHECK(err.cwiseAbs().maxCoeff() < 0.02);
  });
}

TEST_CASE("fit: constant values give a constant expansion") {
  Rng rng(1);
  const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 8, rng);
  const Vector y = Vector::Constant(8, 3.7);
  const PceExpansion e = fit_sparse_expansion(u, y, build_basis(Box::unit(2), 3));
  CHECK(e.coefficients[0] == gen::rel(3.7).epsilon(1e-12));
  for (Eigen::Index j = 1; j < e.coefficients.size(); ++j) CHECK(std::abs(e.coefficients[j]) < 1e-12);
  CHECK(e.loo_error < 1e-12);
}

TEST_CASE("fit: exactly representable linear function") {
  Rng rng(2);
  const PointMatrix u = sample_box(std::vector<double>{0}, std::vector<double>{1}, 20, rng);
  const PceExpansion e = fit_sparse_expansion(u, u.col(0), build_basis(Box::unit(1), 2));
  const PointMatrix t = sample_box(std::vector<double>{0}, std::vector<double>{1}, 100, rng);
  CHECK((evaluate_expansion(e, t) - t.col(0)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fit: sin(2 pi u) against a dense least-squares oracle") {
  Rng rng(3);
  const PointMatrix u = sample_box(std::vector<double>{0}, std::vector<double>{1}, 40, rng);
  const Vector y = apply(u, [](const double* p) { return std::sin(2 * M_PI * p[0]); });
  const BasisSpec basis = build_basis(Box::unit(1), 6);
  const PceExpansion e = fit_sparse_expansion(u, y, basis);
  const double oracle = explicit_relative_loo(basis.design_matrix(u), y);
  CHECK(e.loo_error <= 1e-2);
  CHECK(e.loo_error <= 2 * oracle);
}

TEST_CASE("leverage LOO matches explicit refits") {
  Rng rng(4);
  const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 25, rng);
  const Vector y = apply(u, [](const double* p) { return std::exp(p[0]) * std::cos(3 * p[1]); });
  const Matrix psi = build_basis(Box::unit(2), 2).design_matrix(u);
  const Vector c = psi.colPivHouseholderQr().solve(y);
  CHECK(detail::relative_loo(psi, y, c) == gen::rel(explicit_relative_loo(psi, y)).epsilon(1e-8));
}

TEST_CASE("fit: non-finite values are rejected") {
  Rng rng(5);
  const PointMatrix u = sample_box(std::vector<double>{0}, std::vector<double>{1}, 10, rng);
  Vector y = u.col(0);
  y[3] = std::nan("");
  CHECK_THROWS_AS(fit_sparse_expansion(u, y, build_basis(Box::unit(1), 2)), std::invalid_argument);
}

TEST_CASE("property: degree adaptivity never loses to the constant fit") {
  gen::for_all(30, 103, [](Rng& rng, std::size_t) {
    const std::size_t dim = gen::integer(rng, 1, 3), n = gen::integer(rng, 8, 30);
    const Box box = gen::box(rng, dim);
    const PointMatrix u = sample_box(box.lo, box.hi, n, rng);
    Vector y(n);
    const double a = gen::uniform(rng, -2, 2), b = gen::uniform(rng, 1, 8);
    for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(b * u(i, 0)) + a * u.row(i).sum() + 0.1 * rng.uniform();
    const BasisSpec basis = build_basis(box, 4);
    const PceExpansion e = fit_sparse_expansion(u, y, basis);
    const Matrix ones = Matrix::Ones(n, 1);
    CHECK(e.loo_error <= explicit_relative_loo(ones, y) * (1 + 1e-9));
  });
}

TEST_CASE("property: sparse coefficients are the least-squares solution on their support") {
  gen::for_all(30, 104, [](Rng& rng, std::size_t) {
    const std::size_t dim = gen::integer(rng, 1, 3), n = gen::integer(rng, 15, 40);
    const Box box = gen::box(rng, dim);
    const PointMatrix u = sample_box(box.lo, box.hi, n, rng);
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(u(i, 0)) - u.row(i).squaredNorm() + 0.01 * rng.uniform();
    const PceExpansion e = fit_sparse_expansion(u, y, build_basis(box, 3));
    REQUIRE(e.basis.size() <= n);
    const Matrix psi = e.basis.design_matrix(u);
    const Vector dense = psi.colPivHouseholderQr().solve(y);
    const double sparse_res = (psi * e.coefficients - y).norm(), dense_res = (psi * dense - y).norm();
    CHECK(sparse_res <= dense_res * (1 + 1e-6) + 1e-12);
  });
}

TEST_CASE("weighted least squares: near-duplicate columns give the minimum-norm solution") {
  // Rank 3 at machine precision, rank 2 at the solver threshold.
  const Eigen::Index n = 20;
  Matrix a(n, 3);
  Vector y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    a(i, 0) = 1.0;
    a(i, 1) = t;
    a(i, 2) = t * (1.0 + 1e-14 * static_cast<double>(i % 3));
    y[i] = 1.0 + 2.0 * t;
    w[i] = 1.0 + static_cast<double>(i % 2);
  }
  const Vector c = detail::weighted_least_squares(a, y, w);
  REQUIRE(c.allFinite());
  CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(c[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(c[2] == doctest::Approx(1.0).epsilon(1e-6));
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> scratch(64, 1e300);
    CHECK(detail::weighted_least_squares(a, y, w) == c);
  }
}

TEST_CASE("evaluate_expansion is linear in the coefficients") {
  Rng rng(6);
  const BasisSpec basis = build_basis(Box{{0.1, 0.2}, {0.6, 0.9}}, 3);
  PceExpansion a{basis, Vector::Random(basis.size()), 0}, b{basis, Vector::Random(basis.size()), 0};
  PceExpansion s{basis, a.coefficients + b.coefficients, 0};
  const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 50, rng);
  CHECK((evaluate_expansion(s, u) - evaluate_expansion(a, u) - evaluate_expansion(b, u)).cwiseAbs().maxCoeff() < 1e-12);
  PceExpansion c{basis, Vector::Zero(basis.size()), 0};
  c.coefficients[0] = 2.5;
  CHECK((evaluate_expansion(c, u).array() - 2.5).abs().maxCoeff() < 1e-14);
}

TEST_CASE("bootstrap: noiseless linear data gives identical replications") {
  Rng rng(7);
  const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 15, rng);
  const Vector y = apply(u, [](const double* p) { return 1 + 2 * p[0] - p[1]; });
  const BootstrapEnsemble ens = bootstrap_fit(u, y, build_basis(Box::unit(2), 2), 50, rng);
  REQUIRE(ens.replications() == 50);
  for (std::size_t b = 0; b < 50; ++b) {
    CHECK((ens.replication_coefficients.col(b) - ens.mean_expansion.coefficients).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("bootstrap: fewer than two replications is an error") {
  Rng rng(8);
  const PointMatrix u = sample_box(std::vector<double>{0}, std::vector<double>{1}, 10, rng);
  CHECK_THROWS_AS(bootstrap_fit(u, u.col(0), build_basis(Box::unit(1), 1), 1, rng), std::invalid_argument);
}

TEST_CASE("bootstrap: spread matches the OLS standard error") {
  Rng rng(9);
  const std::size_t n = 10;
  const double sigma = 0.1;
  const PointMatrix u = sample_box(std::vector<double>{0}, std::vector<double>{1}, n, rng);
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::sqrt(-2 * std::log(rng.uniform())), t = 2 * M_PI * rng.uniform();
    y[i] = u(i, 0) + sigma * r * std::cos(t);
  }
  const BootstrapEnsemble ens = bootstrap_fit(u, y, build_basis(Box::unit(1), 1), 100, rng);
  PointMatrix mid(1, 1);
  mid(0, 0) = 0.5;
  std::vector<double> pred;
  for (std::size_t b = 0; b < 100; ++b) pred.push_back(evaluate_expansion(ens.replication(b), mid)[0]);
  double m = 0, v = 0;
  for (double p : pred) m += p / 100;
  for (double p : pred) v += (p - m) * (p - m) / 99;
  const double ubar = u.col(0).mean(), sxx = (u.col(0).array() - ubar).square().sum();
  const double se = sigma * std::sqrt(1.0 / n + (0.5 - ubar) * (0.5 - ubar) / sxx);
  CHECK(std::sqrt(v) < 5 * se);
  CHECK(std::sqrt(v) > se / 5);
}

TEST_CASE("property: bootstrap mean is independent of B and the stream") {
  gen::for_all(10, 105, [](Rng& rng, std::size_t) {
    const Box box = gen::box(rng, 2);
    const PointMatrix u = sample_box(box.lo, box.hi, 20, rng);
    Vector y(20);
    for (int i = 0; i < 20; ++i) y[i] = std::cos(4 * u(i, 0)) * u(i, 1);
    const BasisSpec basis = build_basis(box, 3);
    Rng a(1), b(2);
    const auto e1 = bootstrap_fit(u, y, basis, 10, a);
    const auto e2 = bootstrap_fit(u, y, basis, 40, b);
    CHECK(e1.mean_expansion.coefficients == e2.mean_expansion.coefficients);
    CHECK(e1.mean_expansion.basis.multi_indices() == e2.mean_expansion.basis.multi_indices());
    // Full reselection stores the candidate basis but predicts the same mean.
    const auto e3 = bootstrap_fit(u, y, basis, 10, b, BootstrapMode::FullReselection);
    const PointMatrix t = sample_box(box.lo, box.hi, 20, rng);
    CHECK((evaluate_expansion(e1.mean_expansion, t) - evaluate_expansion(e3.mean_expansion, t)).cwiseAbs().maxCoeff() <
          1e-10);
  });
}

TEST_CASE("envelope: independent inputs give the exact quantile range") {
  const InputModel model({Marginal::gaussian(0, 1), Marginal::lognormal(2, 1)});
  const Box q{{0.1, 0.3}, {0.4, 0.95}};
  Rng rng(10);
  const Box env = compute_envelope(model, q, 100, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(env.lo[i] == gen::rel(model.marginals()[i].ppf(q.lo[i])).epsilon(1e-12));
    CHECK(env.hi[i] == gen::rel(model.marginals()[i].ppf(q.hi[i])).epsilon(1e-12));
  }
}

TEST_CASE("envelope: unit box with uniform marginals") {
  const InputModel model({Marginal::uniform(0, 1), Marginal::uniform(0, 1)});
  Rng rng(11);
  const Box env = compute_envelope(model, Box::unit(2), 100, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(env.lo[i]) < 1e-10);
    CHECK(std::abs(env.hi[i] - 1.0) < 1e-10);
  }
}

TEST_CASE("envelope: Gaussian copula contains the corner images") {
  Eigen::MatrixXd r(2, 2);
  r << 1, 0.9, 0.9, 1;
  const InputModel model({Marginal::gaussian(0, 1), Marginal::gaussian(0, 1)}, CopulaModel::gaussian(r));
  const Box q{{0.4, 0.4}, {0.6, 0.6}};
  Rng rng(12);
  const Box env = compute_envelope(model, q, 10000, rng);
  std::vector<double> x(2);
  for (double a : {0.4, 0.6})
    for (double b : {0.4, 0.6}) {
      model.quantile_to_real(std::vector<double>{a, b}, x);
      for (std::size_t i = 0; i < 2; ++i) {
        CHECK(x[i] >= env.lo[i]);
        CHECK(x[i] <= env.hi[i]);
      }
    }
}

TEST_CASE("property: envelope contains at least 99% of interior images") {
  gen::for_all(10, 106, [](Rng& rng, std::size_t) {
    const std::size_t dim = gen::integer(rng, 2, 4);
    const InputModel model = gen::input_model(rng, dim, true);
    const Box q = gen::box(rng, dim, 0.1);
    const Box env = compute_envelope(model, q, 2000, rng);
    const PointMatrix x = model.quantile_to_real(sample_box(q.lo, q.hi, 10000, rng));
    std::size_t inside = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) inside += env.contains(std::span<const double>(x.row(r).data(), dim));
    CHECK(inside >= 9900);
  });
}
