#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"
#include "generators.hpp"
#include "sser/benchmarks.hpp"

using namespace sser;

namespace {

std::array<double, 2> pt(double a, double b) { return {a, b}; }

double fb(double a, double b) {
  const auto x = pt(a, b);
  return four_branch(x);
}

double pl(double a, double b) {
  const auto x = pt(a, b);
  return piecewise_linear(x);
}

// Parameters of the 21 marginals, used as nominal inputs.
std::vector<double> nominal_inputs() {
  return {133.0,  89.0,   71.2,   2.17e7, 2.38e7, 8.13e-3, 0.0115, 0.0214, 0.026, 0.0108, 0.0141,
          0.0233, 0.026,  0.313,  0.372,  0.506,  0.558,   0.253,  0.291,  0.373, 0.419};
}

// Dense direct-stiffness assembly written independently of the banded solver.
double dense_top_displacement(const FrameModel& m, const std::array<SectionProperties, 8>& s,
                              const std::array<double, 3>& p) {
  const auto nn = static_cast<Eigen::Index>(m.nodes.size());
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(3 * nn, 3 * nn);
  for (std::size_t e = 0; e < m.elements.size(); ++e) {
    const auto [a, b] = m.elements[e];
    const auto& sec = s[static_cast<std::size_t>(m.element_type[e])];
    const double dx = m.nodes[b][0] - m.nodes[a][0], dy = m.nodes[b][1] - m.nodes[a][1];
    const double l = std::hypot(dx, dy), c = dx / l, sn = dy / l;
    Eigen::Matrix<double, 6, 6> kl = Eigen::Matrix<double, 6, 6>::Zero();
    const double ea = sec.E * sec.A / l, ei = sec.E * sec.I;
    kl(0, 0) = kl(3, 3) = ea;
    kl(0, 3) = kl(3, 0) = -ea;
    const Eigen::Index v[4] = {1, 2, 4, 5};
    const double kb[4][4] = {{12 / (l * l * l), 6 / (l * l), -12 / (l * l * l), 6 / (l * l)},
                             {6 / (l * l), 4 / l, -6 / (l * l), 2 / l},
                             {-12 / (l * l * l), -6 / (l * l), 12 / (l * l * l), -6 / (l * l)},
                             {6 / (l * l), 2 / l, -6 / (l * l), 4 / l}};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) kl(v[i], v[j]) = ei * kb[i][j];
    Eigen::Matrix3d r;
    r << c, sn, 0, -sn, c, 0, 0, 0, 1;
    Eigen::Matrix<double, 6, 6> t = Eigen::Matrix<double, 6, 6>::Zero();
    t.block<3, 3>(0, 0) = r;
    t.block<3, 3>(3, 3) = r;
    const Eigen::Matrix<double, 6, 6> kg = t.transpose() * kl * t;
    const Eigen::Index idx[6] = {3 * a, 3 * a + 1, 3 * a + 2, 3 * b, 3 * b + 1, 3 * b + 2};
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) k(idx[i], idx[j]) += kg(i, j);
  }
  Eigen::VectorXd f = Eigen::VectorXd::Zero(3 * nn);
  for (const auto& [node, which] : m.loads) f[3 * node] += p[static_cast<std::size_t>(which)];
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < nn; ++i)
    if (!m.fixed[static_cast<std::size_t>(i)])
      for (int c = 0; c < 3; ++c) free.push_back(3 * i + c);
  const auto nf = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd kff(nf, nf);
  Eigen::VectorXd ff(nf);
  for (Eigen::Index i = 0; i < nf; ++i) {
    ff[i] = f[free[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < nf; ++j) kff(i, j) = k(free[static_cast<std::size_t>(i)], free[static_cast<std::size_t>(j)]);
  }
  CHECK((kff - kff.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * kff.cwiseAbs().maxCoeff());
  Eigen::LLT<Eigen::MatrixXd> llt(kff);
  REQUIRE(llt.info() == Eigen::Success);
  const Eigen::VectorXd u = llt.solve(ff);
  return u[3 * m.top_node - 3 * static_cast<Eigen::Index>(std::count(m.fixed.begin(), m.fixed.begin() + m.top_node, true))];
}

double binomial_sigma(double p, double n) { return std::sqrt(p * (1 - p) / n); }

double mcs(const BenchmarkProblem& b, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t fails = 0;
  for (std::size_t done = 0; done < n; done += 100000) {
    const std::size_t chunk = std::min<std::size_t>(100000, n - done);
    const auto g = b.lsf(b.model->sample(chunk, rng));
    for (double v : g) fails += v <= 0.0;
  }
  return static_cast<double>(fails) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("four_branch: origin") {
  CHECK(fb(0, 0) == gen::rel(3.0));
  CHECK(std::min({3.0, 3.0, 6 / std::sqrt(2.0), 6 / std::sqrt(2.0)}) == 3.0);
}

TEST_CASE("four_branch: root on the diagonal") {
  // Bisection on t -> g(t, t); only the first branch changes with t there.
  double lo = 0, hi = 5;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (fb(mid, mid) > 0 ? lo : hi) = mid;
  }
  const double root = 0.5 * (lo + hi);
  CHECK(root == gen::rel(3 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(std::abs(fb(root, root)) < 1e-12);
  CHECK(fb(-root, -root) == gen::rel(0.0).scale(1));
}

TEST_CASE("property: four_branch is symmetric") {
  gen::for_all(500, 701, [](Rng& rng, std::size_t) {
    const double a = gen::uniform(rng, -6, 6), b = gen::uniform(rng, -6, 6);
    CHECK(fb(a, b) == fb(b, a));
  });
}

TEST_CASE("piecewise_linear: values") {
  CHECK(pl(0, 0) == gen::rel(0.85));
  CHECK(pl(4, 0) == 0.0);
  CHECK(pl(0, 2.3) == gen::rel(0.27));
  CHECK(pl(0, 5) == 0.0);
}

TEST_CASE("property: piecewise_linear is continuous across both breaks") {
  gen::for_all(200, 702, [](Rng& rng, std::size_t) {
    const double other = gen::uniform(rng, -3, 1.5);
    CHECK(std::abs(pl(3.5 - 1e-12, other) - pl(3.5 + 1e-12, other)) < 1e-9);
    CHECK(std::abs(pl(other, 2.0 - 1e-12) - pl(other, 2.0 + 1e-12)) < 1e-9);
  });
  CHECK(0.85 - 0.35 == gen::rel(4 - 3.5));
  CHECK(0.5 - 0.2 == gen::rel(2.3 - 2));
}

TEST_CASE("frame: two-element cantilever against the closed form") {
  FrameModel m;
  const double l = 3.0, p = 10.0;
  m.nodes = {{0, 0}, {0, l / 2}, {0, l}};
  m.elements = {{0, 1}, {1, 2}};
  m.element_type = {ElementType::C1, ElementType::C1};
  m.fixed = {true, false, false};
  m.loads = {{2, 0}};
  m.top_node = 2;
  std::array<SectionProperties, 8> s;
  s.fill({2e8, 1e-4, 1e-2});
  const double exact = p * l * l * l / (3 * 2e8 * 1e-4);
  CHECK(m.top_displacement(s, {p, 0, 0}) == gen::rel(exact).epsilon(1e-12));
  CHECK(dense_top_displacement(m, s, {p, 0, 0}) == gen::rel(exact).epsilon(1e-12));
}

TEST_CASE("frame: standard layout") {
  const FrameModel m = FrameModel::build(FrameGeometry::standard());
  CHECK(m.nodes.size() == 24);
  CHECK(m.elements.size() == 35);
  CHECK(std::count(m.fixed.begin(), m.fixed.end(), true) == 4);
  CHECK(m.loads.size() == 5);
  CHECK(m.nodes[static_cast<std::size_t>(m.top_node)][0] == 0.0);
  CHECK(m.nodes[static_cast<std::size_t>(m.top_node)][1] == gen::rel(64 * 0.3048));
}

TEST_CASE("frame: banded solver matches a dense assembly") {
  const FrameModel m = FrameModel::build(FrameGeometry::standard());
  const auto x = nominal_inputs();
  const auto s = frame_sections(x);
  const std::array<double, 3> p{x[0], x[1], x[2]};
  CHECK(m.top_displacement(s, p) == gen::rel(dense_top_displacement(m, s, p)).epsilon(1e-10));
}

TEST_CASE("frame: regression baseline at nominal inputs") {
  const auto x = nominal_inputs();
  CHECK(frame_top_displacement(x) == gen::rel(0.0132705470041746).epsilon(1e-10));
  CHECK(frame_lsf(x) == gen::rel(kFrameThreshold - frame_top_displacement(x)));
}

TEST_CASE("frame: linearity") {
  const auto x = nominal_inputs();
  auto y = x;
  y[3] *= 2;
  y[4] *= 2;
  CHECK(frame_top_displacement(y) == gen::rel(0.5 * frame_top_displacement(x)).epsilon(1e-12));
  auto z = x;
  z[0] = z[1] = z[2] = 0;
  CHECK(frame_top_displacement(z) == 0.0);
  auto w = x;
  for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(i)] *= 3;
  CHECK(frame_top_displacement(w) == gen::rel(3 * frame_top_displacement(x)).epsilon(1e-12));
}

TEST_CASE("frame: subdividing members leaves the displacement unchanged") {
  FrameGeometry g = FrameGeometry::standard();
  g.subdivisions = 2;
  const FrameModel fine = FrameModel::build(g);
  const auto x = nominal_inputs();
  const double coarse = frame_top_displacement(x);
  CHECK(std::abs(frame_top_displacement(x, fine) - coarse) < 1e-10 * coarse);
}

TEST_CASE("property: frame reactions balance the loads") {
  const FrameModel m = FrameModel::build(FrameGeometry::standard());
  const InputModel model = frame_input_model();
  Rng rng(703);
  const PointMatrix xs = model.sample(20, rng);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const std::span<const double> x(xs.row(i).data(), 21);
    const auto s = frame_sections(x);
    const std::array<double, 3> p{x[0], x[1], x[2]};
    const auto r = m.base_reactions(s, p);
    double fx = 0, moment = 0;
    for (const auto& [node, which] : m.loads) {
      fx += p[static_cast<std::size_t>(which)];
      moment -= m.nodes[static_cast<std::size_t>(node)][1] * p[static_cast<std::size_t>(which)];
    }
    CHECK(std::abs(r[0] + fx) <= 1e-8 * fx);
    CHECK(std::abs(r[1]) <= 1e-8 * fx);
    CHECK(std::abs(r[2] + moment) <= 1e-8 * std::abs(moment));
  }
}

TEST_CASE("frame: nonpositive section data is rejected") {
  auto x = nominal_inputs();
  x[9] = 0.0;
  CHECK_THROWS_AS(frame_top_displacement(x), std::domain_error);
  CHECK_THROWS(frame_top_displacement(std::vector<double>(20, 1.0)));
}

TEST_CASE("frame input model: correlation structure") {
  const InputModel m = frame_input_model();
  const Eigen::MatrixXd& r = m.copula().correlation;
  auto at = [&](int i, int j) { return r(i - 1, j - 1); };  // variables numbered from 1
  CHECK(at(4, 5) == 0.9);
  CHECK(at(14, 6) == 0.95);
  CHECK(at(21, 13) == 0.95);
  CHECK(at(14, 7) == 0.13);
  CHECK(at(6, 7) == 0.13);
  CHECK(at(15, 16) == 0.13);
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 21; ++j)
      if (i != j) CHECK(at(i, j) == 0.0);
  CHECK(at(4, 6) == 0.0);
  CHECK((r - r.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Eigen::LLT<Eigen::MatrixXd>(r).info() == Eigen::Success);
  CHECK(m.dim() == 21);
}

TEST_CASE("registry") {
  CHECK(benchmark_ids().size() == 3);
  for (const auto& id : benchmark_ids()) {
    const BenchmarkProblem b = make_benchmark(id);
    CHECK(b.id == id);
    CHECK(!b.references.empty());
    CHECK_NOTHROW(b.recommended.validate());
  }
  CHECK_THROWS_AS(make_benchmark("plate"), std::invalid_argument);
  CHECK(make_benchmark("four-branch").recommended.n_ref == 15);
  CHECK(make_benchmark("piecewise-linear").recommended.p_max == 6);
  CHECK(make_benchmark("piecewise-linear").recommended.space == ExpansionSpace::RealEnvelope);
  CHECK(make_benchmark("frame").recommended.space == ExpansionSpace::QuantileSpace);
}

TEST_CASE("four-branch MCS matches the reference") {
  const BenchmarkProblem b = make_benchmark("four-branch");
  const double ref = b.references.front().pf;
  const double n = 1e6;
  CHECK(std::abs(mcs(b, 1000000, 704) - ref) < 3 * binomial_sigma(ref, n));
}

TEST_CASE("piecewise-linear MCS matches the reference") {
  const BenchmarkProblem b = make_benchmark("piecewise-linear");
  const double ref = b.references.front().pf;
  const double n = 4e6;
  CHECK(std::abs(mcs(b, 4000000, 705) - ref) < 3 * binomial_sigma(ref, n));
}
