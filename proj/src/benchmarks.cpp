#include "sser/benchmarks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sser {

double four_branch(std::span<const double> x) {
  const double x1 = x[0], x2 = x[1];
  const double d = x1 - x2;
  const double s = (x1 + x2) / std::sqrt(2.0);
  const double c = 6.0 / std::sqrt(2.0);
  return std::min({3.0 + 0.1 * d * d - s, 3.0 + 0.1 * d * d + s, d + c, -d + c});
}

double piecewise_linear(std::span<const double> x) {
  const double x1 = x[0], x2 = x[1];
  const double g1 = x1 > 3.5 ? 4.0 - x1 : 0.85 - 0.1 * x1;
  const double g2 = x2 > 2.0 ? 0.5 - 0.1 * x2 : 2.3 - x2;
  return std::min(g1, g2);
}

// ---------------------------------------------------------------------------
// Frame

namespace {

constexpr double kFoot = 0.3048;

int type_index(ElementType t) { return static_cast<int>(t); }

// Lower-band storage of a symmetric positive definite matrix: a(i, i - j) for
// 0 <= i - j <= bw.
class BandMatrix {
public:
  BandMatrix(int n, int bw) : n_(n), bw_(bw), data_(static_cast<std::size_t>(n) * (bw + 1), 0.0) {}

  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * (bw_ + 1) + (i - j)]; }

  void add(int i, int j, double v) {
    if (i < j) std::swap(i, j);
    at(i, j) += v;
  }

  // In-place Cholesky followed by forward/back substitution.
  std::vector<double> solve(std::vector<double> b) {
    for (int j = 0; j < n_; ++j) {
      double d = at(j, j);
      for (int k = std::max(0, j - bw_); k < j; ++k) d -= at(j, k) * at(j, k);
      if (!(d > 0.0)) throw std::domain_error("frame stiffness matrix is singular (pivot " + std::to_string(j) + ")");
      const double ljj = std::sqrt(d);
      at(j, j) = ljj;
      for (int i = j + 1; i <= std::min(n_ - 1, j + bw_); ++i) {
        double v = at(i, j);
        for (int k = std::max(0, i - bw_); k < j; ++k) v -= at(i, k) * at(j, k);
        at(i, j) = v / ljj;
      }
    }
    for (int i = 0; i < n_; ++i) {
      double v = b[i];
      for (int k = std::max(0, i - bw_); k < i; ++k) v -= at(i, k) * b[k];
      b[i] = v / at(i, i);
    }
    for (int i = n_ - 1; i >= 0; --i) {
      double v = b[i];
      for (int k = i + 1; k <= std::min(n_ - 1, i + bw_); ++k) v -= at(k, i) * b[k];
      b[i] = v / at(i, i);
    }
    return b;
  }

private:
  int n_;
  int bw_;
  std::vector<double> data_;
};

// 6x6 global stiffness of a plane Euler-Bernoulli frame element.
std::array<std::array<double, 6>, 6> element_stiffness(const std::array<double, 2>& a, const std::array<double, 2>& b,
                                                        const SectionProperties& s) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len = std::hypot(dx, dy);
  const double c = dx / len, sn = dy / len;
  const double ea = s.E * s.A / len;
  const double ei = s.E * s.I;
  const double k1 = 12.0 * ei / (len * len * len), k2 = 6.0 * ei / (len * len), k3 = 4.0 * ei / len,
               k4 = 2.0 * ei / len;
  const double local[6][6] = {
      {ea, 0, 0, -ea, 0, 0},     {0, k1, k2, 0, -k1, k2},  {0, k2, k3, 0, -k2, k4},
      {-ea, 0, 0, ea, 0, 0},     {0, -k1, -k2, 0, k1, -k2}, {0, k2, k4, 0, -k2, k3},
  };
  const double t[6][6] = {
      {c, sn, 0, 0, 0, 0}, {-sn, c, 0, 0, 0, 0}, {0, 0, 1, 0, 0, 0},
      {0, 0, 0, c, sn, 0}, {0, 0, 0, -sn, c, 0}, {0, 0, 0, 0, 0, 1},
  };
  std::array<std::array<double, 6>, 6> tmp{}, out{};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      for (int k = 0; k < 6; ++k) tmp[i][j] += local[i][k] * t[k][j];
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      for (int k = 0; k < 6; ++k) out[i][j] += t[k][i] * tmp[k][j];
  return out;
}

}  // namespace

FrameGeometry FrameGeometry::standard() {
  using T = ElementType;
  FrameGeometry g;
  g.bay_widths = {25.0 * kFoot, 30.0 * kFoot, 25.0 * kFoot};
  g.story_heights = {16.0 * kFoot, 12.0 * kFoot, 12.0 * kFoot, 12.0 * kFoot, 12.0 * kFoot};
  g.columns = {{T::C3, T::C4}, {T::C3, T::C4}, {T::C1, T::C2}, {T::C1, T::C2}, {T::C1, T::C2}};
  g.beams = {{T::B3, T::B4}, {T::B3, T::B4}, {T::B3, T::B4}, {T::B3, T::B4}, {T::B1, T::B2}};
  g.floor_load = {2, 2, 2, 1, 0};
  return g;
}

FrameModel FrameModel::build(const FrameGeometry& g) {
  const std::size_t bays = g.bay_widths.size(), stories = g.story_heights.size();
  if (bays == 0 || stories == 0) throw std::invalid_argument("frame needs at least one bay and one story");
  if (g.columns.size() != stories || g.beams.size() != stories || g.floor_load.size() != stories) {
    throw std::invalid_argument("frame layout tables must have one row per story");
  }
  if (g.subdivisions < 1) throw std::invalid_argument("frame subdivisions must be >= 1");

  std::vector<double> xs{0.0}, ys{0.0};
  for (double w : g.bay_widths) xs.push_back(xs.back() + w);
  for (double h : g.story_heights) ys.push_back(ys.back() + h);

  // Create nodes keyed by coordinates, then renumber by (y, x) to keep the band narrow.
  std::map<std::pair<double, double>, int> index;  // (y, x) -> provisional id
  auto node_at = [&](double x, double y) {
    auto [it, inserted] = index.emplace(std::make_pair(y, x), static_cast<int>(index.size()));
    return it->second;
  };
  struct Raw {
    int a, b;
    ElementType type;
  };
  std::vector<Raw> raw;
  const int sub = g.subdivisions;
  auto member = [&](double x0, double y0, double x1, double y1, ElementType t) {
    int prev = node_at(x0, y0);
    for (int s = 1; s <= sub; ++s) {
      const double f = static_cast<double>(s) / sub;
      const int next = s == sub ? node_at(x1, y1) : node_at(x0 + f * (x1 - x0), y0 + f * (y1 - y0));
      raw.push_back({prev, next, t});
      prev = next;
    }
  };
  for (std::size_t st = 0; st < stories; ++st) {
    for (std::size_t c = 0; c <= bays; ++c) {
      const bool exterior = c == 0 || c == bays;
      member(xs[c], ys[st], xs[c], ys[st + 1], g.columns[st][exterior ? 0 : 1]);
    }
    for (std::size_t b = 0; b < bays; ++b) {
      const bool exterior = b == 0 || b + 1 == bays;
      member(xs[b], ys[st + 1], xs[b + 1], ys[st + 1], g.beams[st][exterior ? 0 : 1]);
    }
  }

  FrameModel m;
  std::vector<int> renumber(index.size());
  m.nodes.resize(index.size());
  int next_id = 0;
  for (const auto& [yx, id] : index) {  // map order is (y, x) ascending
    renumber[static_cast<std::size_t>(id)] = next_id;
    m.nodes[static_cast<std::size_t>(next_id)] = {yx.second, yx.first};
    ++next_id;
  }
  for (const auto& r : raw) {
    m.elements.push_back({renumber[static_cast<std::size_t>(r.a)], renumber[static_cast<std::size_t>(r.b)]});
    m.element_type.push_back(r.type);
  }
  m.fixed.assign(m.nodes.size(), false);
  for (std::size_t i = 0; i < m.nodes.size(); ++i) m.fixed[i] = m.nodes[i][1] == 0.0;
  for (std::size_t st = 0; st < stories; ++st) {
    if (g.floor_load[st] < 0) continue;
    if (g.floor_load[st] > 2) throw std::invalid_argument("frame load index must be 0, 1 or 2");
    m.loads.emplace_back(renumber[static_cast<std::size_t>(index.at({ys[st + 1], 0.0}))], g.floor_load[st]);
  }
  m.top_node = renumber[static_cast<std::size_t>(index.at({ys.back(), 0.0}))];
  return m;
}

std::vector<double> FrameModel::solve(const std::array<SectionProperties, 8>& sections,
                                      const std::array<double, 3>& load_values) const {
  std::vector<int> dof(nodes.size(), -1);
  int n = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!fixed[i]) {
      dof[i] = n;
      n += 3;
    }
  }
  int bw = 2;
  for (const auto& e : elements) {
    if (dof[e[0]] >= 0 && dof[e[1]] >= 0) bw = std::max(bw, std::abs(dof[e[0]] - dof[e[1]]) + 2);
  }
  BandMatrix k(n, bw);
  for (std::size_t e = 0; e < elements.size(); ++e) {
    const auto& s = sections[static_cast<std::size_t>(type_index(element_type[e]))];
    if (!(s.E > 0.0 && s.A > 0.0 && s.I > 0.0)) throw std::domain_error("frame section properties must be positive");
    const auto ke = element_stiffness(nodes[elements[e][0]], nodes[elements[e][1]], s);
    int map[6];
    for (int end = 0; end < 2; ++end) {
      const int base = dof[elements[e][end]];
      for (int c = 0; c < 3; ++c) map[3 * end + c] = base < 0 ? -1 : base + c;
    }
    for (int i = 0; i < 6; ++i) {
      if (map[i] < 0) continue;
      for (int j = 0; j <= i; ++j) {
        if (map[j] < 0) continue;
        k.add(map[i], map[j], ke[i][j]);
      }
    }
  }
  std::vector<double> f(static_cast<std::size_t>(n), 0.0);
  for (const auto& [node, which] : loads) {
    if (dof[node] >= 0) f[static_cast<std::size_t>(dof[node])] += load_values[static_cast<std::size_t>(which)];
  }
  return k.solve(std::move(f));
}

double FrameModel::top_displacement(const std::array<SectionProperties, 8>& sections,
                                    const std::array<double, 3>& load_values) const {
  const auto u = solve(sections, load_values);
  int d = 0;
  for (int i = 0; i < top_node; ++i) d += fixed[i] ? 0 : 3;
  return u[static_cast<std::size_t>(d)];
}

std::array<double, 3> FrameModel::base_reactions(const std::array<SectionProperties, 8>& sections,
                                                 const std::array<double, 3>& load_values) const {
  const auto u = solve(sections, load_values);
  std::vector<int> dof(nodes.size(), -1);
  int n = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!fixed[i]) {
      dof[i] = n;
      n += 3;
    }
  }
  std::array<double, 3> r{0.0, 0.0, 0.0};
  for (std::size_t e = 0; e < elements.size(); ++e) {
    const auto ke = element_stiffness(nodes[elements[e][0]], nodes[elements[e][1]],
                                      sections[static_cast<std::size_t>(type_index(element_type[e]))]);
    double ue[6];
    for (int end = 0; end < 2; ++end) {
      const int base = dof[elements[e][end]];
      for (int c = 0; c < 3; ++c) ue[3 * end + c] = base < 0 ? 0.0 : u[static_cast<std::size_t>(base + c)];
    }
    for (int end = 0; end < 2; ++end) {
      const int node = elements[e][end];
      if (!fixed[node]) continue;
      double fe[3] = {0.0, 0.0, 0.0};
      for (int c = 0; c < 3; ++c)
        for (int j = 0; j < 6; ++j) fe[c] += ke[3 * end + c][j] * ue[j];
      r[0] += fe[0];
      r[1] += fe[1];
      r[2] += fe[2] + nodes[node][0] * fe[1] - nodes[node][1] * fe[0];
    }
  }
  return r;
}

std::array<SectionProperties, 8> frame_sections(std::span<const double> x) {
  if (x.size() != 21) throw std::invalid_argument("frame model expects 21 inputs");
  const double e_beam = x[3], e_col = x[4];
  std::array<SectionProperties, 8> s;
  for (int b = 0; b < 4; ++b) s[static_cast<std::size_t>(b)] = {e_beam, x[static_cast<std::size_t>(9 + b)], x[static_cast<std::size_t>(17 + b)]};
  for (int c = 0; c < 4; ++c) s[static_cast<std::size_t>(4 + c)] = {e_col, x[static_cast<std::size_t>(5 + c)], x[static_cast<std::size_t>(13 + c)]};
  return s;
}

double frame_top_displacement(std::span<const double> x, const FrameModel& model) {
  return model.top_displacement(frame_sections(x), {x[0], x[1], x[2]});
}

double frame_top_displacement(std::span<const double> x) {
  static const FrameModel model = FrameModel::build(FrameGeometry::standard());
  return frame_top_displacement(x, model);
}

double frame_lsf(std::span<const double> x) { return kFrameThreshold - frame_top_displacement(x); }

InputModel frame_input_model() {
  std::vector<Marginal> m;
  std::vector<std::string> names;
  auto lognormal = [&](const char* n, double mu, double sd) {
    m.push_back(Marginal::lognormal(mu, sd));
    names.emplace_back(n);
  };
  auto truncated = [&](const char* n, double mu, double sd) {
    m.push_back(Marginal::truncated_gaussian(mu, sd, 0.0, std::numeric_limits<double>::infinity()));
    names.emplace_back(n);
  };
  lognormal("P1", 133.0, 40.0);
  lognormal("P2", 89.0, 35.6);
  lognormal("P3", 71.2, 28.5);
  truncated("E4", 2.17e7, 1.92e6);
  truncated("E5", 2.38e7, 1.92e6);
  truncated("I6", 8.13e-3, 1.08e-3);
  truncated("I7", 0.0115, 1.3e-3);
  truncated("I8", 0.0214, 2.6e-3);
  truncated("I9", 0.026, 3.03e-3);
  truncated("I10", 0.0108, 2.6e-3);
  truncated("I11", 0.0141, 3.46e-3);
  truncated("I12", 0.0233, 5.62e-3);
  truncated("I13", 0.026, 6.49e-3);
  truncated("A14", 0.313, 0.0558);
  truncated("A15", 0.372, 0.0744);
  truncated("A16", 0.506, 0.093);
  truncated("A17", 0.558, 0.112);
  truncated("A18", 0.253, 0.093);
  truncated("A19", 0.291, 0.102);
  truncated("A20", 0.373, 0.121);
  truncated("A21", 0.419, 0.195);

  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(21, 21);
  // Geometric properties I6..I13, A14..A21 (0-based 5..20).
  for (int i = 5; i < 21; ++i)
    for (int j = 5; j < 21; ++j)
      if (i != j) r(i, j) = 0.13;
  for (int i = 6; i <= 13; ++i) {
    const int ii = i - 1, aa = i + 8 - 1;
    r(ii, aa) = r(aa, ii) = 0.95;
  }
  r(3, 4) = r(4, 3) = 0.9;
  return InputModel(std::move(m), CopulaModel::gaussian(std::move(r)), std::move(names));
}

// ---------------------------------------------------------------------------
// Registry

LimitState pointwise(double (*g)(std::span<const double>)) {
  return [g](const PointMatrix& x) {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      out[static_cast<std::size_t>(r)] = g(std::span<const double>(x.row(r).data(), static_cast<std::size_t>(x.cols())));
    }
    return out;
  };
}

std::vector<std::string> benchmark_ids() { return {"four-branch", "piecewise-linear", "frame"}; }

BenchmarkProblem make_benchmark(const std::string& id) {
  BenchmarkProblem p;
  p.id = id;
  auto standard_normal_2d = [] {
    return std::make_shared<const InputModel>(std::vector<Marginal>{Marginal::gaussian(0.0, 1.0), Marginal::gaussian(0.0, 1.0)},
                                              CopulaModel::independent(), std::vector<std::string>{"X1", "X2"});
  };
  if (id == "four-branch") {
    p.description = "series system with four branches, bivariate standard normal input";
    p.model = standard_normal_2d();
    p.lsf = pointwise(&four_branch);
    p.references.push_back({4.46e-3, 2.62, 10000000, "published MCS"});
    p.recommended.n_ref = 15;
    p.recommended.p_max = 2;
    p.recommended.n_tot = 1000;
  } else if (id == "piecewise-linear") {
    p.description = "two piecewise-linear branches, bivariate standard normal input";
    p.model = standard_normal_2d();
    p.lsf = pointwise(&piecewise_linear);
    p.references.push_back({3.2e-5, 4.00, 100000000, "published MCS"});
    p.recommended.n_ref = 40;
    p.recommended.p_max = 6;
    p.recommended.n_tot = 2000;
  } else if (id == "frame") {
    p.description = "five-story three-bay frame, top-floor drift above 9 cm, 21 correlated inputs";
    p.model = std::make_shared<const InputModel>(frame_input_model());
    p.lsf = pointwise(&frame_lsf);
    p.references.push_back({1.49e-6, 4.67, 100000000, "published MCS"});
    p.recommended.n_ref = 40;
    p.recommended.p_max = 4;
    p.recommended.n_tot = 2000;
  } else {
    throw std::invalid_argument("unknown problem '" + id + "'");
  }
  p.recommended.replications = 500;
  // The two Gaussian problems are low-order polynomials of x, which
  // quantile-space bases cannot follow into the tails. The frame keeps
  // quantile space: its lognormal envelopes span tens of standard deviations
  // and real-space fits extrapolate across them.
  if (id != "frame") p.recommended.space = ExpansionSpace::RealEnvelope;
  return p;
}

}  // namespace sser
