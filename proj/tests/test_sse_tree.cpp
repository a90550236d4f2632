#include <cmath>
#include <set>

#include "doctest.h"
#include "generators.hpp"
#include "sser/normal.hpp"
#include "sser/sse_tree.hpp"

using namespace sser;

namespace {

std::shared_ptr<const InputModel> normals(std::size_t dim) {
  return std::make_shared<const InputModel>(std::vector<Marginal>(dim, Marginal::gaussian(0, 1)));
}

// Constant expansions: mean value and one value per replication.
BootstrapEnsemble constant_ensemble(const Box& box, double mean, std::vector<double> reps) {
  BootstrapEnsemble e;
  e.mean_expansion = {build_basis(box, 0), Vector::Constant(1, mean), 0.0};
  e.replication_coefficients = Matrix(1, static_cast<Eigen::Index>(reps.size()));
  for (std::size_t b = 0; b < reps.size(); ++b) e.replication_coefficients(0, static_cast<Eigen::Index>(b)) = reps[b];
  return e;
}

BootstrapEnsemble random_ensemble(Rng& rng, const SseTree& tree, NodeKey k, ExpansionSpace space) {
  Box box = tree.node(k).box;
  if (space == ExpansionSpace::RealEnvelope) box = compute_envelope(tree.model(), box, 200, rng);
  BootstrapEnsemble e;
  e.mean_expansion.basis = build_basis(box, 2, kUnlimitedRank, space);
  const auto n = static_cast<Eigen::Index>(e.mean_expansion.basis.size());
  e.mean_expansion.coefficients = Vector::NullaryExpr(n, [&] { return gen::uniform(rng, -1, 1); });
  e.replication_coefficients = Matrix::NullaryExpr(n, static_cast<Eigen::Index>(tree.replications()),
                                                   [&] { return gen::uniform(rng, -1, 1); });
  return e;
}

void add_points(Rng& rng, SseTree& tree, std::size_t n, int step) {
  const std::size_t dim = tree.dim();
  const PointMatrix u = sample_box(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0), n, rng);
  const PointMatrix x = tree.model().quantile_to_real(u);
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::sin(x.row(static_cast<Eigen::Index>(i)).sum()) + 2;
  tree.add_design_points(u, x, g, step);
}

// Grows a tree the way the adaptive loop does: split a terminal, freeze its
// mean, attach fresh ensembles to the children, and add points in between.
SseTree random_tree(Rng& rng, std::size_t dim, std::size_t splits, std::size_t reps = 4) {
  SseTree tree(normals(dim), reps);
  const auto space = [&] { return rng.index(2) ? ExpansionSpace::RealEnvelope : ExpansionSpace::QuantileSpace; };
  add_points(rng, tree, 10, 0);
  tree.attach_expansion(SseTree::root_key(), random_ensemble(rng, tree, SseTree::root_key(), space()));
  for (std::size_t s = 0; s < splits; ++s) {
    const auto& terms = tree.terminals();
    const NodeKey k = terms[rng.index(terms.size())];
    const Box& b = tree.node(k).box;
    const std::size_t d = rng.index(dim);
    tree.discard_replications(k);
    const auto [lo, hi] = tree.split_node(k, d, b.lo[d] + gen::uniform(rng, 0.05, 0.95) * b.width(d));
    add_points(rng, tree, 5, static_cast<int>(s) + 1);
    for (NodeKey c : {lo, hi}) {
      if (rng.index(3) > 0) tree.attach_expansion(c, random_ensemble(rng, tree, c, space()));
    }
  }
  return tree;
}

Vector column(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

TEST_CASE("sse_predict: root-only tree equals its expansion") {
  Rng rng(1);
  SseTree tree(normals(2), 3);
  const BootstrapEnsemble e = random_ensemble(rng, tree, SseTree::root_key(), ExpansionSpace::QuantileSpace);
  tree.attach_expansion(SseTree::root_key(), e);
  const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 50, rng);
  CHECK((sse_predict(tree, u) - evaluate_expansion(e.mean_expansion, u)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("sse_predict: zero-spread replications equal the mean") {
  SseTree tree(normals(2), 3);
  tree.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(2), 0.7, {0.7, 0.7, 0.7}));
  Rng rng(2);
  const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 20, rng);
  for (std::size_t b = 0; b < 3; ++b) CHECK(sse_predict(tree, u, Selector::rep(b)) == sse_predict(tree, u));
}

TEST_CASE("sse_predict: hand-evaluated depth-2 tree") {
  SseTree tree(normals(2), 2);
  tree.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(2), 1.0, {1.0, 1.0}));
  tree.discard_replications(SseTree::root_key());
  const auto [lo, hi] = tree.split_node(SseTree::root_key(), 0, 0.5);
  tree.attach_expansion(lo, constant_ensemble(tree.node(lo).box, 0.5, {0.5, 0.5}));
  tree.attach_expansion(hi, constant_ensemble(tree.node(hi).box, -0.5, {-0.5, -0.5}));
  PointMatrix u(2, 2);
  u << 0.25, 0.3, 0.75, 0.9;
  const Vector p = sse_predict(tree, u);
  CHECK(p[0] == gen::rel(1.5).epsilon(1e-14));
  CHECK(p[1] == gen::rel(0.5).epsilon(1e-14));
}

TEST_CASE("split_node: masses and keys") {
  SseTree tree(normals(2), 2);
  const auto [a, b] = tree.split_node(SseTree::root_key(), 0, 0.5);
  CHECK(tree.node(a).mass == 0.5);
  CHECK(tree.node(b).mass == 0.5);
  CHECK(a == NodeKey{1, 1});
  CHECK(b == NodeKey{1, 2});
  const auto [c, d] = tree.split_node(b, 1, 0.98);
  CHECK(tree.node(c).mass == gen::rel(0.49).epsilon(1e-15));
  CHECK(tree.node(d).mass == gen::rel(0.01).epsilon(1e-13));
  CHECK(tree.node(c).mass + tree.node(d).mass == tree.node(b).mass);

  SseTree t2(normals(2), 2);
  const auto [e, f] = t2.split_node(SseTree::root_key(), 1, 0.98);
  CHECK(t2.node(e).mass == 0.98);
  CHECK(t2.node(f).mass == gen::rel(0.02).epsilon(1e-14));
  CHECK(!t2.node(SseTree::root_key()).terminal);
  CHECK(t2.terminals() == std::vector<NodeKey>{e, f});
}

TEST_CASE("split_node: invalid requests") {
  SseTree tree(normals(2), 2);
  CHECK_THROWS_AS(tree.split_node(SseTree::root_key(), 0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(tree.split_node(SseTree::root_key(), 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(tree.split_node(SseTree::root_key(), 0, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(tree.split_node(SseTree::root_key(), 2, 0.5), std::invalid_argument);
  tree.split_node(SseTree::root_key(), 0, 0.5);
  CHECK_THROWS_AS(tree.split_node(SseTree::root_key(), 1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(tree.node(NodeKey{7, 7}), std::out_of_range);
}

TEST_CASE("split_node: points on the cut go to the lower child") {
  SseTree tree(normals(2), 2);
  PointMatrix u(3, 2);
  u << 0.5, 0.5, 0.2, 0.1, 0.9, 0.9;
  const PointMatrix x = tree.model().quantile_to_real(u);
  tree.add_design_points(u, x, std::vector<double>{1, 2, 3}, 0);
  const auto [lo, hi] = tree.split_node(SseTree::root_key(), 0, 0.5);
  CHECK(tree.node(lo).design_point_ids == std::vector<std::size_t>{0, 1});
  CHECK(tree.node(hi).design_point_ids == std::vector<std::size_t>{2});
  CHECK(tree.locate(std::vector<double>{0.5, 0.7}) == lo);
}

TEST_CASE("attach_expansion: residual bookkeeping") {
  Rng rng(3);
  SseTree tree(normals(2), 2);
  add_points(rng, tree, 12, 0);
  const std::vector<double> g = tree.design().g;
  CHECK(tree.design().residual == g);

  SseTree zero = tree;
  zero.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(2), 0.0, {0.0, 0.0}));
  CHECK(zero.design().residual == g);

  const BootstrapEnsemble e = random_ensemble(rng, tree, SseTree::root_key(), ExpansionSpace::QuantileSpace);
  tree.attach_expansion(SseTree::root_key(), e);
  const Vector fitted = evaluate_expansion(e.mean_expansion, tree.design().u);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(tree.design().residual[i] == gen::rel(g[i] - fitted[i]));
}

TEST_CASE("property: telescoping residual identity") {
  gen::for_all(40, 201, [](Rng& rng, std::size_t) {
    const SseTree tree = random_tree(rng, gen::integer(rng, 1, 3), gen::integer(rng, 0, 8));
    const Vector p = sse_predict(tree, tree.design().u);
    const Vector g = column(tree.design().g), r = column(tree.design().residual);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      CHECK(std::abs(g[i] - p[i] - r[i]) <= 1e-9 * std::max(1.0, std::abs(g[i])));
    }
  });
}

TEST_CASE("property: partition and mass invariants") {
  gen::for_all(30, 202, [](Rng& rng, std::size_t) {
    const std::size_t dim = gen::integer(rng, 1, 4);
    SseTree tree(normals(dim), 2);
    gen::random_splits(rng, tree, gen::integer(rng, 0, 30));
    double total = 0;
    std::set<NodeKey> keys;
    for (NodeKey k : tree.terminals()) {
      const DomainNode& n = tree.node(k);
      CHECK(n.terminal);
      CHECK(n.children.empty());
      CHECK(std::abs(n.mass - n.box.volume()) < 1e-12);
      total += n.mass;
      keys.insert(k);
    }
    CHECK(keys.size() == tree.terminals().size());
    CHECK(std::abs(total - 1.0) < 1e-12);

    for (const auto& [k, n] : tree.nodes()) {
      if (k != SseTree::root_key()) {
        REQUIRE(n.parent);
        CHECK(n.parent->level + 1 == k.level);
      }
      if (n.terminal) continue;
      REQUIRE(n.children.size() == 2);
      const Box& a = tree.node(n.children[0]).box;
      const Box& b = tree.node(n.children[1]).box;
      const std::size_t d = n.split->dim;
      CHECK(a.lo[d] == n.box.lo[d]);
      CHECK(a.hi[d] == n.split->location);
      CHECK(b.lo[d] == n.split->location);
      CHECK(b.hi[d] == n.box.hi[d]);
      for (std::size_t i = 0; i < dim; ++i) {
        if (i == d) continue;
        CHECK(a.lo[i] == n.box.lo[i]);
        CHECK(b.hi[i] == n.box.hi[i]);
      }
    }

    const PointMatrix u = sample_box(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0), 10000, rng);
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
      const std::span<const double> p(u.row(r).data(), dim);
      int hits = 0;
      for (NodeKey k : tree.terminals()) hits += tree.node(k).box.contains(p);
      CHECK(hits == 1);
      CHECK(tree.node(tree.locate(p)).box.contains(p));
    }
  });
}

TEST_CASE("property: replications differ from the mean only through terminal terms") {
  gen::for_all(20, 203, [](Rng& rng, std::size_t) {
    const SseTree tree = random_tree(rng, 2, gen::integer(rng, 1, 6));
    const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 200, rng);
    const PointMatrix x = tree.model().quantile_to_real(u);
    const Vector mean = sse_predict(tree, u);
    for (std::size_t b = 0; b < tree.replications(); ++b) {
      const Vector rep = sse_predict(tree, u, Selector::rep(b));
      for (Eigen::Index r = 0; r < u.rows(); ++r) {
        const DomainNode& n = tree.node(tree.locate(std::span<const double>(u.row(r).data(), 2)));
        double expected = 0;
        if (n.ensemble) {
          const auto& e = *n.ensemble;
          const PointMatrix p = e.basis().space() == ExpansionSpace::RealEnvelope ? x.row(r) : u.row(r);
          expected = evaluate_expansion(e.replication(b), p)[0] - evaluate_expansion(e.mean_expansion, p)[0];
        }
        CHECK(rep[r] - mean[r] == gen::rel(expected).epsilon(1e-9).scale(1));
      }
    }
  });
}

TEST_CASE("misclassification probability") {
  SseTree agree(normals(1), 4);
  agree.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(1), 1.0, {0.5, 2.0, 3.0, 0.1}));
  PointMatrix u(3, 1);
  u << 0.1, 0.5, 0.9;
  CHECK(misclassification_probability(agree, u).isZero());

  SseTree half(normals(1), 4);
  half.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(1), 1.0, {-0.5, 2.0, -3.0, 0.1}));
  CHECK((misclassification_probability(half, u).array() == 0.5).all());

  // g = 0 counts as failure for the mean and for the replications.
  SseTree edge(normals(1), 4);
  edge.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(1), 0.0, {0.0, 1.0, -1.0, 1.0}));
  CHECK((misclassification_probability(edge, u).array() == 0.5).all());
}

TEST_CASE("property: misclassification is a multiple of 1/B and matches the path predictor") {
  gen::for_all(20, 204, [](Rng& rng, std::size_t) {
    const SseTree tree = random_tree(rng, 2, gen::integer(rng, 0, 5), gen::integer(rng, 2, 9));
    const PointMatrix u = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 300, rng);
    const Vector pm = misclassification_probability(tree, u);
    const double b = static_cast<double>(tree.replications());
    for (Eigen::Index i = 0; i < pm.size(); ++i) {
      CHECK(pm[i] >= 0.0);
      CHECK(pm[i] <= 1.0);
      CHECK(std::abs(pm[i] * b - std::round(pm[i] * b)) < 1e-9);
    }
    for (NodeKey k : tree.terminals()) {
      const Box& box = tree.node(k).box;
      const PointMatrix v = sample_box(box.lo, box.hi, 50, rng);
      CHECK(misclassification_probability(PathPredictor(tree, k), v) == misclassification_probability(tree, v));
      CHECK(boundary_band_probability(PathPredictor(tree, k), v, 0.3) == boundary_band_probability(tree, v, 0.3));
    }
  });
}

TEST_CASE("boundary band probability") {
  SseTree tree(normals(1), 4);
  tree.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(1), 0.0, {-2.0, -0.5, 0.5, 2.0}));
  PointMatrix u(2, 1);
  u << 0.2, 0.8;
  CHECK((boundary_band_probability(tree, u, 1.0).array() == 0.5).all());
  CHECK((boundary_band_probability(tree, u, HUGE_VAL).array() == 1.0).all());

  Rng rng(4);
  SseTree cont(normals(2), 3);
  cont.attach_expansion(SseTree::root_key(), random_ensemble(rng, cont, SseTree::root_key(), ExpansionSpace::QuantileSpace));
  const PointMatrix v = sample_box(std::vector<double>{0, 0}, std::vector<double>{1, 1}, 1000, rng);
  CHECK(boundary_band_probability(cont, v, 0.0).isZero());
}

TEST_CASE("band_threshold") {
  SseTree constant(normals(1), 2);
  constant.attach_expansion(SseTree::root_key(), constant_ensemble(Box::unit(1), -0.3, {-0.3, -0.3}));
  Rng rng(5);
  const PointMatrix u = sample_box(std::vector<double>{0}, std::vector<double>{1}, 1000, rng);
  CHECK(band_threshold(constant, u, 0.01) == gen::rel(0.3).epsilon(1e-14));

  // Mean prediction u1: |g| is uniform on [0, 1].
  SseTree linear(normals(1), 2);
  BootstrapEnsemble e = constant_ensemble(Box::unit(1), 0.0, {0, 0});
  e.mean_expansion.basis = build_basis(Box::unit(1), 1);
  e.mean_expansion.coefficients = Vector(2);
  e.mean_expansion.coefficients << 0.5, 0.5 / std::sqrt(3.0);
  e.replication_coefficients = e.mean_expansion.coefficients.replicate(1, 2);
  linear.attach_expansion(SseTree::root_key(), e);
  const PointMatrix v = sample_box(std::vector<double>{0}, std::vector<double>{1}, 10000, rng);
  CHECK(std::abs(band_threshold(linear, v, 0.1) - 0.1) < 4 * std::sqrt(0.1 * 0.9 / 10000));
  CHECK_THROWS(band_threshold(linear, sample_box(std::vector<double>{0}, std::vector<double>{1}, 50, rng), 0.1));
}

TEST_CASE("add_design_points rejects non-finite limit-state values") {
  SseTree tree(normals(1), 2);
  PointMatrix u(1, 1);
  u << 0.3;
  CHECK_THROWS(tree.add_design_points(u, tree.model().quantile_to_real(u), std::vector<double>{std::nan("")}, 0));
}
