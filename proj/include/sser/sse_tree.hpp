#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sser/basis.hpp"
#include "sser/input_model.hpp"
#include "sser/spectral.hpp"
#include "sser/types.hpp"

namespace sser {

/// Domain identifier (level, index). The root is (0, 1); indices are unique per level.
struct NodeKey {
  int level = 0;
  int index = 1;

  auto operator<=>(const NodeKey&) const = default;
  std::string str() const;
};

struct SplitInfo {
  std::size_t dim = 0;
  double location = 0.0;
};

struct DomainNode {
  NodeKey key;
  Box box;  // quantile space
  std::optional<BootstrapEnsemble> ensemble;
  std::optional<NodeKey> parent;
  std::vector<NodeKey> children;
  std::optional<SplitInfo> split;
  bool terminal = true;
  double mass = 1.0;
  std::vector<std::size_t> design_point_ids;
};

/// All limit-state evaluations made so far. `residual` holds, per point, the
/// difference between g and the current mean SSE prediction.
struct ExperimentalDesign {
  PointMatrix x;
  PointMatrix u;
  std::vector<double> g;
  std::vector<double> residual;
  std::vector<int> step_added;

  std::size_t size() const { return g.size(); }
};

/// Which predictor to evaluate: the mean SSE, or replication b (mean
/// expansions on non-terminal nodes, replication b on the terminal node).
struct Selector {
  std::optional<std::size_t> replication;

  static Selector mean() { return {}; }
  static Selector rep(std::size_t b) { return {b}; }
};

class SseTree;

/// SSE predictor restricted to the root-to-`source` path: mean expansions
/// on every strict ancestor, and the ensemble of `source` (mean or one
/// replication). Used for a terminal node, and for a freshly split parent
/// whose replications still drive enrichment of its children.
class PathPredictor {
public:
  PathPredictor(const SseTree& tree, NodeKey source);

  std::size_t replications() const { return replications_; }
  /// True when `source` carries an ensemble (replications may differ from the mean).
  bool has_ensemble() const { return terminal_ != nullptr; }

  /// Contribution of the strict ancestors at one point.
  double base(std::span<const double> u, std::span<const double> x) const;
  double mean(std::span<const double> u) const;
  double replication(std::span<const double> u, std::size_t b) const;

  /// Mean predictions, and optionally all replications as an n x B matrix.
  void evaluate(const PointMatrix& u, Vector& mean, Matrix* replications) const;
  /// Mean or a single replication at every row of u.
  void evaluate(const PointMatrix& u, Selector selector, Vector& out) const;

  bool needs_real_coordinates() const { return needs_x_; }

private:
  double terminal_term(std::span<const double> u, std::span<const double> x, const Vector& coefficients) const;

  const InputModel* model_;
  std::vector<const PceExpansion*> ancestors_;
  const BootstrapEnsemble* terminal_ = nullptr;
  std::size_t replications_;
  bool needs_x_ = false;
};

class SseTree {
public:
  SseTree(std::shared_ptr<const InputModel> model, std::size_t replications);

  static constexpr NodeKey root_key() { return NodeKey{0, 1}; }

  const InputModel& model() const { return *model_; }
  std::shared_ptr<const InputModel> model_ptr() const { return model_; }
  std::size_t dim() const { return model_->dim(); }
  std::size_t replications() const { return replications_; }

  const DomainNode& node(NodeKey k) const;
  const std::map<NodeKey, DomainNode>& nodes() const { return nodes_; }
  bool contains(NodeKey k) const { return nodes_.count(k) > 0; }
  /// Terminal set, in creation order.
  const std::vector<NodeKey>& terminals() const { return terminals_; }
  const ExperimentalDesign& design() const { return design_; }

  /// Root-to-k key sequence.
  std::vector<NodeKey> path(NodeKey k) const;
  /// Terminal node containing u (points on a cut belong to the lower child).
  NodeKey locate(std::span<const double> u) const;

  /// Splits terminal node k at `location` along `dim`. Throws
  /// std::invalid_argument if k is not terminal or the cut is not interior.
  std::pair<NodeKey, NodeKey> split_node(NodeKey k, std::size_t dim, double location);

  /// Stores the ensemble on terminal node k and subtracts its mean
  /// expansion from the residual of every design point in k.
  void attach_expansion(NodeKey k, BootstrapEnsemble ensemble);

  /// Drops the replications of a non-terminal node (its mean stays in the
  /// ancestry sum).
  void discard_replications(NodeKey k);

  /// Appends evaluated points; residuals are g minus the current mean prediction.
  std::vector<std::size_t> add_design_points(const PointMatrix& u, const PointMatrix& x, std::span<const double> g,
                                             int step);

  /// Native coordinates (u or x) of the design points of node k, for the given space.
  PointMatrix design_coordinates(std::span<const std::size_t> ids, ExpansionSpace space) const;

  Vector predict(const PointMatrix& u, Selector selector = Selector::mean()) const;

  /// Restores a tree from serialized parts (used by the JSON reader).
  static SseTree from_parts(std::shared_ptr<const InputModel> model, std::size_t replications,
                            std::map<NodeKey, DomainNode> nodes, std::vector<NodeKey> terminals,
                            ExperimentalDesign design);

private:
  DomainNode& mutable_node(NodeKey k);

  std::shared_ptr<const InputModel> model_;
  std::size_t replications_;
  std::map<NodeKey, DomainNode> nodes_;
  std::vector<NodeKey> terminals_;
  std::map<int, int> level_counter_;
  ExperimentalDesign design_;
};

/// sse_predict: predictions at quantile-space points.
Vector sse_predict(const SseTree& tree, const PointMatrix& u, Selector selector = Selector::mean());

/// Fraction of replications whose failure classification (g <= 0) differs
/// from the mean predictor's, per point. Always a multiple of 1/B.
Vector misclassification_probability(const SseTree& tree, const PointMatrix& u);

/// Fraction of replications with |g^(b)| <= t, per point.
Vector boundary_band_probability(const SseTree& tree, const PointMatrix& u, double t);

/// Empirical eps-quantile of |mean prediction| over the sample (>= 100 points).
double band_threshold(const SseTree& tree, const PointMatrix& sample_u, double eps);

/// Same quantities computed through an explicit path predictor.
Vector misclassification_probability(const PathPredictor& predictor, const PointMatrix& u);
Vector boundary_band_probability(const PathPredictor& predictor, const PointMatrix& u, double t);

}  // namespace sser
