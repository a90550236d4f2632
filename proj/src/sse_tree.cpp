#include "sser/sse_tree.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sser {

std::string NodeKey::str() const { return "(" + std::to_string(level) + "," + std::to_string(index) + ")"; }

namespace {

std::span<const double> row_span(const PointMatrix& m, Eigen::Index r) {
  return {m.row(r).data(), static_cast<std::size_t>(m.cols())};
}

}  // namespace

// ---------------------------------------------------------------------------
// PathPredictor

PathPredictor::PathPredictor(const SseTree& tree, NodeKey source)
    : model_(&tree.model()), replications_(tree.replications()) {
  const auto keys = tree.path(source);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    const auto& n = tree.node(keys[i]);
    if (n.ensemble) {
      ancestors_.push_back(&n.ensemble->mean_expansion);
      needs_x_ = needs_x_ || n.ensemble->basis().space() == ExpansionSpace::RealEnvelope;
    }
  }
  const auto& own = tree.node(source);
  if (own.ensemble) {
    terminal_ = &*own.ensemble;
    needs_x_ = needs_x_ || terminal_->basis().space() == ExpansionSpace::RealEnvelope;
  }
}

double PathPredictor::base(std::span<const double> u, std::span<const double> x) const {
  double v = 0.0;
  for (const auto* e : ancestors_) v += e->evaluate(e->basis.space() == ExpansionSpace::RealEnvelope ? x : u);
  return v;
}

double PathPredictor::terminal_term(std::span<const double> u, std::span<const double> x,
                                    const Vector& coefficients) const {
  const auto& basis = terminal_->basis();
  thread_local std::vector<double> terms;
  terms.resize(basis.size());
  basis.evaluate_terms(basis.space() == ExpansionSpace::RealEnvelope ? x : u, terms);
  double v = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) v += coefficients[static_cast<Eigen::Index>(t)] * terms[t];
  return v;
}

double PathPredictor::mean(std::span<const double> u) const {
  thread_local std::vector<double> x;
  x.resize(u.size());
  if (needs_x_) model_->quantile_to_real(u, x);
  double v = base(u, x);
  if (terminal_) v += terminal_term(u, x, terminal_->mean_expansion.coefficients);
  return v;
}

double PathPredictor::replication(std::span<const double> u, std::size_t b) const {
  if (b >= replications_) throw std::out_of_range("replication index out of range");
  thread_local std::vector<double> x;
  x.resize(u.size());
  if (needs_x_) model_->quantile_to_real(u, x);
  double v = base(u, x);
  if (terminal_) {
    const auto& basis = terminal_->basis();
    thread_local std::vector<double> terms;
    terms.resize(basis.size());
    basis.evaluate_terms(basis.space() == ExpansionSpace::RealEnvelope ? std::span<const double>(x) : u, terms);
    const auto col = terminal_->replication_coefficients.col(static_cast<Eigen::Index>(b));
    for (std::size_t t = 0; t < terms.size(); ++t) v += col[static_cast<Eigen::Index>(t)] * terms[t];
  }
  return v;
}

void PathPredictor::evaluate(const PointMatrix& u, Vector& mean, Matrix* reps) const {
  const Eigen::Index n = u.rows();
  PointMatrix x;
  if (needs_x_) x = model_->quantile_to_real(u);
  mean.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    mean[r] = base(row_span(u, r), needs_x_ ? row_span(x, r) : row_span(u, r));
  }
  const auto b = static_cast<Eigen::Index>(replications_);
  if (!terminal_) {
    if (reps) *reps = mean.replicate(1, b);
    return;
  }
  const auto& basis = terminal_->basis();
  const Matrix psi = basis.design_matrix(basis.space() == ExpansionSpace::RealEnvelope ? x : u);
  if (reps) {
    reps->noalias() = psi * terminal_->replication_coefficients;
    reps->colwise() += mean;
  }
  mean.noalias() += psi * terminal_->mean_expansion.coefficients;
}

void PathPredictor::evaluate(const PointMatrix& u, Selector selector, Vector& out) const {
  if (selector.replication && *selector.replication >= replications_) throw std::out_of_range("replication index out of range");
  const Eigen::Index n = u.rows();
  PointMatrix x;
  if (needs_x_) x = model_->quantile_to_real(u);
  out.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) out[r] = base(row_span(u, r), needs_x_ ? row_span(x, r) : row_span(u, r));
  if (!terminal_) return;
  const auto& basis = terminal_->basis();
  const Matrix psi = basis.design_matrix(basis.space() == ExpansionSpace::RealEnvelope ? x : u);
  if (selector.replication) {
    out.noalias() += psi * terminal_->replication_coefficients.col(static_cast<Eigen::Index>(*selector.replication));
  } else {
    out.noalias() += psi * terminal_->mean_expansion.coefficients;
  }
}

// ---------------------------------------------------------------------------
// SseTree

SseTree::SseTree(std::shared_ptr<const InputModel> model, std::size_t replications)
    : model_(std::move(model)), replications_(replications) {
  if (!model_) throw std::invalid_argument("tree requires an input model");
  if (replications_ < 2) throw std::invalid_argument("tree requires B >= 2 replications");
  DomainNode root;
  root.key = root_key();
  root.box = Box::unit(model_->dim());
  root.mass = 1.0;
  nodes_.emplace(root.key, std::move(root));
  terminals_.push_back(root_key());
  level_counter_[0] = 1;
  design_.x.resize(0, static_cast<Eigen::Index>(model_->dim()));
  design_.u.resize(0, static_cast<Eigen::Index>(model_->dim()));
}

const DomainNode& SseTree::node(NodeKey k) const {
  auto it = nodes_.find(k);
  if (it == nodes_.end()) throw std::out_of_range("unknown domain " + k.str());
  return it->second;
}

DomainNode& SseTree::mutable_node(NodeKey k) {
  auto it = nodes_.find(k);
  if (it == nodes_.end()) throw std::out_of_range("unknown domain " + k.str());
  return it->second;
}

std::vector<NodeKey> SseTree::path(NodeKey k) const {
  std::vector<NodeKey> keys;
  std::optional<NodeKey> cur = k;
  while (cur) {
    keys.push_back(*cur);
    cur = node(*cur).parent;
  }
  std::reverse(keys.begin(), keys.end());
  return keys;
}

NodeKey SseTree::locate(std::span<const double> u) const {
  const DomainNode* cur = &node(root_key());
  while (!cur->terminal) {
    const auto& s = *cur->split;
    cur = &node(u[s.dim] <= s.location ? cur->children[0] : cur->children[1]);
  }
  return cur->key;
}

std::pair<NodeKey, NodeKey> SseTree::split_node(NodeKey k, std::size_t dim, double location) {
  DomainNode& parent = mutable_node(k);
  if (!parent.terminal) throw std::invalid_argument("cannot split non-terminal domain " + k.str());
  if (dim >= this->dim()) throw std::invalid_argument("split dimension out of range");
  if (!(location > parent.box.lo[dim] && location < parent.box.hi[dim])) {
    throw std::invalid_argument("split location must lie strictly inside the domain");
  }

  const int level = k.level + 1;
  DomainNode lower, upper;
  lower.key = {level, ++level_counter_[level]};
  upper.key = {level, ++level_counter_[level]};
  lower.parent = upper.parent = k;
  lower.box = upper.box = parent.box;
  lower.box.hi[dim] = location;
  upper.box.lo[dim] = location;
  lower.mass = parent.mass * (location - parent.box.lo[dim]) / parent.box.width(dim);
  upper.mass = parent.mass - lower.mass;
  for (std::size_t id : parent.design_point_ids) {
    (design_.u(static_cast<Eigen::Index>(id), static_cast<Eigen::Index>(dim)) <= location ? lower : upper)
        .design_point_ids.push_back(id);
  }

  parent.terminal = false;
  parent.split = SplitInfo{dim, location};
  parent.children = {lower.key, upper.key};

  auto pos = std::find(terminals_.begin(), terminals_.end(), k);
  *pos = lower.key;
  terminals_.insert(pos + 1, upper.key);

  const auto keys = std::make_pair(lower.key, upper.key);
  nodes_.emplace(lower.key, std::move(lower));
  nodes_.emplace(upper.key, std::move(upper));
  return keys;
}

PointMatrix SseTree::design_coordinates(std::span<const std::size_t> ids, ExpansionSpace space) const {
  const PointMatrix& src = space == ExpansionSpace::RealEnvelope ? design_.x : design_.u;
  PointMatrix out(static_cast<Eigen::Index>(ids.size()), src.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(ids[i]));
  return out;
}

void SseTree::attach_expansion(NodeKey k, BootstrapEnsemble ensemble) {
  DomainNode& n = mutable_node(k);
  if (!n.terminal) throw std::invalid_argument("expansions attach to terminal domains only");
  if (ensemble.replications() != replications_) throw std::invalid_argument("ensemble replication count differs from tree B");
  const auto& mean = ensemble.mean_expansion;
  const PointMatrix coords = design_coordinates(n.design_point_ids, mean.basis.space());
  const Vector fitted = evaluate_expansion(mean, coords);
  for (std::size_t i = 0; i < n.design_point_ids.size(); ++i) design_.residual[n.design_point_ids[i]] -= fitted[static_cast<Eigen::Index>(i)];
  n.ensemble = std::move(ensemble);
}

void SseTree::discard_replications(NodeKey k) {
  DomainNode& n = mutable_node(k);
  if (n.ensemble) n.ensemble->replication_coefficients.resize(n.ensemble->replication_coefficients.rows(), 0);
}

std::vector<std::size_t> SseTree::add_design_points(const PointMatrix& u, const PointMatrix& x, std::span<const double> g,
                                                    int step) {
  const Eigen::Index add = u.rows();
  if (x.rows() != add || static_cast<Eigen::Index>(g.size()) != add) throw std::invalid_argument("design batch size mismatch");
  const Vector prediction = predict(u);
  const Eigen::Index start = static_cast<Eigen::Index>(design_.size());
  design_.u.conservativeResize(start + add, Eigen::NoChange);
  design_.x.conservativeResize(start + add, Eigen::NoChange);
  design_.u.bottomRows(add) = u;
  design_.x.bottomRows(add) = x;
  std::vector<std::size_t> ids;
  for (Eigen::Index r = 0; r < add; ++r) {
    if (!std::isfinite(g[static_cast<std::size_t>(r)])) throw std::invalid_argument("non-finite limit-state value");
    const std::size_t id = static_cast<std::size_t>(start + r);
    design_.g.push_back(g[static_cast<std::size_t>(r)]);
    design_.residual.push_back(g[static_cast<std::size_t>(r)] - prediction[r]);
    design_.step_added.push_back(step);
    ids.push_back(id);
    // Register with every node on the path to its terminal.
    DomainNode* cur = &mutable_node(root_key());
    while (true) {
      cur->design_point_ids.push_back(id);
      if (cur->terminal) break;
      const auto& s = *cur->split;
      cur = &mutable_node(u(r, static_cast<Eigen::Index>(s.dim)) <= s.location ? cur->children[0] : cur->children[1]);
    }
  }
  return ids;
}

Vector SseTree::predict(const PointMatrix& u, Selector selector) const {
  Vector out(u.rows());
  std::map<NodeKey, std::vector<Eigen::Index>> groups;
  for (Eigen::Index r = 0; r < u.rows(); ++r) groups[locate(row_span(u, r))].push_back(r);
  for (const auto& [key, rows] : groups) {
    const PathPredictor predictor(*this, key);
    for (Eigen::Index r : rows) {
      out[r] = selector.replication ? predictor.replication(row_span(u, r), *selector.replication)
                                    : predictor.mean(row_span(u, r));
    }
  }
  return out;
}

SseTree SseTree::from_parts(std::shared_ptr<const InputModel> model, std::size_t replications,
                            std::map<NodeKey, DomainNode> nodes, std::vector<NodeKey> terminals,
                            ExperimentalDesign design) {
  SseTree tree(std::move(model), replications);
  tree.nodes_ = std::move(nodes);
  tree.terminals_ = std::move(terminals);
  tree.design_ = std::move(design);
  tree.level_counter_.clear();
  for (const auto& [key, n] : tree.nodes_) tree.level_counter_[key.level] = std::max(tree.level_counter_[key.level], key.index);
  return tree;
}

// ---------------------------------------------------------------------------
// Free functions

Vector sse_predict(const SseTree& tree, const PointMatrix& u, Selector selector) { return tree.predict(u, selector); }

namespace {

template <typename PerGroup>
Vector grouped(const SseTree& tree, const PointMatrix& u, PerGroup&& per_group) {
  Vector out(u.rows());
  std::map<NodeKey, std::vector<Eigen::Index>> groups;
  for (Eigen::Index r = 0; r < u.rows(); ++r) groups[tree.locate(row_span(u, r))].push_back(r);
  for (const auto& [key, rows] : groups) {
    PointMatrix sub(static_cast<Eigen::Index>(rows.size()), u.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = u.row(rows[i]);
    const Vector v = per_group(PathPredictor(tree, key), sub);
    for (std::size_t i = 0; i < rows.size(); ++i) out[rows[i]] = v[static_cast<Eigen::Index>(i)];
  }
  return out;
}

}  // namespace

Vector misclassification_probability(const PathPredictor& predictor, const PointMatrix& u) {
  Vector mean;
  Matrix reps;
  predictor.evaluate(u, mean, &reps);
  Vector out(u.rows());
  const double b = static_cast<double>(reps.cols());
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    const bool mean_fails = mean[r] <= 0.0;
    Eigen::Index disagree = 0;
    for (Eigen::Index c = 0; c < reps.cols(); ++c) disagree += ((reps(r, c) <= 0.0) != mean_fails) ? 1 : 0;
    out[r] = static_cast<double>(disagree) / b;
  }
  return out;
}

Vector boundary_band_probability(const PathPredictor& predictor, const PointMatrix& u, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("band threshold must be >= 0");
  Vector mean;
  Matrix reps;
  predictor.evaluate(u, mean, &reps);
  Vector out(u.rows());
  const double b = static_cast<double>(reps.cols());
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    Eigen::Index inside = 0;
    for (Eigen::Index c = 0; c < reps.cols(); ++c) inside += std::abs(reps(r, c)) <= t ? 1 : 0;
    out[r] = static_cast<double>(inside) / b;
  }
  return out;
}

Vector misclassification_probability(const SseTree& tree, const PointMatrix& u) {
  return grouped(tree, u, [](const PathPredictor& p, const PointMatrix& sub) { return misclassification_probability(p, sub); });
}

Vector boundary_band_probability(const SseTree& tree, const PointMatrix& u, double t) {
  return grouped(tree, u, [t](const PathPredictor& p, const PointMatrix& sub) { return boundary_band_probability(p, sub, t); });
}

double band_threshold(const SseTree& tree, const PointMatrix& sample_u, double eps) {
  if (sample_u.rows() < 100) throw std::invalid_argument("band threshold needs at least 100 sample points");
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("band quantile must lie in (0, 1)");
  const Vector pred = tree.predict(sample_u);
  std::vector<double> mag(static_cast<std::size_t>(pred.size()));
  for (Eigen::Index i = 0; i < pred.size(); ++i) mag[static_cast<std::size_t>(i)] = std::abs(pred[i]);
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(eps * static_cast<double>(mag.size())))) - 1;
  std::nth_element(mag.begin(), mag.begin() + static_cast<std::ptrdiff_t>(k), mag.end());
  return mag[k];
}

}  // namespace sser
