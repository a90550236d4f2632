#include "sser/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace sser {

namespace {

std::uint64_t key_tag(NodeKey k) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.level)) << 32) |
         static_cast<std::uint32_t>(k.index);
}

// RNG stream families used by run_sser.
enum Stream : std::uint64_t { kInitial = 1, kFit, kEstimate, kAuxiliary, kEnrich, kEnvelope };

PointMatrix latin_hypercube(std::size_t n, std::size_t m, Rng& rng) {
  PointMatrix u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < m; ++j) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    for (std::size_t i = 0; i < n; ++i) {
      u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
    }
  }
  return u;
}

PointMatrix select_rows(const PointMatrix& m, const std::vector<Eigen::Index>& rows) {
  PointMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Vector criterion_values(const PathPredictor& predictor, const PointMatrix& u, SplitCriterion c, double t) {
  return c == SplitCriterion::Misclassification ? misclassification_probability(predictor, u)
                                                : boundary_band_probability(predictor, u, t);
}

}  // namespace

std::string to_string(SplitCriterion c) {
  return c == SplitCriterion::Misclassification ? "misclassification" : "band";
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::BetaBounds: return "beta_bounds";
    case Termination::Budget: return "budget";
    case Termination::FewExpansions: return "few_expansions";
    case Termination::NoRefinableDomain: return "no_refinable_domain";
  }
  return "unknown";
}

void RunConfig::validate() const {
  if (n_ref < 2) throw std::invalid_argument("n_ref must be >= 2");
  if (p_max < 0) throw std::invalid_argument("p_max must be >= 0");
  if (rank_limit < 1) throw std::invalid_argument("rank_limit must be >= 1");
  if (replications < 2) throw std::invalid_argument("B must be >= 2");
  if (n_tot < 2 * n_ref) throw std::invalid_argument("n_tot must be >= 2 * n_ref");
  if (!(eps_beta > 0.0) || !(eps_pf > 0.0) || !(eps_t > 0.0 && eps_t < 1.0)) {
    throw std::invalid_argument("thresholds must be positive (eps_t in (0, 1))");
  }
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5)");
  if (n_aux < 100) throw std::invalid_argument("n_aux must be >= 100");
  if (stop_window < 1) throw std::invalid_argument("stop_window must be >= 1");
  if (!(min_child_fraction > 0.0 && min_child_fraction < 0.5)) throw std::invalid_argument("min_child_fraction must lie in (0, 0.5)");
  if (rejection_factor < 1) throw std::invalid_argument("rejection_factor must be >= 1");
}

double domain_error(double mass, double variance) { return mass * mass * variance; }

bool reprioritization_check(std::span<const double> pf_history, double eps_pf) {
  if (pf_history.size() < 3) return false;
  const auto last = pf_history.subspan(pf_history.size() - 3);
  const double latest = last[2];
  if (latest == 0.0) return last[0] == 0.0 && last[1] == 0.0;
  const double mean = (last[0] + last[1] + last[2]) / 3.0;
  double var = 0.0;
  for (double v : last) var += (v - mean) * (v - mean);
  var /= 2.0;
  return var / (latest * latest) < eps_pf;
}

std::optional<NodeKey> select_refinement_domain(std::span<const TerminalState> terminals, bool reprioritize) {
  const TerminalState* best = nullptr;
  for (const auto& t : terminals) {
    if (t.inert) continue;
    if (!best) {
      best = &t;
      continue;
    }
    const double score = reprioritize ? t.mass : t.error;
    const double best_score = reprioritize ? best->mass : best->error;
    if (score != best_score) {
      if (score > best_score) best = &t;
    } else if (t.mass != best->mass) {
      if (t.mass > best->mass) best = &t;
    } else if (t.key < best->key) {
      best = &t;
    }
  }
  if (!best) return std::nullopt;
  return best->key;
}

AuxiliarySamples build_auxiliary_samples(const SseTree& tree, NodeKey k, std::size_t n_aux, double eps_t, Rng& rng) {
  const DomainNode& node = tree.node(k);
  if (!node.terminal) throw std::invalid_argument("auxiliary samples are drawn in terminal domains");
  const PathPredictor predictor(tree, k);
  const PointMatrix u = sample_box(node.box.lo, node.box.hi, n_aux, rng);

  AuxiliarySamples aux;
  Vector crit = misclassification_probability(predictor, u);
  if ((crit.array() > 0.0).any()) {
    aux.criterion = SplitCriterion::Misclassification;
  } else {
    aux.criterion = SplitCriterion::BoundaryBand;
    aux.band_t = band_threshold(tree, u, eps_t);
    crit = boundary_band_probability(predictor, u, aux.band_t);
  }
  std::vector<Eigen::Index> pos, zero;
  for (Eigen::Index i = 0; i < crit.size(); ++i) (crit[i] > 0.0 ? pos : zero).push_back(i);
  if (pos.empty() || zero.empty()) throw UnsplittableDomain("domain " + k.str() + " cannot be split");
  aux.positive = select_rows(u, pos);
  aux.zero = select_rows(u, zero);
  return aux;
}

double split_objective(std::span<const double> positive, std::span<const double> zero, double v) {
  auto ecdf = [v](std::span<const double> s) {
    std::size_t c = 0;
    for (double x : s) c += x <= v ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(s.size());
  };
  const double fp = ecdf(positive), f0 = ecdf(zero);
  return -1.0 + std::max(fp + (1.0 - f0), (1.0 - fp) + f0);
}

SplitChoice find_split(const PointMatrix& positive, const PointMatrix& zero, const Box& box, double min_fraction) {
  if (positive.rows() == 0 || zero.rows() == 0) throw std::invalid_argument("find_split needs both samples nonempty");
  const std::size_t m = box.dim();
  const double np = static_cast<double>(positive.rows()), n0 = static_cast<double>(zero.rows());
  constexpr double kTie = 1e-12;

  SplitChoice best;
  best.objective = -1.0;
  std::vector<std::pair<double, int>> pts;
  for (std::size_t d = 0; d < m; ++d) {
    const auto col = static_cast<Eigen::Index>(d);
    pts.clear();
    for (Eigen::Index i = 0; i < positive.rows(); ++i) pts.emplace_back(positive(i, col), 1);
    for (Eigen::Index i = 0; i < zero.rows(); ++i) pts.emplace_back(zero(i, col), 0);
    std::sort(pts.begin(), pts.end());

    // Sweep distinct values; L is constant between consecutive ones.
    double cp = 0.0, c0 = 0.0;
    double dim_best = -1.0;
    double run_first = 0.0, run_last = 0.0;
    bool in_run = false, run_closed = false;
    std::size_t i = 0;
    while (i < pts.size()) {
      const double value = pts[i].first;
      while (i < pts.size() && pts[i].first == value) {
        (pts[i].second ? cp : c0) += 1.0;
        ++i;
      }
      if (i == pts.size()) break;
      const double mid = 0.5 * (value + pts[i].first);
      const double l = std::abs(cp / np - c0 / n0);
      if (l > dim_best + kTie) {
        dim_best = l;
        run_first = run_last = mid;
        in_run = true;
        run_closed = false;
      } else if (l >= dim_best - kTie) {
        if (in_run && !run_closed) run_last = mid;
      } else if (in_run) {
        run_closed = true;
      }
    }
    if (dim_best < 0.0) continue;  // all coordinates identical in this dimension
    if (dim_best > best.objective + kTie) {
      best.objective = dim_best;
      best.dim = d;
      best.location = 0.5 * (run_first + run_last);
    }
  }
  if (best.objective < 0.0) {
    // Degenerate sample: fall back to the midpoint of the first dimension.
    best = {0, 0.5 * (box.lo[0] + box.hi[0]), 0.0};
  }
  const double w = box.width(best.dim);
  best.location = std::clamp(best.location, box.lo[best.dim] + min_fraction * w, box.hi[best.dim] - min_fraction * w);
  return best;
}

EnrichmentPlan plan_enrichment(std::size_t n_ref, std::size_t n_curr) {
  EnrichmentPlan plan;
  const double half = 0.5 * static_cast<double>(n_ref) - 0.5 * static_cast<double>(n_curr);
  plan.uniform = half > 0.0 ? static_cast<std::size_t>(std::floor(half + 0.5)) : 0;
  plan.uniform = std::min(plan.uniform, n_ref);
  plan.targeted = n_ref - plan.uniform;
  return plan;
}

PointMatrix sample_enrichment(const SseTree& tree, NodeKey source, const Box& target, const EnrichmentPlan& plan,
                              SplitCriterion criterion, double band_t, Rng& rng, std::size_t rejection_factor) {
  const auto m = static_cast<Eigen::Index>(target.dim());
  PointMatrix out(static_cast<Eigen::Index>(plan.uniform + plan.targeted), m);
  Eigen::Index filled = 0;
  if (plan.uniform > 0) {
    out.topRows(static_cast<Eigen::Index>(plan.uniform)) = sample_box(target.lo, target.hi, plan.uniform, rng);
    filled = static_cast<Eigen::Index>(plan.uniform);
  }
  if (plan.targeted == 0) return out;

  const PathPredictor predictor(tree, source);
  const std::size_t cap = rejection_factor * plan.targeted;
  const std::size_t batch = std::max<std::size_t>(256, 4 * plan.targeted);
  std::size_t proposed = 0, accepted = 0;
  while (accepted < plan.targeted && proposed < cap) {
    const std::size_t nb = std::min(batch, cap - proposed);
    const PointMatrix prop = sample_box(target.lo, target.hi, nb, rng);
    const Vector crit = criterion_values(predictor, prop, criterion, band_t);
    proposed += nb;
    for (Eigen::Index i = 0; i < prop.rows() && accepted < plan.targeted; ++i) {
      if (crit[i] > 0.0) {
        out.row(filled++) = prop.row(i);
        ++accepted;
      }
    }
  }
  if (accepted < plan.targeted) {
    out.bottomRows(static_cast<Eigen::Index>(plan.targeted - accepted)) =
        sample_box(target.lo, target.hi, plan.targeted - accepted, rng);
  }
  return out;
}

bool check_stopping(std::span<const FailureEstimate> history, double eps_beta, std::size_t window) {
  if (window == 0 || history.size() < window) return false;
  for (const auto& e : history.subspan(history.size() - window)) {
    if (!e.beta_defined || e.beta == 0.0) return false;
    const double width = e.beta_hi - e.beta_lo;
    if (!std::isfinite(width) || !(width / std::abs(e.beta) < eps_beta)) return false;
  }
  return true;
}

namespace {

class Runner {
public:
  Runner(const Problem& problem, const RunConfig& config, const IterationCallback& cb)
      : problem_(problem), config_(config), callback_(cb), root_rng_(config.seed),
        tree_(problem.model, config.replications) {}

  RunResult run() {
    initialize();
    std::size_t iteration = 0;
    while (true) {
      if (check_stopping(history_, config_.eps_beta, config_.stop_window)) return finish(Termination::BetaBounds);
      if (evaluations_ >= config_.n_tot) return finish(Termination::Budget);
      ++iteration;
      const auto created = step(iteration);
      if (!created) return finish(Termination::NoRefinableDomain);
      if (check_stopping(history_, config_.eps_beta, config_.stop_window)) return finish(Termination::BetaBounds);
      if (*created < 2) return finish(Termination::FewExpansions);
    }
  }

private:
  void initialize() {
    const std::size_t n0 = 2 * config_.n_ref;
    Rng rng = root_rng_.derive(kInitial);
    PointMatrix u = config_.latin_hypercube ? latin_hypercube(n0, tree_.dim(), rng)
                                            : sample_box(Box::unit(tree_.dim()).lo, Box::unit(tree_.dim()).hi, n0, rng);
    add_points(u, 0);
    fit(tree_.root_key());
    estimate(tree_.root_key(), std::nullopt);
    record(IterationRecord{});
  }

  void add_points(const PointMatrix& u, int step) {
    PointMatrix x = tree_.model().quantile_to_real(u);
    std::vector<double> g;
    try {
      g = problem_.lsf(x);
    } catch (const std::exception& e) {
      throw RunAborted(std::string("limit-state evaluation failed: ") + e.what(), trace_);
    }
    if (g.size() != static_cast<std::size_t>(u.rows())) throw RunAborted("limit-state returned wrong batch size", trace_);
    for (double v : g) {
      if (!std::isfinite(v)) throw RunAborted("non-finite limit-state value", trace_);
    }
    tree_.add_design_points(u, x, g, step);
    evaluations_ += g.size();
  }

  void fit(NodeKey k) {
    const DomainNode& node = tree_.node(k);
    const auto& ids = node.design_point_ids;
    Vector values(static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) values[static_cast<Eigen::Index>(i)] = tree_.design().residual[ids[i]];
    Box basis_box = node.box;
    if (config_.space == ExpansionSpace::RealEnvelope) {
      Rng env_rng = root_rng_.derive(kEnvelope, key_tag(k));
      basis_box = compute_envelope(tree_.model(), node.box, std::max(config_.n_boundary, 2 * tree_.dim()), env_rng);
    }
    const BasisSpec basis = build_basis(basis_box, config_.p_max, config_.rank_limit, config_.space);
    const PointMatrix coords = tree_.design_coordinates(ids, config_.space);
    Rng rng = root_rng_.derive(kFit, key_tag(k));
    tree_.attach_expansion(k, bootstrap_fit(coords, values, basis, config_.replications, rng, config_.bootstrap));
  }

  void estimate(NodeKey k, std::optional<double> pf_prev) {
    Rng rng = root_rng_.derive(kEstimate, key_tag(k));
    conditionals_[k] = estimate_conditional_pf(tree_, k, config_.estimators, rng, pf_prev);
  }

  // One refinement; returns the number of expansions created, or nullopt
  // when no terminal can be refined.
  std::optional<std::size_t> step(std::size_t iteration) {
    IterationRecord rec;
    rec.iteration = iteration;
    std::vector<double> pf_history;
    for (std::size_t i = window_start_; i < history_.size(); ++i) pf_history.push_back(history_[i].pf);
    rec.reprioritized = reprioritization_check(pf_history, config_.eps_pf);

    NodeKey k;
    AuxiliarySamples aux;
    while (true) {
      std::vector<TerminalState> states;
      for (NodeKey t : tree_.terminals()) {
        const auto& c = conditionals_.at(t);
        states.push_back({t, tree_.node(t).mass, domain_error(tree_.node(t).mass, c.variance()), inert_.count(t) > 0});
      }
      const auto chosen = select_refinement_domain(states, rec.reprioritized);
      if (!chosen) return std::nullopt;
      k = *chosen;
      Rng rng = root_rng_.derive(kAuxiliary, key_tag(k));
      try {
        aux = build_auxiliary_samples(tree_, k, config_.n_aux, config_.eps_t, rng);
        break;
      } catch (const UnsplittableDomain&) {
        inert_.insert(k);
        trace_.inert.push_back(k);
      }
    }

    const Box parent_box = tree_.node(k).box;
    const SplitChoice split = find_split(aux.positive, aux.zero, parent_box, config_.min_child_fraction);
    const auto [c1, c2] = tree_.split_node(k, split.dim, split.location);
    rec.refined = k;
    rec.split = SplitInfo{split.dim, split.location};
    rec.split_objective = split.objective;
    rec.criterion = aux.criterion;

    for (NodeKey child : {c1, c2}) {
      const std::size_t n_new = std::min(config_.n_ref, config_.n_tot - std::min(config_.n_tot, evaluations_));
      if (n_new > 0) {
        const EnrichmentPlan plan = plan_enrichment(n_new, tree_.node(child).design_point_ids.size());
        Rng rng = root_rng_.derive(kEnrich, key_tag(child));
        const PointMatrix u = sample_enrichment(tree_, k, tree_.node(child).box, plan, aux.criterion, aux.band_t, rng,
                                                config_.rejection_factor);
        add_points(u, static_cast<int>(iteration));
      }
      if (n_new == config_.n_ref) {
        fit(child);
        ++rec.expansions_created;
      }
    }
    tree_.discard_replications(k);

    const double parent_pf = conditionals_.at(k).mean_pf;
    conditionals_.erase(k);
    estimate(c1, parent_pf);
    estimate(c2, parent_pf);
    const bool reprioritized = rec.reprioritized;
    record(std::move(rec));
    // A mass-driven refinement starts a fresh window of three totals.
    if (reprioritized) window_start_ = history_.size() - 1;
    return trace_.iterations.back().expansions_created;
  }

  void record(IterationRecord rec) {
    std::vector<ConditionalEstimate> cond;
    std::vector<double> masses;
    for (NodeKey t : tree_.terminals()) {
      const auto& c = conditionals_.at(t);
      const double v = tree_.node(t).mass;
      cond.push_back(c);
      masses.push_back(v);
      rec.terminals.push_back({t, v, c.mean_pf, c.variance(), domain_error(v, c.variance())});
    }
    rec.estimate = aggregate(cond, masses, config_.alpha);
    rec.estimate.evaluations = evaluations_;
    rec.evaluations = evaluations_;
    history_.push_back(rec.estimate);
    trace_.iterations.push_back(std::move(rec));
    if (callback_) callback_(trace_.iterations.back());
  }

  RunResult finish(Termination why) {
    trace_.termination = why;
    return RunResult{history_.back(), std::move(trace_), std::move(tree_), std::move(conditionals_)};
  }

  const Problem& problem_;
  const RunConfig& config_;
  const IterationCallback& callback_;
  Rng root_rng_;
  SseTree tree_;
  std::size_t evaluations_ = 0;
  std::map<NodeKey, ConditionalEstimate> conditionals_;
  std::set<NodeKey> inert_;
  std::vector<FailureEstimate> history_;
  std::size_t window_start_ = 0;
  RunTrace trace_;
};

}  // namespace

RunResult run_sser(const Problem& problem, const RunConfig& config, const IterationCallback& on_iteration) {
  config.validate();
  if (!problem.model || !problem.lsf) throw std::invalid_argument("problem needs an input model and a limit-state function");
  return Runner(problem, config, on_iteration).run();
}

}  // namespace sser
