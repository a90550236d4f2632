#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sser/basis.hpp"
#include "sser/estimators.hpp"
#include "sser/input_model.hpp"
#include "sser/rng.hpp"
#include "sser/spectral.hpp"
#include "sser/sse_tree.hpp"

namespace sser {

struct RunConfig {
  std::size_t n_ref = 15;
  int p_max = 2;
  int rank_limit = kUnlimitedRank;
  std::size_t replications = 500;
  std::size_t n_tot = 1000;
  double eps_beta = 0.03;
  double eps_pf = 0.001;
  double eps_t = 0.01;
  double alpha = 0.025;
  std::size_t n_aux = 10000;
  std::size_t stop_window = 3;
  double min_child_fraction = 0.01;
  std::size_t rejection_factor = 100;
  ExpansionSpace space = ExpansionSpace::QuantileSpace;
  std::size_t n_boundary = 2000;  // envelope boundary sample (RealEnvelope only)
  BootstrapMode bootstrap = BootstrapMode::FixedSupport;
  bool latin_hypercube = false;
  EstimatorConfig estimators;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// Batch limit-state evaluator in real space; g <= 0 is failure.
using LimitState = std::function<std::vector<double>(const PointMatrix& x)>;

struct Problem {
  std::shared_ptr<const InputModel> model;
  LimitState lsf;
};

enum class SplitCriterion { Misclassification, BoundaryBand };

std::string to_string(SplitCriterion c);

struct TerminalRecord {
  NodeKey key;
  double mass = 0.0;
  double pf = 0.0;
  double variance = 0.0;
  double error = 0.0;
};

struct IterationRecord {
  std::size_t iteration = 0;  // 0 is the initial expansion
  std::size_t evaluations = 0;
  FailureEstimate estimate;
  std::optional<NodeKey> refined;
  std::optional<SplitInfo> split;
  double split_objective = 0.0;
  SplitCriterion criterion = SplitCriterion::Misclassification;
  bool reprioritized = false;
  std::size_t expansions_created = 0;
  std::vector<TerminalRecord> terminals;
};

enum class Termination { BetaBounds, Budget, FewExpansions, NoRefinableDomain };

std::string to_string(Termination t);

struct RunTrace {
  std::vector<IterationRecord> iterations;
  std::optional<Termination> termination;
  std::vector<NodeKey> inert;
};

struct RunResult {
  FailureEstimate estimate;
  RunTrace trace;
  SseTree tree;
  std::map<NodeKey, ConditionalEstimate> conditionals;
};

/// Raised when the limit-state evaluator fails; carries the trace so far.
class RunAborted : public std::runtime_error {
public:
  RunAborted(const std::string& what, RunTrace trace) : std::runtime_error(what), trace_(std::move(trace)) {}
  const RunTrace& trace() const { return trace_; }

private:
  RunTrace trace_;
};

/// Thrown by build_auxiliary_samples when neither criterion separates the sample.
class UnsplittableDomain : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Contribution of a terminal to the total estimator variance: V^2 Var.
double domain_error(double mass, double variance);

/// True when the last three totals vary by less than eps relative to the
/// latest one (sample variance over the squared latest value).
bool reprioritization_check(std::span<const double> pf_history, double eps_pf);

struct TerminalState {
  NodeKey key;
  double mass = 0.0;
  double error = 0.0;
  bool inert = false;
};

/// Largest error (or largest mass when reprioritizing) among non-inert
/// terminals; ties go to larger mass, then lower (level, index).
std::optional<NodeKey> select_refinement_domain(std::span<const TerminalState> terminals, bool reprioritize);

struct AuxiliarySamples {
  PointMatrix positive;  // Z+: points with nonzero criterion
  PointMatrix zero;      // Z0
  SplitCriterion criterion = SplitCriterion::Misclassification;
  double band_t = 0.0;
};

AuxiliarySamples build_auxiliary_samples(const SseTree& tree, NodeKey k, std::size_t n_aux, double eps_t, Rng& rng);

struct SplitChoice {
  std::size_t dim = 0;
  double location = 0.0;
  double objective = 0.0;
};

/// Objective L_i(v) = |F+(v) - F0(v)| of the empirical marginal CDFs.
double split_objective(std::span<const double> positive, std::span<const double> zero, double v);

/// Best axis-aligned cut separating Z+ from Z0 over midpoint candidates; the
/// location is clamped so each side keeps `min_fraction` of the box width.
SplitChoice find_split(const PointMatrix& positive, const PointMatrix& zero, const Box& box,
                       double min_fraction = 0.01);

struct EnrichmentPlan {
  std::size_t uniform = 0;
  std::size_t targeted = 0;
};

EnrichmentPlan plan_enrichment(std::size_t n_ref, std::size_t n_curr);

/// New quantile-space points in `target`: plan.uniform uniform draws and
/// plan.targeted draws accepted where the criterion of `source` is nonzero
/// (rejection capped at rejection_factor * targeted proposals, then uniform).
PointMatrix sample_enrichment(const SseTree& tree, NodeKey source, const Box& target, const EnrichmentPlan& plan,
                              SplitCriterion criterion, double band_t, Rng& rng, std::size_t rejection_factor = 100);

/// True when the relative beta-bound width stays below eps_beta for the last
/// `window` estimates.
bool check_stopping(std::span<const FailureEstimate> history, double eps_beta, std::size_t window = 3);

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Adaptive refinement loop. The reprioritization check sees only totals
/// recorded since the last mass-driven refinement.
RunResult run_sser(const Problem& problem, const RunConfig& config, const IterationCallback& on_iteration = {});

}  // namespace sser
