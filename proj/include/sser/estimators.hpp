#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sser/basis.hpp"
#include "sser/rng.hpp"
#include "sser/sse_tree.hpp"
#include "sser/types.hpp"

namespace sser {

/// Evaluates a surrogate at every row of a quantile-space point matrix.
using BatchPredictor = std::function<void(const PointMatrix& u, Vector& out)>;

enum class EstimatorKind { MCS, SubsetSimulation };

std::string to_string(EstimatorKind k);

struct SusParams {
  double p0 = 0.1;
  std::size_t samples_per_level = 1000;
  std::size_t max_levels = 20;
  double target_acceptance = 0.44;
  double initial_scale = 0.6;
};

struct EstimatorConfig {
  std::size_t mcs_min = 10000;
  std::size_t mcs_max = 1000000;
  double mcs_target_failures = 100.0;
  double mcs_pf_floor = 1e-2;
  std::size_t chunk = 10000;
  bool escalate_to_sus = true;
  SusParams sus;

  /// Per-domain MCS size: max(mcs_min, target / max(pf_prev, floor)), capped at mcs_max.
  std::size_t mcs_size(std::optional<double> pf_prev) const;
};

struct McsResult {
  double pf = 0.0;
  double cov = 0.0;  // infinite when pf = 0
  std::size_t n = 0;
};

/// Uniform Monte Carlo in `box`; failure is predictor <= 0.
McsResult mcs_on_surrogate(const BatchPredictor& predictor, const Box& box, std::size_t n, Rng& rng,
                           std::size_t chunk = 10000);

struct SusResult {
  double pf = 0.0;
  std::size_t levels = 0;        // number of sampled levels, including the first
  std::size_t evaluations = 0;
  bool fell_back_to_mcs = false;  // threshold sequence stalled
  std::vector<double> thresholds;
};

/// Subset simulation with component-wise Metropolis chains restricted to the box.
SusResult subset_simulation_on_surrogate(const BatchPredictor& predictor, const Box& box, const SusParams& params,
                                         Rng& rng);

struct ConditionalEstimate {
  NodeKey key;
  std::vector<double> replication_pf;  // length B
  double mean_pf = 0.0;
  EstimatorKind estimator = EstimatorKind::MCS;  // SubsetSimulation if any quantity escalated
  std::size_t mcs_samples = 0;
  std::size_t escalated = 0;  // replications (and mean) re-estimated by subset simulation
  std::size_t max_sus_levels = 0;

  /// Sample variance (n - 1) of the replication estimates.
  double variance() const;
};

/// Conditional failure probability of terminal k for the mean predictor and
/// every replication, on one shared uniform sample of the box.
ConditionalEstimate estimate_conditional_pf(const SseTree& tree, NodeKey k, const EstimatorConfig& config, Rng& rng,
                                            std::optional<double> pf_prev = std::nullopt);

struct FailureEstimate {
  double pf = 0.0;
  double variance = 0.0;
  double pf_lo = 0.0;
  double pf_hi = 0.0;
  double beta = 0.0;
  double beta_lo = 0.0;
  double beta_hi = 0.0;
  bool beta_defined = false;   // false when pf = 0 (beta = +inf)
  bool bounds_widened = false;  // bootstrap interval excluded pf and was extended
  std::size_t evaluations = 0;
};

/// Generalized reliability index -Phi^-1(pf); +inf for pf = 0.
double reliability_index(double pf);

/// Empirical quantile with linear interpolation between order statistics.
double empirical_quantile(std::vector<double> values, double q);

/// Total estimate from per-terminal conditionals and masses.
FailureEstimate aggregate(const std::vector<ConditionalEstimate>& conditionals, const std::vector<double>& masses,
                          double alpha);

}  // namespace sser
