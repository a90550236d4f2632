#include "sser/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sser/input_model.hpp"
#include "sser/normal.hpp"

namespace sser {

std::string to_string(EstimatorKind k) { return k == EstimatorKind::MCS ? "mcs" : "sus"; }

std::size_t EstimatorConfig::mcs_size(std::optional<double> pf_prev) const {
  const double pf = std::max(pf_prev.value_or(0.0), mcs_pf_floor);
  const double n = std::max(static_cast<double>(mcs_min), mcs_target_failures / pf);
  return static_cast<std::size_t>(std::min(n, static_cast<double>(mcs_max)));
}

McsResult mcs_on_surrogate(const BatchPredictor& predictor, const Box& box, std::size_t n, Rng& rng,
                           std::size_t chunk) {
  if (n == 0) throw std::invalid_argument("MCS sample size must be positive");
  chunk = std::max<std::size_t>(chunk, 1);
  std::size_t failures = 0;
  Vector values;
  for (std::size_t done = 0; done < n; done += chunk) {
    const std::size_t m = std::min(chunk, n - done);
    const PointMatrix u = sample_box(box.lo, box.hi, m, rng);
    predictor(u, values);
    for (Eigen::Index i = 0; i < values.size(); ++i) failures += values[i] <= 0.0 ? 1 : 0;
  }
  McsResult r;
  r.n = n;
  r.pf = static_cast<double>(failures) / static_cast<double>(n);
  r.cov = r.pf > 0.0 ? std::sqrt((1.0 - r.pf) / (static_cast<double>(n) * r.pf))
                     : std::numeric_limits<double>::infinity();
  return r;
}

SusResult subset_simulation_on_surrogate(const BatchPredictor& predictor, const Box& box, const SusParams& params,
                                         Rng& rng) {
  if (!(params.p0 > 0.0 && params.p0 < 1.0)) throw std::invalid_argument("SuS level probability must lie in (0, 1)");
  if (params.samples_per_level < 2 || params.max_levels < 1) throw std::invalid_argument("invalid SuS sample settings");
  const std::size_t n = params.samples_per_level;
  const std::size_t n_seeds = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(params.p0 * static_cast<double>(n))), 1, n - 1);
  const std::size_t m = box.dim();
  const auto cols = static_cast<Eigen::Index>(m);

  SusResult result;
  PointMatrix samples = sample_box(box.lo, box.hi, n, rng);
  Vector g;
  predictor(samples, g);
  result.evaluations = n;
  result.levels = 1;

  auto fraction_failed = [&](const Vector& v) {
    std::size_t c = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) c += v[i] <= 0.0 ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(v.size());
  };
  const double first_level_pf = fraction_failed(g);

  double log_scale = std::log(params.initial_scale);
  std::size_t adapt_step = 0;
  std::vector<Eigen::Index> order(n);

  while (true) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return g[a] < g[b]; });
    const double threshold = 0.5 * (g[order[n_seeds - 1]] + g[order[n_seeds]]);
    const double level_factor = std::pow(params.p0, static_cast<double>(result.levels - 1));
    if (threshold <= 0.0 || result.levels >= params.max_levels) {
      result.pf = level_factor * fraction_failed(g);
      return result;
    }
    if (!result.thresholds.empty() && threshold >= result.thresholds.back()) {
      result.pf = first_level_pf;
      result.fell_back_to_mcs = true;
      return result;
    }
    result.thresholds.push_back(threshold);

    // Seeds and their spread set the proposal widths for this level.
    PointMatrix current(static_cast<Eigen::Index>(n_seeds), cols);
    Vector current_g(static_cast<Eigen::Index>(n_seeds));
    for (std::size_t s = 0; s < n_seeds; ++s) {
      current.row(static_cast<Eigen::Index>(s)) = samples.row(order[s]);
      current_g[static_cast<Eigen::Index>(s)] = g[order[s]];
    }
    std::vector<double> spread(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto c = current.col(static_cast<Eigen::Index>(j));
      const double mean = c.mean();
      const double var = n_seeds > 1 ? (c.array() - mean).square().sum() / static_cast<double>(n_seeds - 1) : 0.0;
      spread[j] = std::max(std::sqrt(var), 1e-12 * box.width(j));
    }

    PointMatrix next(static_cast<Eigen::Index>(n), cols);
    Vector next_g(static_cast<Eigen::Index>(n));
    Eigen::Index filled = 0;
    auto append = [&](Eigen::Index s) {
      next.row(filled) = current.row(s);
      next_g[filled] = current_g[s];
      ++filled;
    };
    for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(n_seeds); ++s) append(s);

    // Chains advance in lockstep so every step is one batched evaluation.
    const std::size_t base_len = n / n_seeds;
    const std::size_t extra = n % n_seeds;
    const std::size_t steps = base_len + (extra > 0 ? 1 : 0);
    PointMatrix candidate(static_cast<Eigen::Index>(n_seeds), cols);
    Vector candidate_g;
    for (std::size_t step = 1; step < steps; ++step) {
      std::vector<Eigen::Index> active;
      for (std::size_t s = 0; s < n_seeds; ++s) {
        if (step < base_len + (s < extra ? 1 : 0)) active.push_back(static_cast<Eigen::Index>(s));
      }
      const double scale = std::exp(log_scale);
      candidate.resize(static_cast<Eigen::Index>(active.size()), cols);
      for (std::size_t a = 0; a < active.size(); ++a) {
        const Eigen::Index s = active[a];
        for (std::size_t j = 0; j < m; ++j) {
          const double half = std::sqrt(3.0) * scale * spread[j];
          const double cur = current(s, static_cast<Eigen::Index>(j));
          const double prop = cur + half * (2.0 * rng.uniform() - 1.0);
          candidate(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)) =
              (prop >= box.lo[j] && prop <= box.hi[j]) ? prop : cur;
        }
      }
      predictor(candidate, candidate_g);
      result.evaluations += active.size();
      std::size_t accepted = 0;
      for (std::size_t a = 0; a < active.size(); ++a) {
        const Eigen::Index s = active[a];
        if (candidate_g[static_cast<Eigen::Index>(a)] <= threshold) {
          current.row(s) = candidate.row(static_cast<Eigen::Index>(a));
          current_g[s] = candidate_g[static_cast<Eigen::Index>(a)];
          ++accepted;
        }
        append(s);
      }
      ++adapt_step;
      const double rate = static_cast<double>(accepted) / static_cast<double>(active.size());
      log_scale += (rate - params.target_acceptance) / std::sqrt(static_cast<double>(adapt_step));
      log_scale = std::clamp(log_scale, std::log(1e-4), std::log(10.0));
    }
    samples = std::move(next);
    g = std::move(next_g);
    ++result.levels;
  }
}

double ConditionalEstimate::variance() const {
  const std::size_t b = replication_pf.size();
  if (b < 2) return 0.0;
  // Shifted by the first value so identical replications give exactly 0.
  const double shift = replication_pf[0];
  double sum = 0.0, sq = 0.0;
  for (double v : replication_pf) {
    sum += v - shift;
    sq += (v - shift) * (v - shift);
  }
  const double bd = static_cast<double>(b);
  return std::max(0.0, (sq - sum * sum / bd) / (bd - 1.0));
}

ConditionalEstimate estimate_conditional_pf(const SseTree& tree, NodeKey k, const EstimatorConfig& config, Rng& rng,
                                            std::optional<double> pf_prev) {
  const DomainNode& node = tree.node(k);
  if (!node.terminal) throw std::invalid_argument("conditional estimates are defined for terminal domains only");
  const PathPredictor predictor(tree, k);
  const std::size_t b_count = tree.replications();
  const bool spread = predictor.has_ensemble();

  ConditionalEstimate est;
  est.key = k;
  est.mcs_samples = config.mcs_size(pf_prev);

  std::vector<std::size_t> failures(b_count, 0);
  std::size_t mean_failures = 0;
  Rng sample_rng = rng.derive(0);
  Vector mean;
  Matrix reps;
  const std::size_t chunk = std::max<std::size_t>(config.chunk, 1);
  for (std::size_t done = 0; done < est.mcs_samples; done += chunk) {
    const std::size_t m = std::min(chunk, est.mcs_samples - done);
    const PointMatrix u = sample_box(node.box.lo, node.box.hi, m, sample_rng);
    predictor.evaluate(u, mean, spread ? &reps : nullptr);
    for (Eigen::Index i = 0; i < mean.size(); ++i) mean_failures += mean[i] <= 0.0 ? 1 : 0;
    if (spread) {
      for (Eigen::Index c = 0; c < reps.cols(); ++c) {
        std::size_t f = 0;
        for (Eigen::Index i = 0; i < reps.rows(); ++i) f += reps(i, c) <= 0.0 ? 1 : 0;
        failures[static_cast<std::size_t>(c)] += f;
      }
    }
  }
  const double n = static_cast<double>(est.mcs_samples);

  auto escalate = [&](std::optional<std::size_t> b, std::uint64_t tag) {
    Rng sus_rng = rng.derive(1, tag);
    const Selector sel = b ? Selector::rep(*b) : Selector::mean();
    const SusResult r = subset_simulation_on_surrogate(
        [&](const PointMatrix& u, Vector& out) { predictor.evaluate(u, sel, out); }, node.box, config.sus, sus_rng);
    ++est.escalated;
    est.estimator = EstimatorKind::SubsetSimulation;
    est.max_sus_levels = std::max(est.max_sus_levels, r.levels);
    return r.pf;
  };

  est.mean_pf = static_cast<double>(mean_failures) / n;
  if (mean_failures == 0 && config.escalate_to_sus) est.mean_pf = escalate(std::nullopt, 0);

  est.replication_pf.resize(b_count);
  if (!spread) {
    // Without a terminal ensemble every replication coincides with the mean predictor.
    std::fill(est.replication_pf.begin(), est.replication_pf.end(), est.mean_pf);
    return est;
  }
  for (std::size_t b = 0; b < b_count; ++b) {
    est.replication_pf[b] = static_cast<double>(failures[b]) / n;
    if (failures[b] == 0 && config.escalate_to_sus) est.replication_pf[b] = escalate(b, b + 1);
  }
  return est;
}

double reliability_index(double pf) {
  if (pf <= 0.0) return std::numeric_limits<double>::infinity();
  if (pf >= 1.0) return -std::numeric_limits<double>::infinity();
  return -normal::ppf(pf);
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return values[lo] + w * (values[hi] - values[lo]);
}

FailureEstimate aggregate(const std::vector<ConditionalEstimate>& conditionals, const std::vector<double>& masses,
                          double alpha) {
  if (conditionals.empty() || conditionals.size() != masses.size()) {
    throw std::invalid_argument("aggregate needs one mass per conditional estimate");
  }
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5)");
  const double total_mass = std::accumulate(masses.begin(), masses.end(), 0.0);
  if (std::abs(total_mass - 1.0) > 1e-9) throw std::invalid_argument("terminal masses must sum to 1");
  const std::size_t b_count = conditionals.front().replication_pf.size();

  FailureEstimate est;
  std::vector<double> totals(b_count, 0.0);
  for (std::size_t i = 0; i < conditionals.size(); ++i) {
    const auto& c = conditionals[i];
    if (c.replication_pf.size() != b_count) throw std::invalid_argument("conditionals disagree on replication count");
    est.pf += masses[i] * c.mean_pf;
    est.variance += masses[i] * masses[i] * c.variance();
    for (std::size_t b = 0; b < b_count; ++b) totals[b] += masses[i] * c.replication_pf[b];
  }
  est.pf_lo = b_count > 0 ? empirical_quantile(totals, alpha) : est.pf;
  est.pf_hi = b_count > 0 ? empirical_quantile(totals, 1.0 - alpha) : est.pf;
  if (est.pf < est.pf_lo || est.pf > est.pf_hi) {
    est.pf_lo = std::min(est.pf_lo, est.pf);
    est.pf_hi = std::max(est.pf_hi, est.pf);
    est.bounds_widened = true;
  }
  est.beta = reliability_index(est.pf);
  est.beta_lo = reliability_index(est.pf_hi);
  est.beta_hi = reliability_index(est.pf_lo);
  est.beta_defined = est.pf > 0.0;
  return est;
}

}  // namespace sser
