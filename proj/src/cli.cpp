#include "sser/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "sser/benchmarks.hpp"
#include "sser/normal.hpp"

namespace sser {

namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::SSER: return "sser";
    case Method::MCS: return "mcs";
    case Method::SuS: return "sus";
  }
  return "unknown";
}

namespace {

void check_keys(const Json& block, const std::string& name, std::initializer_list<const char*> allowed) {
  if (!block.is_object()) throw std::invalid_argument("config: '" + name + "' must be an object");
  for (const auto& [key, value] : block.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw std::invalid_argument("config: unknown key '" + name + "." + key + "'");
    }
  }
}

template <typename T>
void read(const Json& block, const char* key, T& target) {
  if (block.contains(key)) target = block.at(key).get<T>();
}

Method method_from_string(const std::string& s) {
  if (s == "sser") return Method::SSER;
  if (s == "mcs") return Method::MCS;
  if (s == "sus") return Method::SuS;
  throw std::invalid_argument("config: unknown method '" + s + "'");
}

Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["n_ref"] = c.n_ref;
  j["p_max"] = c.p_max;
  j["rank_limit"] = c.rank_limit == kUnlimitedRank ? Json(nullptr) : Json(c.rank_limit);
  j["B"] = c.replications;
  j["n_tot"] = c.n_tot;
  j["eps_beta"] = c.eps_beta;
  j["eps_pf"] = c.eps_pf;
  j["eps_t"] = c.eps_t;
  j["alpha"] = c.alpha;
  j["n_aux"] = c.n_aux;
  j["space"] = c.space == ExpansionSpace::RealEnvelope ? "real_envelope" : "quantile";
  j["bootstrap"] = c.bootstrap == BootstrapMode::FullReselection ? "full_reselection" : "fixed_support";
  j["latin_hypercube"] = c.latin_hypercube;
  const auto& e = c.estimators;
  j["estimators"] = {{"mcs_min", e.mcs_min},
                     {"mcs_max", e.mcs_max},
                     {"mcs_target_failures", e.mcs_target_failures},
                     {"mcs_pf_floor", e.mcs_pf_floor},
                     {"escalate", e.escalate_to_sus},
                     {"sus",
                      {{"p0", e.sus.p0},
                       {"samples_per_level", e.sus.samples_per_level},
                       {"max_levels", e.sus.max_levels},
                       {"target_acceptance", e.sus.target_acceptance}}}};
  return j;
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : (std::isnan(v) ? "" : format_double(v)); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

Json quantile_triplet(std::vector<double> values) {
  return {{"q10", empirical_quantile(values, 0.1)},
          {"q50", empirical_quantile(values, 0.5)},
          {"q90", empirical_quantile(values, 0.9)}};
}

// Beta quantiles follow from the pf quantiles (beta decreases in pf), which
// keeps infinite values out of the interpolation.
Json beta_triplet(const std::vector<double>& pf) {
  return {{"q10", number_or_null(reliability_index(empirical_quantile(pf, 0.9)))},
          {"q50", number_or_null(reliability_index(empirical_quantile(pf, 0.5)))},
          {"q90", number_or_null(reliability_index(empirical_quantile(pf, 0.1)))}};
}

FailureEstimate plain_mcs(const Problem& p, std::size_t n, double alpha, Rng& rng) {
  std::size_t fails = 0;
  const std::size_t chunk = 100000;
  for (std::size_t done = 0; done < n; done += chunk) {
    const PointMatrix x = p.model->sample(std::min(chunk, n - done), rng);
    for (double g : p.lsf(x)) fails += g <= 0.0 ? 1 : 0;
  }
  FailureEstimate e;
  e.pf = static_cast<double>(fails) / static_cast<double>(n);
  e.variance = e.pf * (1.0 - e.pf) / static_cast<double>(n);
  const double z = normal::ppf(1.0 - alpha);
  e.pf_lo = std::max(0.0, e.pf - z * std::sqrt(e.variance));
  e.pf_hi = std::min(1.0, e.pf + z * std::sqrt(e.variance));
  e.beta = reliability_index(e.pf);
  e.beta_lo = reliability_index(e.pf_hi);
  e.beta_hi = reliability_index(e.pf_lo);
  e.beta_defined = e.pf > 0.0;
  e.evaluations = n;
  return e;
}

}  // namespace

StudySpec parse_study(const Json& config) {
  try {
    check_keys(config, "config", {"problem", "input_model", "sser", "estimators", "study"});
    StudySpec spec;
    if (!config.contains("problem")) throw std::invalid_argument("config: missing 'problem'");
    const Json& problem = config.at("problem");
    if (problem.is_string()) {
      spec.problem = problem.get<std::string>();
      const auto ids = benchmark_ids();
      if (std::find(ids.begin(), ids.end(), spec.problem) == ids.end()) {
        throw std::invalid_argument("config: unknown problem '" + spec.problem + "'");
      }
      spec.config = make_benchmark(spec.problem).recommended;
    } else {
      check_keys(problem, "problem", {"external"});
      const Json& ext = problem.at("external");
      check_keys(ext, "problem.external", {"command", "batch_size", "timeout"});
      ExternalLsfSpec e;
      e.command = ext.at("command").get<std::vector<std::string>>();
      read(ext, "batch_size", e.batch_size);
      read(ext, "timeout", e.timeout_seconds);
      if (e.command.empty()) throw std::invalid_argument("config: external command is empty");
      spec.problem = "external";
      spec.external = std::move(e);
    }
    if (config.contains("input_model")) {
      spec.model = std::make_shared<const InputModel>(input_model_from_json(config.at("input_model")));
    } else if (spec.external) {
      throw std::invalid_argument("config: external problems need an 'input_model' block");
    }

    RunConfig& c = spec.config;
    if (config.contains("sser")) {
      const Json& s = config.at("sser");
      check_keys(s, "sser", {"n_ref", "p_max", "rank_limit", "B", "n_tot", "eps_beta", "eps_pf", "eps_t", "alpha",
                             "n_aux", "space", "bootstrap", "latin_hypercube", "n_boundary"});
      read(s, "n_ref", c.n_ref);
      read(s, "p_max", c.p_max);
      if (s.contains("rank_limit")) c.rank_limit = s.at("rank_limit").is_null() ? kUnlimitedRank : s.at("rank_limit").get<int>();
      read(s, "B", c.replications);
      read(s, "n_tot", c.n_tot);
      read(s, "eps_beta", c.eps_beta);
      read(s, "eps_pf", c.eps_pf);
      read(s, "eps_t", c.eps_t);
      read(s, "alpha", c.alpha);
      read(s, "n_aux", c.n_aux);
      read(s, "latin_hypercube", c.latin_hypercube);
      read(s, "n_boundary", c.n_boundary);
      if (s.contains("space")) {
        const auto v = s.at("space").get<std::string>();
        if (v == "quantile") c.space = ExpansionSpace::QuantileSpace;
        else if (v == "real_envelope") c.space = ExpansionSpace::RealEnvelope;
        else throw std::invalid_argument("config: sser.space must be 'quantile' or 'real_envelope'");
      }
      if (s.contains("bootstrap")) {
        const auto v = s.at("bootstrap").get<std::string>();
        if (v == "fixed_support") c.bootstrap = BootstrapMode::FixedSupport;
        else if (v == "full_reselection") c.bootstrap = BootstrapMode::FullReselection;
        else throw std::invalid_argument("config: sser.bootstrap must be 'fixed_support' or 'full_reselection'");
      }
    }
    if (config.contains("estimators")) {
      const Json& e = config.at("estimators");
      check_keys(e, "estimators", {"mcs_min", "mcs_max", "mcs_target_failures", "mcs_pf_floor", "escalate", "sus"});
      read(e, "mcs_min", c.estimators.mcs_min);
      read(e, "mcs_max", c.estimators.mcs_max);
      read(e, "mcs_target_failures", c.estimators.mcs_target_failures);
      read(e, "mcs_pf_floor", c.estimators.mcs_pf_floor);
      read(e, "escalate", c.estimators.escalate_to_sus);
      if (e.contains("sus")) {
        const Json& s = e.at("sus");
        check_keys(s, "estimators.sus", {"p0", "samples_per_level", "max_levels", "target_acceptance"});
        read(s, "p0", c.estimators.sus.p0);
        read(s, "samples_per_level", c.estimators.sus.samples_per_level);
        read(s, "max_levels", c.estimators.sus.max_levels);
        read(s, "target_acceptance", c.estimators.sus.target_acceptance);
      }
      if (c.estimators.mcs_min < 1000 || c.estimators.mcs_max < c.estimators.mcs_min) {
        throw std::invalid_argument("config: need 1000 <= mcs_min <= mcs_max");
      }
    }
    if (config.contains("study")) {
      const Json& s = config.at("study");
      check_keys(s, "study", {"method", "seeds", "runs", "first_seed", "out", "mcs_samples", "write_tree"});
      if (s.contains("method")) spec.method = method_from_string(s.at("method").get<std::string>());
      if (s.contains("seeds")) {
        spec.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
      } else if (s.contains("runs")) {
        const auto runs = s.at("runs").get<std::size_t>();
        const auto first = s.value("first_seed", std::uint64_t{1});
        spec.seeds.clear();
        for (std::size_t i = 0; i < runs; ++i) spec.seeds.push_back(first + i);
      }
      if (s.contains("out")) spec.out_dir = s.at("out").get<std::string>();
      read(s, "mcs_samples", spec.mcs_samples);
      read(s, "write_tree", spec.write_tree);
    }
    if (spec.seeds.empty()) throw std::invalid_argument("config: at least one seed is required");
    if (std::set<std::uint64_t>(spec.seeds.begin(), spec.seeds.end()).size() != spec.seeds.size()) {
      throw std::invalid_argument("config: seeds must be distinct");
    }
    if (spec.method == Method::MCS && spec.mcs_samples == 0) throw std::invalid_argument("config: mcs_samples must be positive");
    c.validate();
    return spec;
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

StudySpec load_study(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return parse_study(j);
}

ProblemInstance instantiate_problem(const StudySpec& spec) {
  ProblemInstance inst;
  if (spec.external) {
    inst.child = std::make_shared<ExternalLsf>(*spec.external);
    auto child = inst.child;
    inst.problem.lsf = [child](const PointMatrix& x) { return child->evaluate(x); };
    inst.problem.model = spec.model;
  } else {
    const auto b = make_benchmark(spec.problem);
    inst.problem = b.problem();
    if (spec.model) {
      if (spec.model->dim() != b.model->dim()) throw std::invalid_argument("input_model dimension differs from the problem");
      inst.problem.model = spec.model;
    }
  }
  return inst;
}

std::string trace_csv_header() {
  return "iteration,N_evals,pf,var,beta,beta_lo,beta_hi,pf_lo,pf_hi,refined_level,refined_index,split_dim,"
         "split_location,split_objective,criterion,reprioritized,expansions_created,terminals\n";
}

std::string trace_csv_row(const IterationRecord& r) {
  std::ostringstream s;
  const auto& e = r.estimate;
  s << r.iteration << ',' << r.evaluations << ',' << csv_number(e.pf) << ',' << csv_number(e.variance) << ','
    << csv_number(e.beta) << ',' << csv_number(e.beta_lo) << ',' << csv_number(e.beta_hi) << ','
    << csv_number(e.pf_lo) << ',' << csv_number(e.pf_hi) << ',';
  if (r.refined) {
    s << r.refined->level << ',' << r.refined->index << ',' << r.split->dim << ',' << format_double(r.split->location)
      << ',' << format_double(r.split_objective) << ',' << to_string(r.criterion) << ',' << (r.reprioritized ? 1 : 0);
  } else {
    s << ",,,,,,";
  }
  s << ',' << r.expansions_created << ',' << r.terminals.size() << '\n';
  return s.str();
}

SeedOutcome run_seed(const StudySpec& spec, std::uint64_t seed, const fs::path* seed_dir) {
  SeedOutcome out;
  out.seed = seed;
  std::ofstream trace_file;
  if (seed_dir) {
    fs::create_directories(*seed_dir);
    trace_file.open(*seed_dir / "trace.csv", std::ios::binary);
    trace_file << trace_csv_header() << std::flush;
  }
  auto on_row = [&](const IterationRecord& r) {
    out.trace.push_back(r);
    if (trace_file) trace_file << trace_csv_row(r) << std::flush;
  };

  Json result;
  result["problem"] = spec.problem;
  result["method"] = to_string(spec.method);
  result["seed"] = seed;
  RunConfig config = spec.config;
  config.seed = seed;
  result["settings"] = run_config_to_json(config);
  std::optional<RunResult> sser_result;
  try {
    ProblemInstance inst = instantiate_problem(spec);
    Rng rng(seed);
    switch (spec.method) {
      case Method::SSER: {
        sser_result.emplace(run_sser(inst.problem, config, on_row));
        out.estimate = sser_result->estimate;
        out.termination = to_string(*sser_result->trace.termination);
        break;
      }
      case Method::MCS: {
        IterationRecord r;
        r.estimate = plain_mcs(inst.problem, spec.mcs_samples, config.alpha, rng);
        r.evaluations = r.estimate.evaluations;
        on_row(r);
        out.estimate = r.estimate;
        out.termination = "completed";
        result["mcs_samples"] = spec.mcs_samples;
        break;
      }
      case Method::SuS: {
        const auto& model = *inst.problem.model;
        const auto& lsf = inst.problem.lsf;
        const SusResult sus = subset_simulation_on_surrogate(
            [&](const PointMatrix& u, Vector& g) {
              const auto v = lsf(model.quantile_to_real(u));
              g = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
            },
            Box::unit(model.dim()), config.estimators.sus, rng);
        IterationRecord r;
        r.estimate.pf = r.estimate.pf_lo = r.estimate.pf_hi = sus.pf;
        r.estimate.beta = r.estimate.beta_lo = r.estimate.beta_hi = reliability_index(sus.pf);
        r.estimate.beta_defined = sus.pf > 0.0;
        r.estimate.evaluations = r.evaluations = sus.evaluations;
        on_row(r);
        out.estimate = r.estimate;
        out.termination = sus.fell_back_to_mcs ? "sus_stalled" : "completed";
        result["sus_levels"] = sus.levels;
        break;
      }
    }
    out.ok = true;
    result["status"] = "ok";
  } catch (const RunAborted& e) {
    out.error = e.what();
    out.termination = "aborted";
    result["status"] = "aborted";
    result["error"] = e.what();
  } catch (const std::exception& e) {
    out.error = e.what();
    out.termination = "error";
    result["status"] = "error";
    result["error"] = e.what();
  }

  result["termination"] = out.termination;
  if (out.ok) {
    result["estimate"] = failure_estimate_to_json(out.estimate);
    result["evaluations"] = out.estimate.evaluations;
    result["iterations"] = out.trace.empty() ? 0 : out.trace.back().iteration;
  }
  if (sser_result) {
    Json terms = Json::array();
    for (const auto& t : sser_result->trace.iterations.back().terminals) {
      terms.push_back({{"key", node_key_to_json(t.key)}, {"mass", t.mass}, {"pf", t.pf}, {"variance", t.variance}});
    }
    result["terminals"] = std::move(terms);
    Json inert = Json::array();
    for (NodeKey k : sser_result->trace.inert) inert.push_back(node_key_to_json(k));
    result["inert"] = std::move(inert);
  }
  if (seed_dir) {
    write_text(*seed_dir / "result.json", result.dump(2) + "\n");
    if (sser_result && spec.write_tree) {
      write_text(*seed_dir / "tree.json", tree_to_json(sser_result->tree, &sser_result->conditionals).dump() + "\n");
    }
  }
  return out;
}

Json study_summary(const StudySpec& spec, const std::vector<SeedOutcome>& outcomes) {
  Json s;
  s["problem"] = spec.problem;
  s["method"] = to_string(spec.method);
  s["seeds"] = spec.seeds;
  std::vector<const SeedOutcome*> ok;
  Json failed = Json::array();
  for (const auto& o : outcomes) {
    if (o.ok && !o.trace.empty()) ok.push_back(&o);
    else failed.push_back({{"seed", o.seed}, {"error", o.error}});
  }
  s["completed"] = ok.size();
  s["failed"] = std::move(failed);
  if (ok.empty()) return s;

  std::vector<double> pf, evals;
  for (const auto* o : ok) {
    pf.push_back(o->estimate.pf);
    evals.push_back(static_cast<double>(o->estimate.evaluations));
  }
  s["final"] = {{"pf", quantile_triplet(pf)}, {"beta", beta_triplet(pf)}, {"evaluations", quantile_triplet(evals)}};

  // Seeds that stopped earlier keep contributing their final row.
  std::size_t rows = 0;
  for (const auto* o : ok) rows = std::max(rows, o->trace.size());
  Json per = Json::array();
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> p, n;
    std::size_t active = 0;
    for (const auto* o : ok) {
      const auto& r = o->trace[std::min(i, o->trace.size() - 1)];
      active += i < o->trace.size() ? 1 : 0;
      p.push_back(r.estimate.pf);
      n.push_back(static_cast<double>(r.evaluations));
    }
    per.push_back({{"iteration", i}, {"active", active}, {"pf", quantile_triplet(p)}, {"beta", beta_triplet(p)},
                   {"evaluations", quantile_triplet(n)}});
  }
  s["per_iteration"] = std::move(per);
  return s;
}

std::size_t thread_cap() {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SSER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) cap = static_cast<std::size_t>(v);
  }
  return cap;
}

int run_study(const StudySpec& spec, std::ostream& log) {
  fs::create_directories(spec.out_dir);
  std::vector<SeedOutcome> outcomes(spec.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < spec.seeds.size(); i = next++) {
      const std::uint64_t seed = spec.seeds[i];
      const fs::path dir = spec.out_dir / ("seed_" + std::to_string(seed));
      outcomes[i] = run_seed(spec, seed, &dir);
      std::lock_guard lock(log_mutex);
      const auto& o = outcomes[i];
      if (o.ok) {
        log << "seed " << seed << ": pf=" << format_double(o.estimate.pf) << " beta=" << format_double(o.estimate.beta)
            << " evaluations=" << o.estimate.evaluations << " (" << o.termination << ")\n";
      } else {
        log << "seed " << seed << ": " << o.termination << ": " << o.error << "\n";
      }
    }
  };
  const std::size_t n_threads = std::min(thread_cap(), spec.seeds.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  write_text(spec.out_dir / "summary.json", study_summary(spec, outcomes).dump(2) + "\n");
  return std::all_of(outcomes.begin(), outcomes.end(), [](const SeedOutcome& o) { return o.ok; }) ? 0 : 1;
}

void inspect_tree(const Json& j, std::ostream& out) {
  const LoadedTree loaded = tree_from_json(j);
  const SseTree& tree = loaded.tree;
  struct Row {
    NodeKey key;
    double mass, pf, weight;
  };
  std::vector<Row> rows;
  double total_mass = 0.0, total_pf = 0.0;
  bool all_pf = true;
  for (NodeKey k : tree.terminals()) {
    const double v = tree.node(k).mass;
    const auto it = loaded.conditional_pf.find(k);
    const double pf = it == loaded.conditional_pf.end() ? std::nan("") : it->second;
    all_pf = all_pf && std::isfinite(pf);
    rows.push_back({k, v, pf, v * pf});
    total_mass += v;
    if (std::isfinite(pf)) total_pf += v * pf;
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    const double wa = std::isnan(a.weight) ? -1.0 : a.weight, wb = std::isnan(b.weight) ? -1.0 : b.weight;
    return wa > wb;
  });

  auto box_str = [](const std::vector<double>& lo, const std::vector<double>& hi) {
    std::ostringstream s;
    s << std::setprecision(4);
    for (std::size_t i = 0; i < lo.size(); ++i) s << (i ? " x " : "") << '[' << lo[i] << ", " << hi[i] << ']';
    return s.str();
  };
  out << "terminal domains: " << rows.size() << "   sum V = " << format_double(total_mass);
  if (all_pf) out << "   Pf = " << format_double(total_pf);
  out << "\n";
  out << std::left << std::setw(10) << "domain" << std::setw(14) << "V" << std::setw(14) << "Pf|domain" << std::setw(14)
      << "V*Pf" << "boxes (quantile | real)\n";
  Rng rng(0);
  for (const auto& r : rows) {
    const Box& q = tree.node(r.key).box;
    Box real;
    if (tree.model().independent()) {
      real.lo.resize(q.dim());
      real.hi.resize(q.dim());
      for (std::size_t i = 0; i < q.dim(); ++i) {
        const auto& m = tree.model().marginals()[i];
        real.lo[i] = m.ppf(std::clamp(q.lo[i], kQuantileClip, 1.0 - kQuantileClip));
        real.hi[i] = m.ppf(std::clamp(q.hi[i], kQuantileClip, 1.0 - kQuantileClip));
      }
    } else {
      real = compute_envelope(tree.model(), q, std::max<std::size_t>(2000, 2 * q.dim()), rng);
    }
    std::ostringstream v, p, w;
    v << std::setprecision(6) << r.mass;
    p << std::setprecision(6) << r.pf;
    w << std::setprecision(6) << r.weight;
    out << std::left << std::setw(10) << r.key.str() << std::setw(14) << v.str() << std::setw(14) << p.str()
        << std::setw(14) << w.str() << box_str(q.lo, q.hi) << " | " << box_str(real.lo, real.hi) << "\n";
  }
}

}  // namespace sser
