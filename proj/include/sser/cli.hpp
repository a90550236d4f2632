#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sser/engine.hpp"
#include "sser/external_lsf.hpp"
#include "sser/io.hpp"

namespace sser {

enum class Method { SSER, MCS, SuS };

std::string to_string(Method m);

struct StudySpec {
  std::string problem = "four-branch";  // builtin id, or "external"
  std::optional<ExternalLsfSpec> external;
  std::shared_ptr<const InputModel> model;  // set for external problems or overrides
  RunConfig config;
  Method method = Method::SSER;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path out_dir = "sser-out";
  std::size_t mcs_samples = 100000;  // method = MCS
  bool write_tree = true;
};

/// Builds a study from a configuration document with the blocks
/// problem, input_model, sser, estimators and study. Unknown keys are
/// rejected. Throws std::invalid_argument on invalid input.
StudySpec parse_study(const Json& config);
StudySpec load_study(const std::filesystem::path& path);

/// Problem (input model and batch limit state) for one run. External
/// problems spawn their own child process, owned by the returned holder.
struct ProblemInstance {
  Problem problem;
  std::shared_ptr<ExternalLsf> child;
};
ProblemInstance instantiate_problem(const StudySpec& spec);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  FailureEstimate estimate;
  std::vector<IterationRecord> trace;
  std::string termination;
};

/// Result of one seed, without touching the file system.
SeedOutcome run_seed(const StudySpec& spec, std::uint64_t seed, const std::filesystem::path* seed_dir = nullptr);

/// Runs every seed (concurrently up to SSER_THREADS), writing
/// <out>/seed_<s>/{result.json, trace.csv, tree.json} and <out>/summary.json.
/// Returns 0 when every seed succeeded.
int run_study(const StudySpec& spec, std::ostream& log);

/// Per-iteration q10/q50/q90 envelopes across seeds.
Json study_summary(const StudySpec& spec, const std::vector<SeedOutcome>& outcomes);

/// Header and row formatting of trace.csv.
std::string trace_csv_header();
std::string trace_csv_row(const IterationRecord& rec);

/// Terminal domains of a serialized tree, sorted by V * Pf, with quantile
/// and real-space boxes.
void inspect_tree(const Json& tree, std::ostream& out);

/// Concurrency cap from SSER_THREADS (default: hardware concurrency, at least 1).
std::size_t thread_cap();

}  // namespace sser
