#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "sser/benchmarks.hpp"
#include "sser/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adaptive spectral-embedding reliability analysis"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a study");
  std::string config_path, problem, out;
  std::vector<std::uint64_t> seeds;
  auto* config_opt = run->add_option("--config", config_path, "study configuration (JSON)")->check(CLI::ExistingFile);
  run->add_option("--problem", problem, "builtin problem id, used without --config or to override it");
  run->add_option("--seed", seeds, "seed(s), replacing the configured seed list");
  run->add_option("--out", out, "output directory");
  run->callback([&] {
    if (!*config_opt && problem.empty()) throw CLI::ValidationError("run", "--config or --problem is required");
  });

  auto* inspect = app.add_subcommand("inspect", "report the terminal domains of a tree.json file");
  std::string tree_path;
  inspect->add_option("PATH", tree_path, "serialized tree")->required()->check(CLI::ExistingFile);

  auto* list = app.add_subcommand("list-problems", "list builtin problems");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      sser::Json config = sser::Json::object();
      if (!config_path.empty()) {
        std::ifstream f(config_path);
        config = sser::Json::parse(f);
      }
      if (!problem.empty()) config["problem"] = problem;
      if (!seeds.empty()) {
        auto& study = config["study"];
        if (study.is_null()) study = sser::Json::object();
        study.erase("runs");
        study.erase("first_seed");
        study["seeds"] = seeds;
      }
      sser::StudySpec spec = sser::parse_study(config);
      if (!out.empty()) spec.out_dir = out;
      return sser::run_study(spec, std::cout);
    }
    if (*inspect) {
      std::ifstream f(tree_path);
      sser::inspect_tree(sser::Json::parse(f), std::cout);
      return 0;
    }
    if (*list) {
      for (const auto& id : sser::benchmark_ids()) {
        const auto b = sser::make_benchmark(id);
        std::cout << id << "\t" << b.description << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
