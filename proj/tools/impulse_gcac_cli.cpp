// impulse-gcac <task> --scenario <path> [--scenario <path> ...] [--out <dir>]
//              [--seed <u64>] [--modes <N>] [--k-max <int>]
//
// Several scenarios run concurrently, one thread each. Exit status is the
// worst of the individual runs: 0 ok, 2 synthesis failure, 1 input error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "impulse_gcac/scenario.hpp"

namespace fs = std::filesystem;
using namespace impulse_gcac;

namespace {

struct Job {
  std::string path;
  int exit_code = 0;
  std::string summary;
};

int run_one(Job& job, const std::string& task, const std::optional<std::string>& out_dir,
            std::optional<std::uint64_t> seed, std::optional<int> modes, std::optional<int> k_max) {
  RunOutcome outcome;
  std::string stem = fs::path(job.path).stem().string();
  // Re-running a report keeps the original name.
  if (stem.size() > 7 && stem.ends_with(".report")) stem.resize(stem.size() - 7);
  try {
    Scenario sc = load_scenario(job.path);
    if (task != "run") sc.task = parse_task(task);
    if (seed) sc.seed = *seed;
    if (modes) {
      sc.domain.modes = *modes;
      sc.domain.validate();
    }
    if (k_max) sc.parameters["k_max"] = *k_max;
    outcome = run(sc);
  } catch (const Error& e) {
    outcome.exit_code = 1;
    outcome.report = {{"tool", "impulse-gcac"},
                      {"status", "error"},
                      {"exit_code", 1},
                      {"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}};
  }
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(fs::path(*out_dir) / (stem + ".report.json")) << outcome.report.dump(2) << "\n";
    if (outcome.csv) std::ofstream(fs::path(*out_dir) / (stem + ".trajectory.csv")) << *outcome.csv;
  }
  job.exit_code = outcome.exit_code;
  if (!out_dir) {
    job.summary = outcome.report.dump(2);
  } else if (outcome.report.contains("error")) {
    job.summary = job.path + ": " + outcome.report["error"]["code"].get<std::string>() + ": " +
                  outcome.report["error"]["message"].get<std::string>();
  } else {
    job.summary = job.path + ": " + outcome.report["status"].get<std::string>();
  }
  return job.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthesis and verification of unit-ball impulse controls for coupled heat equations"};
  std::string task;
  std::vector<std::string> scenarios;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> modes;
  std::optional<int> k_max;
  app.add_option("task", task,
                 "check | observability | synthesize-gcac | synthesize-null | synthesize-local | witness | "
                 "simulate | run (use the scenario's own task)")
      ->required();
  app.add_option("--scenario", scenarios, "scenario or report JSON (repeatable)")->required();
  app.add_option("--out", out_dir, "directory for <name>.report.json and <name>.trajectory.csv");
  app.add_option("--seed", seed, "seed for sampled computations");
  app.add_option("--modes", modes, "truncation order N")->check(CLI::PositiveNumber);
  app.add_option("--k-max", k_max, "largest impulse horizon")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (task != "run" && !parse_task(task)) {
    std::cerr << "unknown task \"" << task << "\"\n";
    return 1;
  }

  std::vector<Job> jobs;
  for (const auto& s : scenarios) jobs.push_back(Job{s, 0, {}});
  if (jobs.size() == 1) {
    run_one(jobs.front(), task, out_dir, seed, modes, k_max);
  } else {
    std::vector<std::thread> threads;
    for (auto& job : jobs) {
      threads.emplace_back([&job, &task, &out_dir, seed, modes, k_max] {
        run_one(job, task, out_dir, seed, modes, k_max);
      });
    }
    for (auto& t : threads) t.join();
  }
  int code = 0;
  for (const auto& job : jobs) {
    (job.exit_code == 0 ? std::cout : std::cerr) << job.summary << "\n";
    code = std::max(code, job.exit_code);
  }
  return code;
}
