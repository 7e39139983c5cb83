#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "kistsim/kistsim.hpp"

namespace {

int cmd_run(const std::string& spec_path, const std::optional<std::string>& policy,
            const std::optional<std::uint64_t>& seed, const std::string& out) {
  kist::ExperimentSpec spec = kist::load_spec(spec_path);
  if (policy) kist::set_spec_value(spec, "policy", *policy);
  if (seed) spec.seed = *seed;
  kist::validate(spec);
  const kist::RunOutcome o = kist::run_experiment(spec, out);
  std::cout << "run " << o.run_id << ": " << o.summary.events << " events, " << o.payload_bytes
            << " payload bytes delivered\n"
            << "cells created=" << o.ledger.created << " delivered=" << o.ledger.delivered
            << " queued=" << o.ledger.queued << " dropped=" << o.ledger.dropped << '\n'
            << "output " << o.dir.string() << '\n';
  if (!o.ledger.balanced()) {
    std::cerr << "error: cell accounting does not balance\n";
    return 3;
  }
  return 0;
}

int cmd_sweep(const std::string& spec_path, const std::string& out, unsigned jobs) {
  const kist::ExperimentSpec spec = kist::load_spec(spec_path);
  const kist::SweepResult r = kist::sweep(spec, out, jobs);
  for (const auto& c : r.cells) std::cout << c.run_id << ' ' << (c.ok ? "ok" : "FAILED: " + c.error) << '\n';
  std::cout << "report " << (std::filesystem::path(out) / "report.txt").string() << '\n';
  if (!r.all_ok()) {
    for (const auto& e : r.report_errors) std::cerr << "error: " << e << '\n';
    return 3;
  }
  return 0;
}

int cmd_compare(const std::string& a, const std::string& b) {
  const kist::CompareReport r = kist::compare(kist::load_run(a), kist::load_run(b));
  std::cout << r.to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event relay network simulator comparing AMAP and KIST socket scheduling"};
  app.require_subcommand(1);

  std::string spec_path, out = "out";
  std::optional<std::string> policy;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("spec", spec_path, "Spec file")->required()->check(CLI::ExistingFile);
  run->add_option("--policy", policy, "Override the policy (amap|kist)")->check(CLI::IsMember({"amap", "kist"}));
  run->add_option("--seed", seed, "Override the seed");
  run->add_option("--out", out, "Output root; the run goes to <out>/<run-id>");

  std::string sweep_spec, sweep_out;
  unsigned jobs = 1;
  auto* sw = app.add_subcommand("sweep", "Run the load/loss matrix under both policies and compare");
  sw->add_option("spec", sweep_spec, "Base spec file")->required()->check(CLI::ExistingFile);
  sw->add_option("--out", sweep_out, "Output root")->required();
  sw->add_option("--jobs", jobs, "Runs executed concurrently")->check(CLI::Range(1u, 64u));

  std::string run_a, run_b;
  auto* cmp = app.add_subcommand("compare", "Quantile deltas between two run directories (AMAP minus KIST)");
  cmp->add_option("run_a", run_a, "Run directory")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("run_b", run_b, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(spec_path, policy, seed, out);
    if (*sw) return cmd_sweep(sweep_spec, sweep_out, jobs);
    if (*cmp) return cmd_compare(run_a, run_b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
