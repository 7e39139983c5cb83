#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "simulation.hpp"
#include "spec.hpp"

namespace kist {

inline Manifest make_manifest(const ExperimentSpec& s) {
  Manifest m;
  m.emplace_back("run_id", run_id(s));
  m.emplace_back("spec_hash", hex64(spec_hash(s)));
  for (std::string_view key : spec_keys()) m.emplace_back("spec." + std::string(key), spec_value(s, key));
  return m;
}

struct RunOutcome {
  std::string run_id;
  std::filesystem::path dir;
  RunSummary summary;
  CellLedger ledger;
  std::uint64_t payload_bytes = 0;
};

// Runs one experiment and exports it to <out_root>/<run-id>/.
inline RunOutcome run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_root) {
  validate(spec);
  Simulation sim(spec);
  RunOutcome o;
  o.run_id = run_id(spec);
  o.dir = out_root / o.run_id;
  o.summary = sim.run();
  o.ledger = sim.ledger();
  o.payload_bytes = sim.payload_bytes_delivered();
  sim.metrics().export_csv(o.dir, make_manifest(spec));
  return o;
}

struct SweepCell {
  ExperimentSpec spec;
  std::string run_id;
  bool ok = false;
  std::string error;
};

struct SweepPair {
  std::string label;
  std::size_t amap = 0;  // index into cells
  std::size_t kist = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepPair> pairs;
  std::vector<std::string> report_errors;
  bool all_ok() const {
    for (const auto& c : cells)
      if (!c.ok) return false;
    return report_errors.empty();
  }
};

// Loads 0.6/1.0/1.4 under the base run's loss model, plus no-loss and high-loss
// at load 1.0; each under AMAP and KIST.
inline std::vector<SweepCell> sweep_matrix(const ExperimentSpec& base) {
  struct Variant {
    double load;
    LossModel loss;
  };
  const std::vector<Variant> variants = {
      {0.6, LossModel::base}, {1.0, LossModel::base}, {1.4, LossModel::base},
      {1.0, LossModel::none}, {1.0, LossModel::high},
  };
  std::vector<SweepCell> cells;
  for (const auto& v : variants) {
    for (Policy p : {Policy::amap, Policy::kist}) {
      SweepCell c;
      c.spec = base;
      c.spec.load_factor = v.load;
      c.spec.loss_model = v.loss;
      c.spec.policy = p;
      c.run_id = run_id(c.spec);
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

// Adjacent AMAP/KIST cells of the matrix, labelled like "load1.4-base".
inline std::vector<SweepPair> sweep_pairs(const std::vector<SweepCell>& cells) {
  std::vector<SweepPair> pairs;
  for (std::size_t i = 0; i + 1 < cells.size(); i += 2) {
    const auto& s = cells[i].spec;
    pairs.push_back({"load" + detail::format_double(s.load_factor) + "-" + std::string(to_string(s.loss_model)), i, i + 1});
  }
  return pairs;
}

// Runs every cell (failures are recorded, the rest continue), then compares
// each AMAP/KIST pair and writes <out>/report.txt.
inline SweepResult sweep(const ExperimentSpec& base, const std::filesystem::path& out, unsigned jobs = 1) {
  SweepResult r;
  r.cells = sweep_matrix(base);
  auto run_cell = [&out](SweepCell& c) {
    try {
      run_experiment(c.spec, out);
      c.ok = true;
    } catch (const std::exception& e) {
      c.error = e.what();
    }
  };
  if (jobs <= 1) {
    for (auto& c : r.cells) run_cell(c);
  } else {
    std::size_t next = 0;
    while (next < r.cells.size()) {
      std::vector<std::future<void>> batch;
      for (unsigned j = 0; j < jobs && next < r.cells.size(); ++j, ++next)
        batch.push_back(std::async(std::launch::async, run_cell, std::ref(r.cells[next])));
      for (auto& f : batch) f.get();
    }
  }

  r.pairs = sweep_pairs(r.cells);

  std::filesystem::create_directories(out);
  std::ofstream rep(out / "report.txt");
  if (!rep) throw MetricsError("cannot write " + (out / "report.txt").string());
  rep << "runs=" << r.cells.size() << '\n';
  for (const auto& c : r.cells)
    rep << "run " << c.run_id << ' ' << (c.ok ? "ok" : "FAILED: " + c.error) << '\n';
  rep << "comparisons=" << r.pairs.size() << '\n';
  for (const auto& p : r.pairs) {
    rep << "\n[" << p.label << "]\n";
    const SweepCell& a = r.cells[p.amap];
    const SweepCell& k = r.cells[p.kist];
    if (!a.ok || !k.ok) {
      rep << "skipped: a run in this pair failed\n";
      r.report_errors.push_back(p.label + ": run failed");
      continue;
    }
    try {
      rep << compare(load_run(out / a.run_id), load_run(out / k.run_id)).to_text();
    } catch (const std::exception& e) {
      rep << "error: " << e.what() << '\n';
      r.report_errors.push_back(p.label + ": " + e.what());
    }
  }
  return r;
}

}  // namespace kist
