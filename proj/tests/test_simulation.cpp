#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kistsim/runner.hpp"

using namespace kist;
namespace fs = std::filesystem;

namespace {

ExperimentSpec small_spec(Policy p) {
  ExperimentSpec s;
  s.seed = 3;
  s.policy = p;
  s.duration_ms = 5'000;
  s.web_clients = 20;
  s.bulk_clients = 1;
  s.perf_clients = 1;
  s.start_spread_ms = 1'000;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("a small run conserves cells and payload", "[simulation]") {
  for (Policy p : {Policy::amap, Policy::kist}) {
    Simulation sim(small_spec(p));
    const RunSummary r = sim.run();
    CHECK(r.events > 0);
    const CellLedger l = sim.ledger();
    CHECK(l.created > 0);
    CHECK(l.delivered > 0);
    CHECK(l.balanced());
    const Series& g = sim.metrics().series("goodput");
    CHECK(static_cast<std::uint64_t>(g.sum()) == sim.payload_bytes_delivered());
    CHECK(g.size() == 5);
    CHECK(sim.metrics().counter_value("trace_order_violations") == 0);
    CHECK(sim.metrics().counter_value("downloads_completed_web") > 0);
  }
}

TEST_CASE("KIST ticks respect the limit and snapshot only pending sockets", "[simulation]") {
  Simulation sim(small_spec(Policy::kist));
  sim.run();
  const Collector& m = sim.metrics();
  CHECK(m.counter_value("kist_ticks") > 0);
  CHECK(m.counter_value("kist_port_rounds") > 0);
  CHECK(m.counter_value("kist_limit_violations") == 0);
  CHECK(m.counter_value("kist_snapshot_mismatches") == 0);
  CHECK(m.counter_value("kist_snapshots") == m.counter_value("kist_pending_total"));
}

TEST_CASE("repeat runs write byte-identical output", "[simulation]") {
  const fs::path root = fs::temp_directory_path() / "kistsim-test-determinism";
  fs::remove_all(root);
  const ExperimentSpec s = small_spec(Policy::kist);
  const RunOutcome a = run_experiment(s, root / "a");
  const RunOutcome b = run_experiment(s, root / "b");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a.dir)) {
    const fs::path other = b.dir / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(entry.path()) == slurp(other));
    ++files;
  }
  CHECK(files == series_catalog().size() + 1);
  ExperimentSpec reseeded = s;
  reseeded.seed = 4;
  const RunOutcome c = run_experiment(reseeded, root / "c");
  CHECK(slurp(a.dir / "tor_queue_time.csv") != slurp(c.dir / "tor_queue_time.csv"));
  fs::remove_all(root);
}

TEST_CASE("six-hop circuits carry traffic", "[simulation]") {
  ExperimentSpec s = small_spec(Policy::kist);
  s.circuit_hops = 6;
  Simulation sim(s);
  sim.run();
  CHECK(sim.ledger().balanced());
  CHECK(sim.ledger().delivered > 0);
}

TEST_CASE("a graph with too few relays is rejected", "[simulation]") {
  ExperimentSpec s = small_spec(Policy::kist);
  s.n_relays = 3;
  s.circuit_hops = 6;
  CHECK_THROWS_AS(Simulation(s), SpecError);
}
