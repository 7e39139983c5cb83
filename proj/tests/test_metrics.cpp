#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "kistsim/metrics.hpp"

using namespace kist;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kistsim-test-" + name);
  fs::remove_all(p);
  return p;
}

Manifest manifest_for(const std::string& policy, const std::string& loss = "base") {
  return {{"run_id", policy + "-x"}, {"spec.policy", policy}, {"spec.loss_model", loss}, {"spec.seed", "1"}};
}

}  // namespace

TEST_CASE("quantiles use the full sample set", "[metrics]") {
  const CdfTable t({4, 1, 3, 2});
  CHECK(t.quantile(0.5) == 2);
  CHECK(t.quantile(0.0) == 1);
  CHECK(t.quantile(0.25) == 1);
  CHECK(t.quantile(0.26) == 2);
  CHECK(t.quantile(1.0) == 4);
  CHECK(t.fraction_at_most(2.5) == 0.5);
  CHECK(t.fraction_at_most(0) == 0.0);
  CHECK(t.min() == 1);
  CHECK(t.max() == 4);
  CHECK_THROWS_AS(t.quantile(1.5), MetricsError);
  CHECK_THROWS_AS(CdfTable({}), MetricsError);
}

TEST_CASE("series reject time going backwards", "[metrics]") {
  Series s{"x", "ns", {}};
  s.add(SimTime{5}, 1);
  s.add(SimTime{5}, 2);
  CHECK_THROWS_AS(s.add(SimTime{4}, 3), MetricsError);
  CHECK(s.sum() == 3);
}

TEST_CASE("goodput buckets sum to the bytes delivered", "[metrics]") {
  Collector c;
  c.add_goodput(SimTime{} + milliseconds(10), 100);
  c.add_goodput(SimTime{} + milliseconds(999), 50);
  c.add_goodput(SimTime{} + milliseconds(2500), 7);
  c.finalize_goodput(seconds(5));
  const Series& g = c.series("goodput");
  REQUIRE(g.size() == 5);
  CHECK(g.samples[0].second == 150);
  CHECK(g.samples[1].second == 0);
  CHECK(g.samples[2].second == 7);
  CHECK(g.sum() == 157);
}

TEST_CASE("unknown series names are errors", "[metrics]") {
  Collector c;
  CHECK_THROWS_AS(c.record("latency", SimTime{}, 1), MetricsError);
  CHECK(c.counter_value("nothing") == 0);
}

TEST_CASE("export and reload preserve series and manifest", "[metrics]") {
  const fs::path dir = scratch("export");
  Collector c;
  c.record("tor_queue_time", SimTime{1}, 10);
  c.record("tor_queue_time", SimTime{2}, -3);
  ++c.counter("kist_ticks");
  c.finalize_goodput(seconds(2));
  c.export_csv(dir, manifest_for("kist"));

  std::ifstream in(dir / "tor_queue_time.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "t_ns,value");
  CHECK(row == "1,10");

  const RunData r = load_run(dir);
  CHECK(r.series.at("tor_queue_time").samples == c.series("tor_queue_time").samples);
  CHECK(r.get("spec.policy") == "kist");
  CHECK(r.get("count.kist_ticks") == "1");
  CHECK(r.get("series.tor_queue_time.rows") == "2");
  CHECK(r.series.size() == series_catalog().size());
  CHECK_THROWS_AS(r.get("missing"), MetricsError);
  fs::remove_all(dir);
}

TEST_CASE("compare reports AMAP minus KIST whatever the argument order", "[metrics]") {
  const fs::path a = scratch("cmp-a"), k = scratch("cmp-k");
  Collector ca, ck;
  for (int i = 1; i <= 10; ++i) {
    ca.record("ttlb_web", SimTime{i}, 100 * i);
    ck.record("ttlb_web", SimTime{i}, 10 * i);
  }
  ca.add_goodput(SimTime{}, 1000);
  ck.add_goodput(SimTime{}, 400);
  ca.finalize_goodput(seconds(1));
  ck.finalize_goodput(seconds(1));
  ca.export_csv(a, manifest_for("amap"));
  ck.export_csv(k, manifest_for("kist"));
  for (const auto& rep : {compare(load_run(a), load_run(k)), compare(load_run(k), load_run(a))}) {
    const QuantileDelta& d = rep.at("ttlb_web", 0.5);
    CHECK(*d.amap == 500);
    CHECK(*d.kist == 50);
    CHECK(*d.delta() == 450);
    CHECK_FALSE(rep.at("ttfb_bulk", 0.9).delta().has_value());
    CHECK(rep.goodput_delta() == 600);
    const std::string text = rep.to_text();
    CHECK(text.find("ttlb_web,q50,500,50,450") != std::string::npos);
    CHECK(text.find("ttfb_bulk,q90,na,na,na") != std::string::npos);
  }
  fs::remove_all(a);
  fs::remove_all(k);
}

TEST_CASE("compare refuses runs with different settings", "[metrics]") {
  const fs::path a = scratch("mis-a"), k = scratch("mis-k");
  Collector c;
  c.finalize_goodput(seconds(1));
  c.export_csv(a, manifest_for("amap", "base"));
  c.export_csv(k, manifest_for("kist", "high"));
  CHECK_THROWS_AS(compare(load_run(a), load_run(k)), MetricsError);
  CHECK_THROWS_AS(load_run(scratch("absent")), MetricsError);
  fs::remove_all(a);
  fs::remove_all(k);
}
