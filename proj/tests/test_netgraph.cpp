#include <catch_amalgamated.hpp>

#include <sstream>

#include "kistsim/netgraph.hpp"

using namespace kist;

TEST_CASE("loss rate follows the latency law", "[netgraph]") {
  CHECK(loss_rate(300.0, LossModel::base) == 0.015);
  CHECK(loss_rate(150.0, LossModel::base) == 0.0075);
  CHECK(loss_rate(150.0, LossModel::high) == 0.015);
  CHECK(loss_rate(300.0, LossModel::high) == 0.03);
  CHECK(loss_rate(250.0, LossModel::high) == Catch::Approx(0.025).margin(1e-15));
  for (double ms : {0.5, 10.0, 123.0, 300.0}) CHECK(loss_rate(ms, LossModel::none) == 0.0);
}

TEST_CASE("loss rate rejects latencies outside (0, 300] ms", "[netgraph]") {
  CHECK_THROWS_AS(loss_rate(0.0, LossModel::base), std::invalid_argument);
  CHECK_THROWS_AS(loss_rate(-1.0, LossModel::base), std::invalid_argument);
  CHECK_THROWS_AS(loss_rate(300.001, LossModel::none), std::invalid_argument);
}

TEST_CASE("loss rate is monotone in latency and capped", "[netgraph]") {
  for (LossModel m : {LossModel::none, LossModel::base, LossModel::high}) {
    double prev = 0.0;
    for (int us = 1000; us <= 300'000; us += 1000) {
      const double l = loss_rate(us / 1000.0, m);
      REQUIRE(l >= prev);
      REQUIRE(l <= 0.03);
      prev = l;
    }
  }
}

TEST_CASE("synthetic graph is complete with exact per-edge loss", "[netgraph]") {
  RngStream rng(5, "graph");
  const Graph g = build_graph(10, LatencySampler{}, LossModel::base, rng);
  CHECK(g.edge_count() == 45);
  CHECK(g.complete());
  for (std::size_t u = 0; u < 10; ++u) {
    for (std::size_t v = u + 1; v < 10; ++v) {
      const Edge& e = g.edge(u, v);
      REQUIRE(e.latency_us > 0);
      REQUIRE(e.latency_us <= 300'000);
      REQUIRE(e.loss == e.latency_ms() / 300.0 * 0.015);
      REQUIRE(&g.edge(v, u) == &e);
    }
  }
  CHECK_THROWS_AS(g.edge(3, 3), GraphError);
}

TEST_CASE("latency tail stays within the cap", "[netgraph]") {
  RngStream rng(2, "tail");
  LatencySampler s{5.0, 150.0, 0.5, 300.0};
  bool saw_tail = false;
  for (int i = 0; i < 2000; ++i) {
    const auto us = s.sample_us(rng);
    REQUIRE(us >= 5000);
    REQUIRE(us <= 300'000);
    saw_tail |= us > 150'000;
  }
  CHECK(saw_tail);
}

TEST_CASE("transmit drops or delays by one latency", "[netgraph]") {
  RngStream rng(3, "tx");
  const SimTime now{1'000};
  CHECK(transmit(now, Edge{20'000, 0.0}, rng) == SimTime{20'001'000});
  CHECK_FALSE(transmit(now, Edge{20'000, 1.0}, rng).has_value());
}

TEST_CASE("transmit drop fraction matches the loss", "[netgraph]") {
  RngStream rng(11, "mc");
  const Edge e{300'000, 0.015};
  int dropped = 0;
  const int n = 100'000;
  for (int i = 0; i < n; ++i) dropped += !transmit(SimTime{}, e, rng).has_value();
  CHECK(static_cast<double>(dropped) / n == Catch::Approx(0.015).margin(0.002));
}

TEST_CASE("graph file round-trips", "[netgraph]") {
  RngStream rng(8, "graph");
  const Graph g = build_graph(6, LatencySampler{}, LossModel::base, rng);
  std::stringstream ss;
  write_graph(ss, g);
  const Graph h = parse_graph(ss, LossModel::base);
  REQUIRE(h.vertex_count() == 6);
  for (std::size_t u = 0; u < 6; ++u)
    for (std::size_t v = u + 1; v < 6; ++v) {
      CHECK(h.edge(u, v).latency_us == g.edge(u, v).latency_us);
      CHECK(h.edge(u, v).loss == Catch::Approx(g.edge(u, v).loss).margin(1e-6));
    }
}

TEST_CASE("graph file loss is rescaled by the model", "[netgraph]") {
  std::istringstream in("vertices 2\n0 1 50000 20000\n");
  CHECK(parse_graph(in, LossModel::high).edge(0, 1).loss == 0.03);
  std::istringstream in2("vertices 2\n0 1 50000 20000\n");
  CHECK(parse_graph(in2, LossModel::none).edge(0, 1).loss == 0.0);
}

TEST_CASE("graph parser rejects malformed files", "[netgraph]") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_graph(in, LossModel::base);
  };
  CHECK_THROWS_AS(parse(""), GraphError);
  CHECK_THROWS_AS(parse("verts 2\n0 1 10 0\n"), GraphError);
  CHECK_THROWS_AS(parse("vertices 2\n0 0 10 0\n"), GraphError);
  CHECK_THROWS_AS(parse("vertices 2\n0 1 10 0\n1 0 10 0\n"), GraphError);
  CHECK_THROWS_AS(parse("vertices 3\n0 1 10 0\n"), GraphError);
  CHECK_THROWS_AS(parse("vertices 2\n0 1 300001 0\n"), GraphError);
  CHECK_THROWS_AS(parse("vertices 2\n0 1 10 30001\n"), GraphError);
  CHECK_THROWS_AS(parse("vertices 2\n0 2 10 0\n"), GraphError);
  CHECK_THROWS_AS(parse("vertices 2\n0 1 10 0 extra\n"), GraphError);
  try {
    parse("vertices 2\n0 1 10 0\n1 0 10 0\n");
  } catch (const GraphError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}
