#include <catch_amalgamated.hpp>

#include <vector>

#include "kistsim/engine.hpp"

using namespace kist;

TEST_CASE("event fires exactly at its delay", "[engine]") {
  Engine e;
  SimTime fired{-1};
  e.schedule(milliseconds(10), [&] { fired = e.now(); });
  e.run_until(SimTime{} + seconds(1));
  CHECK(fired.ns == 10'000'000);
}

TEST_CASE("equal-time events fire in scheduling order", "[engine]") {
  Engine e;
  std::vector<int> order;
  for (int i = 0; i < 5; ++i) e.schedule(milliseconds(3), [&order, i] { order.push_back(i); });
  e.schedule(milliseconds(1), [&order] { order.push_back(-1); });
  e.run_until(SimTime{} + milliseconds(3));
  CHECK(order == std::vector<int>{-1, 0, 1, 2, 3, 4});
}

TEST_CASE("run_until includes the boundary and advances the clock", "[engine]") {
  Engine e;
  int fired = 0;
  e.schedule(milliseconds(5), [&] { ++fired; });
  e.schedule(milliseconds(6), [&] { ++fired; });
  const RunSummary s = e.run_until(SimTime{} + milliseconds(5));
  CHECK(fired == 1);
  CHECK(s.events == 1);
  CHECK(e.now().ns == 5'000'000);
  CHECK(e.pending() == 1);
  e.run_until(SimTime{} + milliseconds(20));
  CHECK(fired == 2);
  CHECK(e.now().ns == 20'000'000);
}

TEST_CASE("events scheduled from handlers run in the same pass", "[engine]") {
  Engine e;
  std::vector<std::int64_t> at;
  e.schedule(milliseconds(1), [&] {
    at.push_back(e.now().ns);
    e.schedule(Duration{}, [&] { at.push_back(e.now().ns); });
  });
  e.run_until(SimTime{} + milliseconds(1));
  CHECK(at == std::vector<std::int64_t>{1'000'000, 1'000'000});
}

TEST_CASE("cancelled events do not fire", "[engine]") {
  Engine e;
  int fired = 0;
  const EventId id = e.schedule(milliseconds(2), [&] { ++fired; });
  CHECK(e.is_pending(id));
  e.cancel(id);
  e.cancel(id);
  e.cancel(999);
  CHECK_FALSE(e.is_pending(id));
  e.run_until(SimTime{} + seconds(1));
  CHECK(fired == 0);
}

TEST_CASE("scheduling into the past is rejected", "[engine]") {
  Engine e;
  e.run_until(SimTime{} + milliseconds(10));
  CHECK_THROWS_AS(e.schedule(nanoseconds(-1), [] {}), std::invalid_argument);
  CHECK_THROWS_AS(e.schedule_at(SimTime{} + milliseconds(9), kNoNode, [] {}), std::invalid_argument);
}

TEST_CASE("handler exceptions surface as SimulationFault", "[engine]") {
  Engine e;
  e.schedule(milliseconds(4), 17, [] { throw std::runtime_error("boom"); });
  try {
    e.run_until(SimTime{} + seconds(1));
    FAIL("expected a fault");
  } catch (const SimulationFault& f) {
    CHECK(f.target() == 17);
    CHECK(f.at().ns == 4'000'000);
    CHECK(std::string(f.what()).find("boom") != std::string::npos);
  }
}

TEST_CASE("random streams depend only on seed and label", "[engine][rng]") {
  RngStream a(42, "loss-3"), b(42, "loss-3"), c(42, "loss-4"), d(43, "loss-3");
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
    differs_c |= x != c.next();
    differs_d |= x != d.next();
  }
  CHECK(differs_c);
  CHECK(differs_d);
}

TEST_CASE("uniform draws stay in range with the expected mean", "[engine][rng]") {
  RngStream r(1, "uniform");
  double sum = 0;
  const int n = 100'000;
  for (int i = 0; i < n; ++i) {
    const double v = r.uniform(2.0, 4.0);
    REQUIRE(v >= 2.0);
    REQUIRE(v < 4.0);
    sum += v;
  }
  CHECK(sum / n == Catch::Approx(3.0).margin(0.01));
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.uniform_int(-3, 3);
    REQUIRE(k >= -3);
    REQUIRE(k <= 3);
  }
  CHECK_THROWS_AS(r.uniform(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("bernoulli edge probabilities", "[engine][rng]") {
  RngStream r(9, "b");
  for (int i = 0; i < 100; ++i) {
    CHECK_FALSE(r.bernoulli(0.0));
    CHECK(r.bernoulli(1.0));
  }
}

TEST_CASE("step fires one event at a time", "[engine]") {
  Engine e;
  std::vector<int> order;
  e.schedule(milliseconds(2), [&] { order.push_back(2); });
  const EventId gone = e.schedule(milliseconds(1), [&] { order.push_back(99); });
  e.schedule(milliseconds(1), [&] { order.push_back(1); });
  e.cancel(gone);
  CHECK(e.step());
  CHECK(order == std::vector<int>{1});
  CHECK(e.now().ns == 1'000'000);
  CHECK(e.step());
  CHECK_FALSE(e.step());
  CHECK(order == std::vector<int>{1, 2});
}
