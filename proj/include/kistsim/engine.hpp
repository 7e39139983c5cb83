#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace kist {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

// Span of simulated time in integer nanoseconds.
struct Duration {
  std::int64_t ns = 0;

  constexpr auto operator<=>(const Duration&) const = default;
  constexpr Duration operator+(Duration o) const { return {ns + o.ns}; }
  constexpr Duration operator-(Duration o) const { return {ns - o.ns}; }
  constexpr Duration operator*(std::int64_t k) const { return {ns * k}; }
  constexpr Duration& operator+=(Duration o) { ns += o.ns; return *this; }
  constexpr double ms() const { return static_cast<double>(ns) / 1e6; }
  constexpr double sec() const { return static_cast<double>(ns) / 1e9; }
};

constexpr Duration nanoseconds(std::int64_t v) { return {v}; }
constexpr Duration microseconds(std::int64_t v) { return {v * 1'000}; }
constexpr Duration milliseconds(std::int64_t v) { return {v * 1'000'000}; }
constexpr Duration seconds(std::int64_t v) { return {v * 1'000'000'000}; }

// Instant on the simulation clock, nanoseconds since start.
struct SimTime {
  std::int64_t ns = 0;

  constexpr auto operator<=>(const SimTime&) const = default;
  constexpr SimTime operator+(Duration d) const { return {ns + d.ns}; }
  constexpr Duration operator-(SimTime o) const { return {ns - o.ns}; }
  constexpr double ms() const { return static_cast<double>(ns) / 1e6; }
  constexpr double sec() const { return static_cast<double>(ns) / 1e9; }
};

using EventId = std::uint64_t;

struct RunSummary {
  std::uint64_t events = 0;
  SimTime clock;
};

// Raised when an event handler throws; identifies the offending event.
class SimulationFault : public std::runtime_error {
 public:
  SimulationFault(EventId id, NodeId target, SimTime at, const std::string& what)
      : std::runtime_error("event " + std::to_string(id) + " (node " +
                           (target == kNoNode ? std::string("-") : std::to_string(target)) +
                           ", t=" + std::to_string(at.ns) + "ns): " + what),
        event_(id), target_(target), at_(at) {}

  EventId event() const { return event_; }
  NodeId target() const { return target_; }
  SimTime at() const { return at_; }

 private:
  EventId event_;
  NodeId target_;
  SimTime at_;
};

// Time-ordered event queue with a virtual clock. Events at equal times fire in
// scheduling order.
class Engine {
 public:
  using Handler = std::function<void()>;

  SimTime now() const { return now_; }

  EventId schedule(Duration delay, NodeId target, Handler fn) {
    if (delay.ns < 0) throw std::invalid_argument("negative event delay");
    return push(now_ + delay, target, std::move(fn));
  }

  EventId schedule(Duration delay, Handler fn) { return schedule(delay, kNoNode, std::move(fn)); }

  EventId schedule_at(SimTime at, NodeId target, Handler fn) {
    if (at < now_) throw std::invalid_argument("event scheduled in the past");
    return push(at, target, std::move(fn));
  }

  // The event will not fire. Cancelling a fired or unknown id is a no-op.
  void cancel(EventId id) {
    if (id < next_seq_ && live_.erase(id) > 0) cancelled_.insert(id);
  }

  bool is_pending(EventId id) const { return live_.contains(id); }
  std::size_t pending() const { return live_.size(); }
  std::uint64_t processed() const { return processed_; }

  RunSummary run_until(SimTime end) {
    std::uint64_t count = 0;
    while (fire_next(end)) ++count;
    if (end > now_) now_ = end;
    return {count, now_};
  }

  // Fires the next live event, whenever it is due. False when none is left.
  bool step() { return fire_next(SimTime{std::numeric_limits<std::int64_t>::max()}); }

 private:
  struct Entry {
    SimTime at;
    EventId seq;
    NodeId target;
    Handler fn;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };

  bool fire_next(SimTime end) {
    while (!heap_.empty() && heap_.front().at <= end) {
      std::pop_heap(heap_.begin(), heap_.end(), Later{});
      Entry e = std::move(heap_.back());
      heap_.pop_back();
      if (cancelled_.erase(e.seq) > 0) continue;
      live_.erase(e.seq);
      now_ = e.at;
      try {
        e.fn();
      } catch (const SimulationFault&) {
        throw;
      } catch (const std::exception& ex) {
        throw SimulationFault(e.seq, e.target, e.at, ex.what());
      }
      ++processed_;
      return true;
    }
    return false;
  }

  EventId push(SimTime at, NodeId target, Handler fn) {
    const EventId id = next_seq_++;
    heap_.push_back(Entry{at, id, target, std::move(fn)});
    std::push_heap(heap_.begin(), heap_.end(), Later{});
    live_.insert(id);
    return id;
  }

  SimTime now_{};
  EventId next_seq_ = 0;
  std::uint64_t processed_ = 0;
  std::vector<Entry> heap_;
  std::unordered_set<EventId> live_;
  std::unordered_set<EventId> cancelled_;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Named random stream. The draw sequence depends only on (seed, label), so
// adding a stream elsewhere never shifts this one.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label) : label_(label) {
    const std::uint64_t a = detail::splitmix64(seed ^ detail::fnv1a(label));
    const std::uint64_t b = detail::splitmix64(a);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    gen_.seed(seq);
  }

  const std::string& label() const { return label_; }

  std::uint64_t next() { return gen_(); }

  // [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("uniform: lo > hi on stream " + label_);
    if (lo == hi) return lo;
    const double v = lo + (hi - lo) * uniform01();
    return v < hi ? v : std::nextafter(hi, lo);
  }

  // Integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi on stream " + label_);
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(gen_());
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  Duration uniform_duration(Duration lo, Duration hi) { return {uniform_int(lo.ns, hi.ns)}; }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform01() < p;
  }

 private:
  std::string label_;
  std::mt19937_64 gen_;
};

}  // namespace kist
