#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "cell.hpp"
#include "engine.hpp"

namespace kist {

// Exponentially decayed cell counter. Lower means higher priority.
class Ewma {
 public:
  explicit Ewma(Duration halflife = seconds(30)) : halflife_(halflife) {
    if (halflife_.ns <= 0) throw std::invalid_argument("EWMA half-life must be positive");
  }

  double value() const { return value_; }
  SimTime last_decay_at() const { return last_; }
  Duration halflife() const { return halflife_; }

  double value_at(SimTime now) const {
    if (now <= last_) return value_;
    return value_ * std::exp2(-static_cast<double>((now - last_).ns) / static_cast<double>(halflife_.ns));
  }

  double update(SimTime now, std::uint32_t cells_sent) {
    if (now < last_) throw std::invalid_argument("EWMA update before last decay");
    value_ = value_at(now) + cells_sent;
    last_ = now;
    return value_;
  }

  void reset(double value, SimTime at) {
    value_ = value;
    last_ = at;
  }

 private:
  Duration halflife_;
  double value_ = 0.0;
  SimTime last_{};
};

// One circuit's cell FIFO toward a single outgoing connection.
class CircuitQueue {
 public:
  CircuitQueue(CircuitId id, Direction dir, Duration halflife) : id_(id), dir_(dir), ewma_(halflife) {}

  CircuitId id() const { return id_; }
  Direction direction() const { return dir_; }
  Ewma& ewma() { return ewma_; }
  const Ewma& ewma() const { return ewma_; }

  bool empty() const { return cells_.empty(); }
  std::size_t size() const { return cells_.size(); }
  void push(Cell c) { cells_.push_back(std::move(c)); }
  Cell pop() {
    Cell c = std::move(cells_.front());
    cells_.pop_front();
    return c;
  }
  const std::deque<Cell>& cells() const { return cells_; }

  bool attached = false;

 private:
  CircuitId id_;
  Direction dir_;
  Ewma ewma_;
  std::deque<Cell> cells_;
};

// Per-connection set of circuits holding cells for that connection.
class CircuitScheduler {
 public:
  bool empty() const { return active_.empty(); }
  std::size_t size() const { return active_.size(); }
  const std::vector<CircuitQueue*>& active() const { return active_; }

  void attach(CircuitQueue& q) {
    if (q.attached) return;
    q.attached = true;
    active_.push_back(&q);
  }

  void detach(CircuitQueue& q) {
    if (!q.attached) return;
    q.attached = false;
    active_.erase(std::find(active_.begin(), active_.end(), &q));
  }

  bool contains(const CircuitQueue& q) const {
    return std::find(active_.begin(), active_.end(), &q) != active_.end();
  }

  // Minimum decayed EWMA at `now`, ties to the lowest circuit id.
  CircuitQueue& best(SimTime now) const {
    if (active_.empty()) throw std::logic_error("pop from empty circuit scheduler");
    CircuitQueue* best = active_.front();
    double best_v = best->ewma().value_at(now);
    for (std::size_t i = 1; i < active_.size(); ++i) {
      CircuitQueue* q = active_[i];
      const double v = q->ewma().value_at(now);
      if (v < best_v || (v == best_v && q->id() < best->id())) {
        best = q;
        best_v = v;
      }
    }
    return *best;
  }

  double best_value(SimTime now) const { return best(now).ewma().value_at(now); }

 private:
  std::vector<CircuitQueue*> active_;
};

// Splits an inbound byte stream into whole cells, keeping any partial tail.
class CellFramer {
 public:
  std::size_t feed(std::uint64_t bytes) {
    buffered_ += bytes;
    const std::uint64_t cells = buffered_ / kCellBytes;
    buffered_ -= cells * kCellBytes;
    return static_cast<std::size_t>(cells);
  }
  std::uint64_t retained() const { return buffered_; }

 private:
  std::uint64_t buffered_ = 0;
};

}  // namespace kist
