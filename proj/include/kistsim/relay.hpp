#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <vector>

#include "cell.hpp"
#include "channel.hpp"
#include "circuit.hpp"
#include "engine.hpp"
#include "sched.hpp"

namespace kist {

// A circuit as one relay sees it: the two neighbouring connections and a
// queue toward each.
struct RelayCircuit {
  CircuitId id = 0;
  ChannelSide* prev = nullptr;  // toward the client
  ChannelSide* next = nullptr;  // toward the exit / server
  bool exit = false;
  std::unique_ptr<CircuitQueue> toward_prev;
  std::unique_ptr<CircuitQueue> toward_next;
};

enum class DropReason { connection_closed, wrong_connection };

class Relay : public Node {
 public:
  struct Hooks {
    std::function<void(Relay&, CircuitId, const Cell&, DropReason)> on_drop;
    // A traced cell left this relay; its trace is complete for this hop.
    std::function<void(Relay&, const Cell&)> on_cell_trace;
    std::function<void(Relay&, const TickReport&)> on_tick;
  };

  enum class EnqueueResult { queued, dropped };

  Relay(Engine& engine, NodeId id, PolicyConfig policy, Duration ewma_halflife = seconds(30))
      : engine_(engine), id_(id), policy_(policy), halflife_(ewma_halflife) {
    if (policy_.kist_interval.ns <= 0) throw std::invalid_argument("KIST interval must be positive");
  }

  NodeId id() const override { return id_; }
  Hooks& hooks() { return hooks_; }
  const PolicyConfig& policy() const { return policy_; }

  void attach_channel(ChannelSide& side) {
    if (&side.owner() != this) throw std::invalid_argument("channel side not owned by this relay");
    ports_.try_emplace(side.channel_id(), std::make_unique<SchedPort>(side));
  }

  SchedPort& port(const ChannelSide& side) {
    auto it = ports_.find(side.channel_id());
    if (it == ports_.end()) throw std::out_of_range("channel not attached to relay");
    return *it->second;
  }

  std::size_t open_connections() const { return ports_.size(); }
  const std::map<ChannelId, std::unique_ptr<SchedPort>>& ports() const { return ports_; }

  void add_circuit(CircuitId id, ChannelSide* prev, ChannelSide* next, bool exit) {
    RelayCircuit c;
    c.id = id;
    c.prev = prev;
    c.next = next;
    c.exit = exit;
    c.toward_prev = std::make_unique<CircuitQueue>(id, Direction::backward, halflife_);
    c.toward_next = std::make_unique<CircuitQueue>(id, Direction::forward, halflife_);
    if (prev) attach_channel(*prev);
    if (next) attach_channel(*next);
    if (!circuits_.emplace(id, std::move(c)).second) throw std::invalid_argument("duplicate circuit id");
  }

  bool has_circuit(CircuitId id) const { return circuits_.contains(id); }
  const RelayCircuit& circuit(CircuitId id) const { return circuits_.at(id); }

  EnqueueResult enqueue_cell(CircuitId id, Direction dir, Cell cell) {
    RelayCircuit& c = find(id);
    ChannelSide* out = dir == Direction::forward ? c.next : c.prev;
    if (out == nullptr || !out->is_open()) {
      drop(c, cell, DropReason::connection_closed);
      return EnqueueResult::dropped;
    }
    cell.trace = CellTrace{};
    cell.trace.enqueued_to_circuit = engine_.now();
    CircuitQueue& q = dir == Direction::forward ? *c.toward_next : *c.toward_prev;
    q.push(std::move(cell));
    SchedPort& p = port(*out);
    p.circuits.attach(q);
    pending_.insert(p.id());
    if (policy_.policy == Policy::amap) request_amap_run(p);
    return EnqueueResult::queued;
  }

  // Cell arrival, already framed from the inbound byte stream.
  void on_cell(ChannelSide& in, Cell cell) override {
    auto it = circuits_.find(cell.circuit);
    if (it == circuits_.end()) {
      ++unknown_circuit_cells_;
      ++cells_dropped_;
      return;
    }
    RelayCircuit& c = it->second;
    ++cells_received_;
    if (&in == c.prev) {
      enqueue_cell(c.id, Direction::forward, std::move(cell));
    } else if (&in == c.next) {
      enqueue_cell(c.id, Direction::backward, std::move(cell));
    } else {
      // Arrived on a connection this circuit does not use.
      drop(c, cell, DropReason::wrong_connection);
    }
  }

  void on_writable(ChannelSide& side) override {
    if (policy_.policy != Policy::amap) return;
    auto it = ports_.find(side.channel_id());
    if (it != ports_.end() && it->second->has_work()) request_amap_run(*it->second);
  }

  void on_cell_transmitted(ChannelSide&, const Cell& cell) override {
    ++cells_sent_;
    if (cell.traced && hooks_.on_cell_trace) hooks_.on_cell_trace(*this, cell);
  }

  // Starts the periodic KIST scheduler with the given phase offset.
  void start(Duration phase = {}) {
    if (policy_.policy != Policy::kist) return;
    engine_.schedule(phase, id_, [this] { tick_and_rearm(); });
  }

  std::vector<SchedPort*> pending_ports() const {
    std::vector<SchedPort*> out;
    out.reserve(pending_.size());
    for (ChannelId id : pending_) out.push_back(ports_.at(id).get());
    return out;
  }

  TickReport tick(bool trace_choices = false) {
    const std::vector<SchedPort*> candidates = pending_ports();
    TickReport r = kist_tick(candidates, engine_.now(), policy_, trace_choices);
    for (SchedPort* p : candidates)
      if (!p->has_work()) pending_.erase(p->id());
    ++ticks_;
    if (hooks_.on_tick) hooks_.on_tick(*this, r);
    return r;
  }

  void run_amap(SchedPort& p) {
    p.run_scheduled = false;
    amap_run(p, engine_.now());
    if (!p.has_work()) pending_.erase(p.id());
  }

  std::size_t cells_queued() const {
    std::size_t n = 0;
    for (const auto& [id, c] : circuits_) n += c.toward_prev->size() + c.toward_next->size();
    return n;
  }
  std::uint64_t cells_dropped() const { return cells_dropped_; }
  std::uint64_t cells_received() const { return cells_received_; }
  std::uint64_t cells_sent() const { return cells_sent_; }
  std::uint64_t unknown_circuit_cells() const { return unknown_circuit_cells_; }
  std::uint64_t ticks() const { return ticks_; }

 private:
  RelayCircuit& find(CircuitId id) {
    auto it = circuits_.find(id);
    if (it == circuits_.end()) throw std::out_of_range("unknown circuit " + std::to_string(id));
    return it->second;
  }

  void drop(RelayCircuit& c, const Cell& cell, DropReason why) {
    ++cells_dropped_;
    if (hooks_.on_drop) hooks_.on_drop(*this, c.id, cell, why);
  }

  void request_amap_run(SchedPort& p) {
    if (p.run_scheduled) return;
    p.run_scheduled = true;
    engine_.schedule(Duration{}, id_, [this, &p] { run_amap(p); });
  }

  void tick_and_rearm() {
    tick();
    engine_.schedule(policy_.kist_interval, id_, [this] { tick_and_rearm(); });
  }

  Engine& engine_;
  NodeId id_;
  PolicyConfig policy_;
  Duration halflife_;
  Hooks hooks_;
  std::map<ChannelId, std::unique_ptr<SchedPort>> ports_;
  std::map<CircuitId, RelayCircuit> circuits_;
  std::set<ChannelId> pending_;

  std::uint64_t cells_dropped_ = 0;
  std::uint64_t cells_received_ = 0;
  std::uint64_t cells_sent_ = 0;
  std::uint64_t unknown_circuit_cells_ = 0;
  std::uint64_t ticks_ = 0;
};

}  // namespace kist
