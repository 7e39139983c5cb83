#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "cell.hpp"
#include "channel.hpp"
#include "engine.hpp"

namespace kist {

enum class ClientKind { web, bulk, perf };

inline std::string_view to_string(ClientKind k) {
  switch (k) {
    case ClientKind::web: return "web";
    case ClientKind::bulk: return "bulk";
    case ClientKind::perf: return "perf";
  }
  return "?";
}

inline constexpr std::uint64_t KiB = 1024;
inline constexpr std::uint64_t MiB = 1024 * 1024;

// Cells needed to carry `bytes` of payload.
constexpr std::uint64_t cells_for(std::uint64_t bytes) {
  return (bytes + kCellPayloadBytes - 1) / kCellPayloadBytes;
}

// Size law, pause law and circuit reuse for one client type.
struct ClientModel {
  ClientKind kind = ClientKind::web;
  std::vector<std::uint64_t> sizes;  // cycled in order
  Duration pause_min{};
  Duration pause_max{};
  bool new_circuit_per_download = false;

  static ClientModel web() { return {ClientKind::web, {320 * KiB}, seconds(1), seconds(60), false}; }
  static ClientModel bulk() { return {ClientKind::bulk, {5 * MiB}, {}, {}, false}; }
  static ClientModel perf() {
    return {ClientKind::perf, {50 * KiB, 1 * MiB, 5 * MiB}, seconds(60), seconds(120), true};
  }
  static ClientModel of(ClientKind k) {
    switch (k) {
      case ClientKind::web: return web();
      case ClientKind::bulk: return bulk();
      case ClientKind::perf: return perf();
    }
    throw std::invalid_argument("unknown client kind");
  }

  std::uint64_t size_for(std::uint64_t download_index) const { return sizes[download_index % sizes.size()]; }

  Duration pause(RngStream& rng) const {
    if (pause_max.ns == 0) return {};
    return rng.uniform_duration(pause_min, pause_max);
  }
};

struct Download {
  std::uint64_t id = 0;
  NodeId client = kNoNode;
  ClientKind kind = ClientKind::web;
  CircuitId circuit = 0;
  std::uint64_t size = 0;
  SimTime t_request;
  std::optional<SimTime> t_first_byte;
  std::optional<SimTime> t_last_byte;
  bool failed = false;

  bool complete() const { return t_last_byte.has_value(); }
  Duration ttfb() const { return *t_first_byte - t_request; }
  Duration ttlb() const { return *t_last_byte - t_request; }
};

class InsufficientRelays : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Capacity-weighted relay choice without replacement.
class RelayPicker {
 public:
  explicit RelayPicker(std::vector<double> weights, std::optional<std::size_t> pinned_exit = {})
      : weights_(std::move(weights)), pinned_exit_(pinned_exit) {
    for (double w : weights_)
      if (!(w > 0.0)) throw std::invalid_argument("relay weights must be positive");
    if (pinned_exit_ && *pinned_exit_ >= weights_.size()) throw std::invalid_argument("pinned exit out of range");
  }

  std::size_t size() const { return weights_.size(); }

  // Entry first, exit last.
  std::vector<std::size_t> pick(std::size_t hops, RngStream& rng) const {
    if (hops == 0) throw std::invalid_argument("circuit needs at least one hop");
    if (hops > weights_.size())
      throw InsufficientRelays("need " + std::to_string(hops) + " distinct relays, have " +
                               std::to_string(weights_.size()));
    std::vector<bool> used(weights_.size(), false);
    std::vector<std::size_t> path;
    path.reserve(hops);
    std::size_t to_draw = hops;
    if (pinned_exit_) {
      used[*pinned_exit_] = true;
      --to_draw;
    }
    for (std::size_t h = 0; h < to_draw; ++h) {
      double total = 0.0;
      for (std::size_t i = 0; i < weights_.size(); ++i)
        if (!used[i]) total += weights_[i];
      double x = rng.uniform01() * total;
      std::size_t chosen = weights_.size();
      for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (used[i]) continue;
        chosen = i;
        if (x < weights_[i]) break;
        x -= weights_[i];
      }
      used[chosen] = true;
      path.push_back(chosen);
    }
    if (pinned_exit_) path.push_back(*pinned_exit_);
    return path;
  }

 private:
  std::vector<double> weights_;
  std::optional<std::size_t> pinned_exit_;
};

// Circuit extension one hop at a time, one round trip per hop on that hop's
// link.
inline Duration telescoping_delay(const std::vector<Duration>& link_latencies) {
  Duration total{};
  for (Duration d : link_latencies) total += d * 2;
  return total;
}

class Client;

// What endpoints need from the surrounding network.
class TrafficWorld {
 public:
  struct CircuitHandle {
    CircuitId id = 0;
    ChannelSide* side = nullptr;  // client's end of the entry connection
    Duration ready_after{};
  };

  virtual ~TrafficWorld() = default;
  virtual Engine& engine() = 0;
  virtual CircuitHandle build_circuit(Client& c) = 0;
  // Assigns id and tracing; counts the cell as created.
  virtual void cell_created(Cell& c) = 0;
  virtual void cell_consumed(const Cell& c) = 0;
  virtual void payload_delivered(std::uint64_t bytes, SimTime at) = 0;
  virtual void download_finished(const Download& d) = 0;
  virtual std::uint64_t next_download_id() = 0;
};

// Cells acknowledged by one SENDME: a tenth of the window.
constexpr std::uint32_t sendme_increment(std::uint32_t window) { return window >= 10 ? window / 10 : 1; }

// Writes a locally created cell and pushes it toward the kernel.
inline void send_cell(ChannelSide& side, Cell c, SimTime now) {
  c.trace = CellTrace{};
  c.trace.enqueued_to_circuit = now;
  side.append_to_outbuf(std::move(c), now);
  side.flush(now);
}

// Downloads files over a circuit following its model, one at a time.
class Client : public Node {
 public:
  Client(TrafficWorld& world, NodeId id, ClientModel model, RngStream rng, std::uint32_t circuit_window)
      : world_(world), id_(id), model_(std::move(model)), rng_(std::move(rng)), window_(circuit_window),
        sendme_every_(sendme_increment(circuit_window)) {}

  NodeId id() const override { return id_; }
  const ClientModel& model() const { return model_; }
  RngStream& rng() { return rng_; }
  const std::optional<Download>& current() const { return current_; }
  std::uint64_t downloads_started() const { return started_; }
  std::uint64_t circuits_built() const { return circuits_built_; }
  CircuitId circuit() const { return circuit_.id; }

  void start(Duration offset) {
    world_.engine().schedule(offset, id_, [this] { begin(); });
  }

  void on_cell(ChannelSide&, Cell cell) override {
    world_.cell_consumed(cell);
    if (cell.kind != CellKind::data) return;
    if (!current_ || cell.circuit != circuit_.id || cell.download != current_->id) return;
    const SimTime now = world_.engine().now();
    if (!current_->t_first_byte) current_->t_first_byte = now;
    world_.payload_delivered(cell.payload, now);
    ++received_;
    if (window_ > 0 && ++since_sendme_ == sendme_every_) {
      since_sendme_ = 0;
      Cell s;
      s.kind = CellKind::sendme;
      s.circuit = circuit_.id;
      s.download = current_->id;
      world_.cell_created(s);
      send_cell(*circuit_.side, std::move(s), now);
    }
    if (received_ == expected_) finish(false);
  }

  void on_writable(ChannelSide& side) override { side.flush(world_.engine().now()); }

  // The circuit carrying the current download collapsed.
  void circuit_failed(CircuitId id) {
    if (id != circuit_.id) return;
    circuit_ = {};
    if (current_ && !current_->complete()) finish(true);
  }

 private:
  void begin() {
    const bool need_circuit = circuit_.side == nullptr || model_.new_circuit_per_download;
    if (need_circuit) {
      circuit_ = world_.build_circuit(*this);
      ++circuits_built_;
      since_sendme_ = 0;
      world_.engine().schedule(circuit_.ready_after, id_, [this] { request(); });
    } else {
      request();
    }
  }

  void request() {
    const SimTime now = world_.engine().now();
    Download d;
    d.id = world_.next_download_id();
    d.client = id_;
    d.kind = model_.kind;
    d.circuit = circuit_.id;
    d.size = model_.size_for(started_++);
    d.t_request = now;
    current_ = d;
    received_ = 0;
    expected_ = cells_for(d.size);
    if (expected_ == 0) {
      current_->t_first_byte = now;
      finish(false);
      return;
    }
    Cell r;
    r.kind = CellKind::request;
    r.circuit = circuit_.id;
    r.download = d.id;
    r.size = d.size;
    world_.cell_created(r);
    send_cell(*circuit_.side, std::move(r), now);
  }

  void finish(bool failed) {
    const SimTime now = world_.engine().now();
    current_->failed = failed;
    if (!failed) current_->t_last_byte = now;
    world_.download_finished(*current_);
    current_.reset();
    world_.engine().schedule(model_.pause(rng_), id_, [this] { begin(); });
  }

  TrafficWorld& world_;
  NodeId id_;
  ClientModel model_;
  RngStream rng_;
  std::uint32_t window_;
  std::uint32_t sendme_every_;

  TrafficWorld::CircuitHandle circuit_;
  std::optional<Download> current_;
  std::uint64_t started_ = 0;
  std::uint64_t circuits_built_ = 0;
  std::uint64_t received_ = 0;
  std::uint64_t expected_ = 0;
  std::uint32_t since_sendme_ = 0;
};

// Answers requests by streaming data cells back on the same circuit, within
// the circuit's package window.
class Server : public Node {
 public:
  Server(TrafficWorld& world, NodeId id, std::uint32_t circuit_window)
      : world_(world), id_(id), window_(circuit_window), sendme_every_(sendme_increment(circuit_window)) {}

  NodeId id() const override { return id_; }

  void on_cell(ChannelSide& in, Cell cell) override {
    world_.cell_consumed(cell);
    Stream& s = streams_[cell.circuit];
    if (!s.side) {
      s.side = &in;
      s.window = window_;
    }
    if (cell.kind == CellKind::request) {
      s.download = cell.download;
      s.remaining_bytes = cell.size;
      activate(in, cell.circuit);
    } else if (cell.kind == CellKind::sendme) {
      s.window += sendme_every_;
      activate(in, cell.circuit);
    }
    pump(in);
  }

  void on_writable(ChannelSide& side) override { pump(side); }

  std::uint64_t cells_sent() const { return sent_; }
  std::size_t streams() const { return streams_.size(); }

 private:
  struct Stream {
    ChannelSide* side = nullptr;
    std::uint64_t download = 0;
    std::uint64_t remaining_bytes = 0;
    std::uint32_t window = 0;  // unused when windows are off
  };

  bool ready(const Stream& s) const { return s.remaining_bytes > 0 && (window_ == 0 || s.window > 0); }

  void activate(ChannelSide& side, CircuitId c) {
    auto& q = active_[side.channel_id()];
    for (CircuitId x : q)
      if (x == c) return;
    q.push_back(c);
  }

  // Round-robin over ready streams on this connection until the kernel
  // pushes back.
  void pump(ChannelSide& side) {
    const SimTime now = world_.engine().now();
    auto& q = active_[side.channel_id()];
    while (!q.empty() && side.writable()) {
      const CircuitId c = q.front();
      q.pop_front();
      Stream& s = streams_[c];
      if (!ready(s)) continue;
      Cell d;
      d.kind = CellKind::data;
      d.circuit = c;
      d.download = s.download;
      d.payload = static_cast<std::uint16_t>(std::min<std::uint64_t>(kCellPayloadBytes, s.remaining_bytes));
      s.remaining_bytes -= d.payload;
      if (window_ > 0) --s.window;
      world_.cell_created(d);
      d.trace.enqueued_to_circuit = now;
      side.append_to_outbuf(std::move(d), now);
      ++sent_;
      if (ready(s)) q.push_back(c);
      if (side.outbuf_bytes() >= 32 * KiB) side.flush(now);
    }
    side.flush(now);
  }

  TrafficWorld& world_;
  NodeId id_;
  std::uint32_t window_;
  std::uint32_t sendme_every_;
  std::map<CircuitId, Stream> streams_;
  std::map<ChannelId, std::deque<CircuitId>> active_;
  std::uint64_t sent_ = 0;
};

}  // namespace kist
