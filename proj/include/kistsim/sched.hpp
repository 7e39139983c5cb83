#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cell.hpp"
#include "channel.hpp"
#include "circuit.hpp"
#include "engine.hpp"
#include "tcp.hpp"

namespace kist {

enum class Policy { amap, kist };

inline std::string_view to_string(Policy p) { return p == Policy::amap ? "amap" : "kist"; }

inline std::optional<Policy> parse_policy(std::string_view s) {
  if (s == "amap") return Policy::amap;
  if (s == "kist") return Policy::kist;
  return std::nullopt;
}

struct PolicyConfig {
  Policy policy = Policy::kist;
  Duration kist_interval = milliseconds(10);
  bool per_socket_limit = true;

  bool operator==(const PolicyConfig&) const = default;
};

// Outbuf size at which AMAP writes to the kernel mid-run.
inline constexpr std::uint64_t kAmapFlushThreshold = 32 * 1024;

// Bytes KIST may write to a socket this round:
//   2*cwnd*mss - una*mss - notsent, clamped at zero.
inline std::uint64_t socket_limit(const TcpInfo& info) {
  const __int128 mss = info.mss;
  const __int128 raw = 2 * static_cast<__int128>(info.cwnd) * mss - static_cast<__int128>(info.una) * mss -
                       static_cast<__int128>(info.notsent);
  return raw > 0 ? static_cast<std::uint64_t>(raw) : 0;
}

// Scheduler state attached to one outgoing connection of a relay.
struct SchedPort {
  explicit SchedPort(ChannelSide& s) : side(&s) {}

  ChannelSide* side;
  CircuitScheduler circuits;

  // KIST round state, valid for the current tick.
  TcpInfo info{};
  std::uint64_t limit = 0;
  std::uint64_t flushed_this_round = 0;

  bool run_scheduled = false;  // AMAP

  ChannelId id() const { return side->channel_id(); }
  bool has_work() const { return !circuits.empty() || side->outbuf_bytes() > 0; }
};

// Moves up to `n` cells from the best circuit to the outbuf and charges them
// to that circuit's EWMA. Drained circuits leave the scheduler.
inline std::size_t circ_flush(SchedPort& port, std::size_t n, SimTime now) {
  CircuitQueue& q = port.circuits.best(now);
  std::size_t moved = 0;
  while (moved < n && !q.empty()) {
    port.side->append_to_outbuf(q.pop(), now);
    ++moved;
  }
  q.ewma().update(now, static_cast<std::uint32_t>(moved));
  if (q.empty()) port.circuits.detach(q);
  return moved;
}

// Min-heap of sockets keyed by their best circuit's EWMA, ties by channel id.
class PendingSet {
 public:
  void push(SchedPort& p, double key) {
    heap_.push_back({key, p.id(), &p});
    std::push_heap(heap_.begin(), heap_.end(), Greater{});
  }

  SchedPort& top() const { return *heap_.front().port; }
  double top_key() const { return heap_.front().key; }

  SchedPort& pop() {
    std::pop_heap(heap_.begin(), heap_.end(), Greater{});
    SchedPort* p = heap_.back().port;
    heap_.pop_back();
    return *p;
  }

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

  std::vector<SchedPort*> members() const {
    std::vector<SchedPort*> out;
    out.reserve(heap_.size());
    for (const auto& e : heap_) out.push_back(e.port);
    return out;
  }

 private:
  struct Entry {
    double key;
    ChannelId id;
    SchedPort* port;
  };
  struct Greater {
    bool operator()(const Entry& a, const Entry& b) const { return a.key != b.key ? a.key > b.key : a.id > b.id; }
  };
  std::vector<Entry> heap_;
};

inline double priority_key(const SchedPort& p, SimTime now) {
  return p.circuits.empty() ? 0.0 : p.circuits.best_value(now);
}

// Sockets with queued cells (or outbuf residue) whose kernel buffer accepts
// writes. Idle sockets are never looked at.
inline PendingSet get_pending_sockets(std::span<SchedPort* const> candidates, SimTime now) {
  PendingSet set;
  for (SchedPort* p : candidates)
    if (p->has_work() && p->side->writable()) set.push(*p, priority_key(*p, now));
  return set;
}

// One TCP_INFO snapshot per pending socket. Returns the number taken.
inline std::size_t update_tcp_info(const PendingSet& set) {
  std::size_t n = 0;
  for (SchedPort* p : set.members()) {
    p->info = p->side->tcp_info();
    p->limit = socket_limit(p->info);
    p->flushed_this_round = 0;
    ++n;
  }
  return n;
}

// Another whole cell fits under the limit once the outbuf is flushed.
// Socket-buffer space is not consulted; a full kernel clears `writable`.
inline bool can_write(const SchedPort& p, const PolicyConfig& cfg) {
  if (!p.side->writable()) return false;
  if (!cfg.per_socket_limit) return true;
  return p.flushed_this_round + p.side->outbuf_bytes() + kCellBytes <= p.limit;
}

inline std::uint64_t kist_flush(SchedPort& p, const PolicyConfig& cfg, SimTime now) {
  std::uint64_t budget = ChannelSide::kUnlimited;
  if (cfg.per_socket_limit) budget = p.limit > p.flushed_this_round ? p.limit - p.flushed_this_round : 0;
  const std::uint64_t n = p.side->flush(now, budget);
  p.flushed_this_round += n;
  return n;
}

// The outbuf goes to the kernel only when the next choice is a different
// socket or nothing is left to schedule.
inline std::uint64_t flush_outbuf_if_due(SchedPort& p, const PendingSet& set, const PolicyConfig& cfg,
                                         SimTime now) {
  if (!set.empty() && &set.top() == &p) return 0;
  return kist_flush(p, cfg, now);
}

struct PortRound {
  ChannelId channel;
  std::uint64_t limit;
  std::uint64_t flushed;
};

struct TickChoice {
  ChannelId channel;
  CircuitId circuit;
  double key;
};

struct TickReport {
  SimTime at;
  std::size_t pending = 0;
  std::size_t snapshots = 0;
  std::size_t cells_written = 0;
  bool limit_enforced = true;
  std::vector<PortRound> rounds;
  std::vector<TickChoice> choices;  // only with trace_choices
};

inline TickReport kist_tick(std::span<SchedPort* const> candidates, SimTime now, const PolicyConfig& cfg,
                            bool trace_choices = false) {
  TickReport r;
  r.at = now;
  r.limit_enforced = cfg.per_socket_limit;
  PendingSet set = get_pending_sockets(candidates, now);
  const std::vector<SchedPort*> members = set.members();
  r.pending = set.size();
  r.snapshots = update_tcp_info(set);

  while (!set.empty()) {
    SchedPort& s = set.pop();
    if (s.circuits.empty() || !can_write(s, cfg)) {
      kist_flush(s, cfg, now);
      continue;
    }
    if (trace_choices) {
      const CircuitQueue& q = s.circuits.best(now);
      r.choices.push_back({s.id(), q.id(), q.ewma().value_at(now)});
    }
    r.cells_written += circ_flush(s, 1, now);
    if (!s.circuits.empty() && can_write(s, cfg)) set.push(s, priority_key(s, now));
    flush_outbuf_if_due(s, set, cfg, now);
  }

  r.rounds.reserve(members.size());
  for (SchedPort* p : members) r.rounds.push_back({p->id(), p->limit, p->flushed_this_round});
  return r;
}

// Writes as much as possible for one socket: cells go to the outbuf, which is
// flushed at 32 KiB and when the circuits run dry, until the kernel pushes back.
inline std::size_t amap_run(SchedPort& p, SimTime now) {
  std::size_t cells = 0;
  while (p.side->writable()) {
    if (p.side->outbuf_bytes() >= kAmapFlushThreshold) {
      p.side->flush(now);
      continue;
    }
    if (p.circuits.empty()) {
      p.side->flush(now);
      break;
    }
    cells += circ_flush(p, 1, now);
  }
  return cells;
}

}  // namespace kist
