#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "channel.hpp"
#include "engine.hpp"
#include "metrics.hpp"
#include "netgraph.hpp"
#include "relay.hpp"
#include "sched.hpp"
#include "spec.hpp"
#include "tcp.hpp"
#include "traffic.hpp"

namespace kist {

// Two hosts placed on the same router still cross a short local link.
inline constexpr std::int64_t kLocalLinkUs = 1'000;

inline Edge local_edge(LossModel model) {
  return Edge{kLocalLinkUs, loss_rate(static_cast<double>(kLocalLinkUs) / 1000.0, model)};
}

inline Graph make_graph(const ExperimentSpec& s) {
  validate(s);
  if (s.graph == "synthetic") {
    LatencySampler sampler{s.latency_min_ms, s.latency_max_ms, s.latency_tail_prob, s.latency_tail_max_ms};
    RngStream rng(s.seed, "graph");
    return build_graph(static_cast<std::size_t>(s.graph_vertices), sampler, s.loss_model, rng);
  }
  std::ifstream in(s.graph);
  if (!in) throw SpecError("key 'graph': cannot read graph file '" + s.graph + "'");
  return parse_graph(in, s.loss_model);
}

struct CellLedger {
  std::uint64_t created = 0;
  std::uint64_t delivered = 0;
  std::uint64_t queued = 0;
  std::uint64_t dropped = 0;
  bool balanced() const { return created == delivered + queued + dropped; }
};

// One complete network instance built from a spec.
class Simulation : public TrafficWorld {
 public:
  explicit Simulation(const ExperimentSpec& spec) : spec_(spec), graph_(make_graph(spec)) {
    tcp_.initial_sndbuf = static_cast<std::uint64_t>(spec_.sndbuf_initial_bytes);
    tcp_.max_sndbuf = static_cast<std::uint64_t>(spec_.sndbuf_max_bytes);
    tcp_.autotune = spec_.autotune;
    build_hosts();
  }

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  const ExperimentSpec& spec() const { return spec_; }
  const Graph& graph() const { return graph_; }
  Collector& metrics() { return metrics_; }
  const Collector& metrics() const { return metrics_; }
  std::vector<std::unique_ptr<Relay>>& relays() { return relays_; }
  std::vector<std::unique_ptr<Client>>& clients() { return clients_; }
  std::size_t channel_count() const { return channels_.size(); }
  const Nic& nic(NodeId host) const { return *hosts_.at(host).nic; }
  const std::vector<Download>& downloads() const { return downloads_; }

  RunSummary run() {
    const Duration horizon = milliseconds(spec_.duration_ms);
    RngStream phase(spec_.seed, "kist-phase");
    for (auto& r : relays_) r->start(phase.uniform_duration({}, spec_.policy_config().kist_interval - nanoseconds(1)));
    RngStream starts(spec_.seed, "client-start");
    for (auto& c : clients_) c->start(starts.uniform_duration({}, milliseconds(spec_.start_spread_ms)));
    const RunSummary summary = engine_.run_until(SimTime{} + horizon);
    finish(horizon, summary);
    return summary;
  }

  CellLedger ledger() const {
    CellLedger l;
    l.created = cells_created_;
    l.delivered = cells_delivered_;
    for (const auto& r : relays_) {
      l.queued += r->cells_queued();
      l.dropped += r->cells_dropped();
    }
    for (const auto& [key, ch] : channels_) l.queued += ch->cells_in_transit();
    return l;
  }

  std::uint64_t payload_bytes_delivered() const { return payload_delivered_; }

  // TrafficWorld
  Engine& engine() override { return engine_; }

  CircuitHandle build_circuit(Client& c) override {
    const std::vector<std::size_t> path = picker_->pick(static_cast<std::size_t>(spec_.circuit_hops), c.rng());
    const auto server_index = static_cast<std::size_t>(c.rng().uniform_int(0, static_cast<std::int64_t>(servers_.size()) - 1));
    Server& server = *servers_[server_index];
    const CircuitId id = ++next_circuit_;

    std::vector<Node*> hops;
    hops.push_back(&c);
    for (std::size_t i : path) hops.push_back(relays_[i].get());
    hops.push_back(&server);

    std::vector<Channel*> links;
    std::vector<Duration> latencies;
    for (std::size_t i = 0; i + 1 < hops.size(); ++i) {
      Channel& ch = channel(*hops[i], *hops[i + 1]);
      links.push_back(&ch);
      if (i + 2 < hops.size()) latencies.push_back(path_between(hops[i]->id(), hops[i + 1]->id()).latency());
    }
    for (std::size_t h = 0; h < path.size(); ++h) {
      Relay& r = *relays_[path[h]];
      r.add_circuit(id, &links[h]->side_of(r), &links[h + 1]->side_of(r), h + 1 == path.size());
    }
    circuit_owner_[id] = &c;
    ++metrics_.counter("circuits_built");
    return CircuitHandle{id, &links.front()->side_of(c), telescoping_delay(latencies)};
  }

  void cell_created(Cell& cell) override {
    cell.id = ++cells_created_;
    cell.traced = cell.id % static_cast<std::uint64_t>(spec_.trace_sample) == 0;
  }

  void cell_consumed(const Cell&) override { ++cells_delivered_; }

  void payload_delivered(std::uint64_t bytes, SimTime at) override {
    payload_delivered_ += bytes;
    metrics_.add_goodput(at, bytes);
  }

  void download_finished(const Download& d) override {
    downloads_.push_back(d);
    const std::string kind(to_string(d.kind));
    if (d.failed) {
      ++metrics_.counter("downloads_failed_" + kind);
      return;
    }
    ++metrics_.counter("downloads_completed_" + kind);
    const SimTime now = engine_.now();
    metrics_.record("ttfb_" + kind, now, d.ttfb().ns);
    metrics_.record("ttlb_" + kind, now, d.ttlb().ns);
  }

  std::uint64_t next_download_id() override { return ++next_download_; }

 private:
  struct Host {
    std::size_t vertex = 0;
    std::unique_ptr<Nic> nic;
    std::unique_ptr<RngStream> loss;
  };

  void build_hosts() {
    const auto n_relays = static_cast<std::size_t>(spec_.n_relays);
    const auto n_web = spec_.effective(spec_.web_clients);
    const auto n_bulk = spec_.effective(spec_.bulk_clients);
    const auto n_perf = spec_.effective(spec_.perf_clients);
    const auto n_servers = static_cast<std::size_t>(spec_.n_servers);

    RngStream placement(spec_.seed, "placement");
    RngStream capacity(spec_.seed, "relay-capacity");
    auto add_host = [&](double mbit) {
      const auto id = static_cast<NodeId>(hosts_.size());
      Host h;
      h.vertex = static_cast<std::size_t>(
          placement.uniform_int(0, static_cast<std::int64_t>(graph_.vertex_count()) - 1));
      h.nic = std::make_unique<Nic>(engine_, id, static_cast<std::uint64_t>(std::llround(mbit * 1e6)));
      h.loss = std::make_unique<RngStream>(spec_.seed, "loss-" + std::to_string(id));
      hosts_.push_back(std::move(h));
      return id;
    };

    std::vector<double> weights;
    const Duration halflife = milliseconds(spec_.ewma_halflife_ms);
    for (std::size_t i = 0; i < n_relays; ++i) {
      const double mbit = capacity.uniform(spec_.relay_mbit_min, spec_.relay_mbit_max);
      weights.push_back(mbit);
      const NodeId id = add_host(mbit);
      auto r = std::make_unique<Relay>(engine_, id, spec_.policy_config(), halflife);
      wire_relay(*r);
      relays_.push_back(std::move(r));
    }
    std::optional<std::size_t> pinned;
    if (spec_.pinned_exit >= 0) pinned = static_cast<std::size_t>(spec_.pinned_exit);
    picker_ = std::make_unique<RelayPicker>(weights, pinned);

    const auto window = static_cast<std::uint32_t>(spec_.circuit_window);
    auto add_clients = [&](std::int64_t n, ClientKind kind) {
      for (std::int64_t i = 0; i < n; ++i) {
        const NodeId id = add_host(spec_.client_mbit);
        RngStream rng(spec_.seed, std::string(to_string(kind)) + "-client-" + std::to_string(i));
        clients_.push_back(std::make_unique<Client>(*this, id, ClientModel::of(kind), std::move(rng), window));
      }
    };
    add_clients(n_web, ClientKind::web);
    add_clients(n_bulk, ClientKind::bulk);
    add_clients(n_perf, ClientKind::perf);

    for (std::size_t i = 0; i < n_servers; ++i) {
      const NodeId id = add_host(spec_.server_mbit);
      servers_.push_back(std::make_unique<Server>(*this, id, window));
    }
  }

  void wire_relay(Relay& r) {
    auto& h = r.hooks();
    h.on_drop = [this](Relay&, CircuitId id, const Cell&, DropReason why) {
      ++metrics_.counter(why == DropReason::connection_closed ? "drops_connection_closed" : "drops_wrong_connection");
      if (auto it = circuit_owner_.find(id); it != circuit_owner_.end()) it->second->circuit_failed(id);
    };
    h.on_cell_trace = [this](Relay&, const Cell& c) {
      metrics_.record("tor_queue_time", engine_.now(), (c.trace.flushed_to_kernel - c.trace.enqueued_to_circuit).ns);
      const bool monotone = c.trace.enqueued_to_circuit <= c.trace.written_to_outbuf &&
                            c.trace.written_to_outbuf <= c.trace.flushed_to_kernel &&
                            c.trace.flushed_to_kernel <= c.trace.first_transmitted;
      if (!monotone) ++metrics_.counter("trace_order_violations");
      ++metrics_.counter("traced_relay_cells");
    };
    h.on_tick = [this](Relay&, const TickReport& t) { on_tick(t); };
  }

  void on_tick(const TickReport& t) {
    ++metrics_.counter("kist_ticks");
    metrics_.counter("kist_snapshots") += t.snapshots;
    metrics_.counter("kist_pending_total") += t.pending;
    if (t.snapshots != t.pending) ++metrics_.counter("kist_snapshot_mismatches");
    metrics_.counter("kist_port_rounds") += t.rounds.size();
    for (const PortRound& p : t.rounds)
      if (t.limit_enforced && p.flushed > p.limit) ++metrics_.counter("kist_limit_violations");
    if (t.pending == 0) return;
    if (++busy_ticks_ % static_cast<std::uint64_t>(spec_.trace_sample) != 0) return;
    const SimTime now = engine_.now();
    metrics_.record("kist_pending_sockets", now, static_cast<std::int64_t>(t.pending));
    metrics_.record("kist_snapshots", now, static_cast<std::int64_t>(t.snapshots));
    for (const PortRound& p : t.rounds)
      metrics_.record("kist_limit_slack", now, static_cast<std::int64_t>(p.limit) - static_cast<std::int64_t>(p.flushed));
  }

  Edge path_between(NodeId a, NodeId b) const {
    const std::size_t va = hosts_[a].vertex;
    const std::size_t vb = hosts_[b].vertex;
    if (va == vb) return local_edge(spec_.loss_model);
    return graph_.edge(va, vb);
  }

  bool is_relay(NodeId id) const { return id < relays_.size(); }

  Channel& channel(Node& a, Node& b) {
    const auto key = std::minmax(a.id(), b.id());
    auto it = channels_.find(key);
    if (it != channels_.end()) return *it->second;
    Host& ha = hosts_[a.id()];
    Host& hb = hosts_[b.id()];
    auto ch = std::make_unique<Channel>(next_channel_++, engine_, a, *ha.nic, ha.loss.get(), b, *hb.nic,
                                        hb.loss.get(), path_between(a.id(), b.id()), tcp_);
    for (int i = 0; i < 2; ++i) {
      ChannelSide& side = ch->side(i);
      if (!is_relay(side.owner().id())) continue;
      side.flow().hooks().on_kernel_sample = [this](const SegmentRecord& rec) {
        ++metrics_.counter("relay_segments_first_sent");
        if (++kernel_samples_ % static_cast<std::uint64_t>(spec_.trace_sample) != 0) return;
        metrics_.record("kernel_queue_time", engine_.now(), kernel_queue_time(rec).ns);
      };
    }
    ++metrics_.counter("channels_opened");
    return *channels_.emplace(key, std::move(ch)).first->second;
  }

  void finish(Duration horizon, const RunSummary& summary) {
    metrics_.finalize_goodput(horizon);
    // Invariant counters are exported even when they stay at zero.
    for (const char* name : {"kist_ticks", "kist_snapshots", "kist_pending_total", "kist_port_rounds",
                             "kist_limit_violations", "kist_snapshot_mismatches", "trace_order_violations"})
      metrics_.counter(name);
    const CellLedger l = ledger();
    metrics_.counter("cells_created") = l.created;
    metrics_.counter("cells_delivered") = l.delivered;
    metrics_.counter("cells_queued_at_end") = l.queued;
    metrics_.counter("cells_dropped") = l.dropped;
    metrics_.counter("payload_bytes_delivered") = payload_delivered_;
    metrics_.counter("events") = summary.events;
    std::uint64_t snapshots = 0, segments = 0, retransmits = 0, timeouts = 0;
    for (const auto& [key, ch] : channels_) {
      for (int i = 0; i < 2; ++i) {
        const TcpFlow& f = ch->side(i).flow();
        snapshots += f.info_calls();
        segments += f.segments_sent();
        retransmits += f.retransmits();
        timeouts += f.timeouts();
      }
    }
    metrics_.counter("tcp_info_calls") = snapshots;
    metrics_.counter("tcp_segments_sent") = segments;
    metrics_.counter("tcp_retransmits") = retransmits;
    metrics_.counter("tcp_timeouts") = timeouts;
    std::uint64_t incomplete = 0;
    for (const auto& c : clients_)
      if (c->current()) ++incomplete;
    metrics_.counter("downloads_incomplete") = incomplete;
  }

  ExperimentSpec spec_;
  Graph graph_;
  TcpConfig tcp_;
  Engine engine_;
  Collector metrics_;

  std::vector<Host> hosts_;
  std::vector<std::unique_ptr<Relay>> relays_;
  std::vector<std::unique_ptr<Client>> clients_;
  std::vector<std::unique_ptr<Server>> servers_;
  std::unique_ptr<RelayPicker> picker_;
  std::map<std::pair<NodeId, NodeId>, std::unique_ptr<Channel>> channels_;
  std::map<CircuitId, Client*> circuit_owner_;
  std::vector<Download> downloads_;

  ChannelId next_channel_ = 1;
  CircuitId next_circuit_ = 0;
  std::uint64_t next_download_ = 0;
  std::uint64_t cells_created_ = 0;
  std::uint64_t cells_delivered_ = 0;
  std::uint64_t payload_delivered_ = 0;
  std::uint64_t kernel_samples_ = 0;
  std::uint64_t busy_ticks_ = 0;
};

}  // namespace kist
