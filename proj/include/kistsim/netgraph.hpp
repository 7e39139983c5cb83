#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "engine.hpp"

namespace kist {

enum class LossModel { none, base, high };

inline std::string_view to_string(LossModel m) {
  switch (m) {
    case LossModel::none: return "none";
    case LossModel::base: return "base";
    case LossModel::high: return "high";
  }
  return "?";
}

inline std::optional<LossModel> parse_loss_model(std::string_view s) {
  if (s == "none") return LossModel::none;
  if (s == "base") return LossModel::base;
  if (s == "high") return LossModel::high;
  return std::nullopt;
}

inline constexpr std::int64_t kMaxEdgeLatencyUs = 300'000;
inline constexpr double kBaseLossAtMaxLatency = 0.015;
inline constexpr double kMaxLoss = 0.03;

// Loss as a linear function of one-way edge latency, reaching 1.5% at the
// 300 ms latency cap. The high model doubles it, capped at 3%.
inline double loss_rate(double latency_ms, LossModel model) {
  if (!(latency_ms > 0.0) || latency_ms > 300.0)
    throw std::invalid_argument("edge latency outside (0, 300] ms: " + std::to_string(latency_ms));
  switch (model) {
    case LossModel::none: return 0.0;
    case LossModel::base: return latency_ms / 300.0 * kBaseLossAtMaxLatency;
    case LossModel::high: return std::min(2.0 * (latency_ms / 300.0 * kBaseLossAtMaxLatency), kMaxLoss);
  }
  return 0.0;
}

// Rescales a base-model loss value to another model.
inline double apply_loss_model(double base_loss, LossModel model) {
  switch (model) {
    case LossModel::none: return 0.0;
    case LossModel::base: return base_loss;
    case LossModel::high: return std::min(2.0 * base_loss, kMaxLoss);
  }
  return 0.0;
}

struct Edge {
  std::int64_t latency_us = 0;  // one way
  double loss = 0.0;

  Duration latency() const { return microseconds(latency_us); }
  double latency_ms() const { return static_cast<double>(latency_us) / 1000.0; }
};

// Synthetic one-way latency law: uniform on [min, max], with an optional tail
// drawn uniformly from [max, tail_max].
struct LatencySampler {
  double min_ms = 5.0;
  double max_ms = 150.0;
  double tail_prob = 0.0;
  double tail_max_ms = 300.0;

  std::int64_t sample_us(RngStream& rng) const {
    const bool tail = tail_prob > 0.0 && rng.bernoulli(tail_prob);
    const double ms = tail ? rng.uniform(max_ms, tail_max_ms) : rng.uniform(min_ms, max_ms);
    const auto us = static_cast<std::int64_t>(std::llround(ms * 1000.0));
    return std::clamp<std::int64_t>(us, 1, kMaxEdgeLatencyUs);
  }
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Complete undirected graph of router vertices.
class Graph {
 public:
  explicit Graph(std::size_t n) : n_(n), edges_(n < 2 ? 0 : n * (n - 1) / 2) {}

  std::size_t vertex_count() const { return n_; }
  std::size_t edge_count() const {
    std::size_t c = 0;
    for (const auto& e : edges_) c += e.has_value();
    return c;
  }
  bool complete() const { return edge_count() == edges_.size(); }

  bool has_edge(std::size_t u, std::size_t v) const { return u != v && edges_[index(u, v)].has_value(); }

  const Edge& edge(std::size_t u, std::size_t v) const {
    if (u == v) throw GraphError("no self-loop edge for vertex " + std::to_string(u));
    const auto& e = edges_[index(u, v)];
    if (!e) throw GraphError("missing edge " + std::to_string(u) + "-" + std::to_string(v));
    return *e;
  }

  void set_edge(std::size_t u, std::size_t v, Edge e) {
    if (u == v) throw GraphError("self-loop on vertex " + std::to_string(u));
    edges_[index(u, v)] = e;
  }

 private:
  std::size_t index(std::size_t u, std::size_t v) const {
    if (u >= n_ || v >= n_) throw GraphError("vertex out of range");
    if (u > v) std::swap(u, v);
    // Row-major upper triangle without the diagonal.
    return u * (2 * n_ - u - 1) / 2 + (v - u - 1);
  }

  std::size_t n_;
  std::vector<std::optional<Edge>> edges_;
};

inline Graph build_graph(std::size_t n_vertices, const LatencySampler& sampler, LossModel model,
                         RngStream& rng) {
  if (n_vertices < 2) throw GraphError("graph needs at least 2 vertices");
  Graph g(n_vertices);
  for (std::size_t u = 0; u < n_vertices; ++u) {
    for (std::size_t v = u + 1; v < n_vertices; ++v) {
      Edge e;
      e.latency_us = sampler.sample_us(rng);
      e.loss = loss_rate(e.latency_ms(), model);
      g.set_edge(u, v, e);
    }
  }
  return g;
}

// Text format:
//   vertices N
//   u v latency_us loss_ppm
// The file's loss values are taken as the base model and rescaled by `model`.
inline Graph parse_graph(std::istream& in, LossModel model) {
  std::string line;
  std::size_t lineno = 0;
  std::optional<Graph> g;
  auto fail = [&](const std::string& msg) -> GraphError {
    return GraphError("graph line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (!g) {
      std::string kw;
      long long n = 0;
      if (!(ls >> kw >> n) || kw != "vertices") throw fail("expected 'vertices N'");
      std::string extra;
      if (ls >> extra) throw fail("trailing data");
      if (n < 2) throw fail("need at least 2 vertices");
      g.emplace(static_cast<std::size_t>(n));
      continue;
    }
    long long u = 0, v = 0, lat = 0, ppm = 0;
    if (!(ls >> u >> v >> lat >> ppm)) throw fail("expected 'u v latency_us loss_ppm'");
    std::string extra;
    if (ls >> extra) throw fail("trailing data");
    const auto n = static_cast<long long>(g->vertex_count());
    if (u < 0 || v < 0 || u >= n || v >= n) throw fail("vertex out of range");
    if (u == v) throw fail("self-loop");
    if (g->has_edge(static_cast<std::size_t>(u), static_cast<std::size_t>(v))) throw fail("duplicate edge");
    if (lat <= 0 || lat > kMaxEdgeLatencyUs) throw fail("latency_us outside (0, 300000]");
    if (ppm < 0 || ppm > 30'000) throw fail("loss_ppm outside [0, 30000]");
    Edge e;
    e.latency_us = lat;
    e.loss = apply_loss_model(static_cast<double>(ppm) / 1e6, model);
    g->set_edge(static_cast<std::size_t>(u), static_cast<std::size_t>(v), e);
  }
  if (!g) throw GraphError("graph file has no 'vertices' header");
  if (!g->complete()) throw GraphError("graph is not complete");
  return std::move(*g);
}

inline void write_graph(std::ostream& out, const Graph& g) {
  out << "vertices " << g.vertex_count() << '\n';
  for (std::size_t u = 0; u < g.vertex_count(); ++u) {
    for (std::size_t v = u + 1; v < g.vertex_count(); ++v) {
      const Edge& e = g.edge(u, v);
      out << u << ' ' << v << ' ' << e.latency_us << ' ' << std::llround(e.loss * 1e6) << '\n';
    }
  }
}

// Bernoulli per-packet loss; delivered packets arrive one latency later.
inline std::optional<SimTime> transmit(SimTime now, const Edge& edge, RngStream& rng) {
  if (rng.bernoulli(edge.loss)) return std::nullopt;
  return now + edge.latency();
}

}  // namespace kist
