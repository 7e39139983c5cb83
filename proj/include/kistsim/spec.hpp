#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "engine.hpp"
#include "netgraph.hpp"
#include "sched.hpp"

namespace kist {

class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything that determines one run. Defaults are the desk-scale base
// network under KIST.
struct ExperimentSpec {
  std::uint64_t seed = 1;
  std::int64_t duration_ms = 600'000;

  std::int64_t n_relays = 20;
  std::int64_t web_clients = 480;
  std::int64_t bulk_clients = 15;
  std::int64_t perf_clients = 3;
  std::int64_t n_servers = 10;
  std::int64_t circuit_hops = 3;

  double relay_mbit_min = 6.0;
  double relay_mbit_max = 30.0;
  double client_mbit = 20.0;
  double server_mbit = 1000.0;

  std::string graph = "synthetic";
  std::int64_t graph_vertices = 40;
  double latency_min_ms = 5.0;
  double latency_max_ms = 150.0;
  double latency_tail_prob = 0.0;
  double latency_tail_max_ms = 300.0;
  LossModel loss_model = LossModel::base;

  double load_factor = 1.0;

  Policy policy = Policy::kist;
  std::int64_t kist_interval_ms = 10;
  bool per_socket_limit = true;
  std::int64_t ewma_halflife_ms = 30'000;

  std::int64_t circuit_window = 500;
  std::int64_t trace_sample = 8;
  std::int64_t start_spread_ms = 30'000;
  std::int64_t pinned_exit = -1;

  bool autotune = true;
  std::int64_t sndbuf_initial_bytes = 16 * 1024;
  std::int64_t sndbuf_max_bytes = 4 * 1024 * 1024;

  bool operator==(const ExperimentSpec&) const = default;

  std::int64_t effective(std::int64_t count) const {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(count) * load_factor));
  }

  PolicyConfig policy_config() const {
    return PolicyConfig{policy, milliseconds(kist_interval_ms), per_socket_limit};
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

// One spec key: how to print it and how to read it back.
struct SpecField {
  std::string_view key;
  std::function<std::string(const ExperimentSpec&)> get;
  std::function<bool(ExperimentSpec&, std::string_view)> set;  // false on malformed value
};

template <class T>
SpecField int_field(std::string_view key, T ExperimentSpec::*m) {
  return {key, [m](const ExperimentSpec& s) { return std::to_string(s.*m); },
          [m](ExperimentSpec& s, std::string_view v) { return parse_number(v, s.*m); }};
}

inline SpecField double_field(std::string_view key, double ExperimentSpec::*m) {
  return {key, [m](const ExperimentSpec& s) { return format_double(s.*m); },
          [m](ExperimentSpec& s, std::string_view v) { return parse_number(v, s.*m) && std::isfinite(s.*m); }};
}

inline SpecField bool_field(std::string_view key, bool ExperimentSpec::*m) {
  return {key, [m](const ExperimentSpec& s) { return std::string(s.*m ? "true" : "false"); },
          [m](ExperimentSpec& s, std::string_view v) {
            if (v == "true" || v == "1") s.*m = true;
            else if (v == "false" || v == "0") s.*m = false;
            else return false;
            return true;
          }};
}

inline const std::vector<SpecField>& spec_fields() {
  static const std::vector<SpecField> fields = {
      int_field("seed", &ExperimentSpec::seed),
      int_field("duration_ms", &ExperimentSpec::duration_ms),
      int_field("n_relays", &ExperimentSpec::n_relays),
      int_field("web_clients", &ExperimentSpec::web_clients),
      int_field("bulk_clients", &ExperimentSpec::bulk_clients),
      int_field("perf_clients", &ExperimentSpec::perf_clients),
      int_field("n_servers", &ExperimentSpec::n_servers),
      int_field("circuit_hops", &ExperimentSpec::circuit_hops),
      double_field("relay_mbit_min", &ExperimentSpec::relay_mbit_min),
      double_field("relay_mbit_max", &ExperimentSpec::relay_mbit_max),
      double_field("client_mbit", &ExperimentSpec::client_mbit),
      double_field("server_mbit", &ExperimentSpec::server_mbit),
      {"graph", [](const ExperimentSpec& s) { return s.graph; },
       [](ExperimentSpec& s, std::string_view v) {
         s.graph = std::string(v);
         return !v.empty();
       }},
      int_field("graph_vertices", &ExperimentSpec::graph_vertices),
      double_field("latency_min_ms", &ExperimentSpec::latency_min_ms),
      double_field("latency_max_ms", &ExperimentSpec::latency_max_ms),
      double_field("latency_tail_prob", &ExperimentSpec::latency_tail_prob),
      double_field("latency_tail_max_ms", &ExperimentSpec::latency_tail_max_ms),
      {"loss_model", [](const ExperimentSpec& s) { return std::string(to_string(s.loss_model)); },
       [](ExperimentSpec& s, std::string_view v) {
         auto m = parse_loss_model(v);
         if (m) s.loss_model = *m;
         return m.has_value();
       }},
      double_field("load_factor", &ExperimentSpec::load_factor),
      {"policy", [](const ExperimentSpec& s) { return std::string(to_string(s.policy)); },
       [](ExperimentSpec& s, std::string_view v) {
         auto p = parse_policy(v);
         if (p) s.policy = *p;
         return p.has_value();
       }},
      int_field("kist_interval_ms", &ExperimentSpec::kist_interval_ms),
      bool_field("per_socket_limit", &ExperimentSpec::per_socket_limit),
      int_field("ewma_halflife_ms", &ExperimentSpec::ewma_halflife_ms),
      int_field("circuit_window", &ExperimentSpec::circuit_window),
      int_field("trace_sample", &ExperimentSpec::trace_sample),
      int_field("start_spread_ms", &ExperimentSpec::start_spread_ms),
      int_field("pinned_exit", &ExperimentSpec::pinned_exit),
      bool_field("autotune", &ExperimentSpec::autotune),
      int_field("sndbuf_initial_bytes", &ExperimentSpec::sndbuf_initial_bytes),
      int_field("sndbuf_max_bytes", &ExperimentSpec::sndbuf_max_bytes),
  };
  return fields;
}

inline const SpecField* find_field(std::string_view key) {
  for (const auto& f : spec_fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace detail

inline std::vector<std::string_view> spec_keys() {
  std::vector<std::string_view> out;
  for (const auto& f : detail::spec_fields()) out.push_back(f.key);
  return out;
}

inline std::string spec_value(const ExperimentSpec& s, std::string_view key) {
  const auto* f = detail::find_field(key);
  if (!f) throw SpecError("unknown key '" + std::string(key) + "'");
  return f->get(s);
}

// Throws SpecError naming the first offending key.
inline void validate(const ExperimentSpec& s) {
  auto bad = [](std::string_view key, const std::string& why) {
    return SpecError("key '" + std::string(key) + "': " + why);
  };
  if (s.duration_ms <= 0) throw bad("duration_ms", "must be positive");
  if (s.n_relays < 1) throw bad("n_relays", "must be at least 1");
  if (s.web_clients < 0) throw bad("web_clients", "must be non-negative");
  if (s.bulk_clients < 0) throw bad("bulk_clients", "must be non-negative");
  if (s.perf_clients < 0) throw bad("perf_clients", "must be non-negative");
  if (s.n_servers < 1) throw bad("n_servers", "must be at least 1");
  if (s.circuit_hops != 3 && s.circuit_hops != 6) throw bad("circuit_hops", "must be 3 or 6");
  if (s.circuit_hops > s.n_relays) throw bad("circuit_hops", "exceeds n_relays");
  if (!(s.relay_mbit_min > 0.0)) throw bad("relay_mbit_min", "must be positive");
  if (s.relay_mbit_max < s.relay_mbit_min) throw bad("relay_mbit_max", "must be >= relay_mbit_min");
  if (!(s.client_mbit > 0.0)) throw bad("client_mbit", "must be positive");
  if (!(s.server_mbit > 0.0)) throw bad("server_mbit", "must be positive");
  if (s.graph_vertices < 2) throw bad("graph_vertices", "must be at least 2");
  if (!(s.latency_min_ms > 0.0) || s.latency_min_ms > 300.0) throw bad("latency_min_ms", "must be in (0, 300]");
  if (s.latency_max_ms < s.latency_min_ms || s.latency_max_ms > 300.0)
    throw bad("latency_max_ms", "must be in [latency_min_ms, 300]");
  if (s.latency_tail_prob < 0.0 || s.latency_tail_prob > 1.0) throw bad("latency_tail_prob", "must be in [0, 1]");
  if (s.latency_tail_max_ms < s.latency_max_ms || s.latency_tail_max_ms > 300.0)
    throw bad("latency_tail_max_ms", "must be in [latency_max_ms, 300]");
  if (!(s.load_factor >= 0.0)) throw bad("load_factor", "must be non-negative");
  if (s.kist_interval_ms <= 0) throw bad("kist_interval_ms", "must be positive");
  if (s.ewma_halflife_ms <= 0) throw bad("ewma_halflife_ms", "must be positive");
  if (s.circuit_window < 0) throw bad("circuit_window", "must be non-negative");
  if (s.circuit_window > 0 && (s.circuit_window < 10 || s.circuit_window % 10 != 0))
    throw bad("circuit_window", "must be 0 or a multiple of 10");
  if (s.trace_sample < 1) throw bad("trace_sample", "must be at least 1");
  if (s.start_spread_ms < 0) throw bad("start_spread_ms", "must be non-negative");
  if (s.pinned_exit < -1 || s.pinned_exit >= s.n_relays) throw bad("pinned_exit", "must be -1 or a relay index");
  if (s.sndbuf_initial_bytes < 1024) throw bad("sndbuf_initial_bytes", "must be at least 1024");
  if (s.sndbuf_max_bytes < s.sndbuf_initial_bytes) throw bad("sndbuf_max_bytes", "must be >= sndbuf_initial_bytes");
}

// Applies one key=value assignment; errors name the key.
inline void set_spec_value(ExperimentSpec& s, std::string_view key, std::string_view value) {
  const auto* f = detail::find_field(key);
  if (!f) throw SpecError("unknown key '" + std::string(key) + "'");
  if (!f->set(s, value))
    throw SpecError("key '" + std::string(key) + "': invalid value '" + std::string(value) + "'");
}

// Flat `key = value` lines, `#` starts a comment. Omitted keys keep their
// defaults; the result is validated.
inline ExperimentSpec parse_spec(std::istream& in) {
  ExperimentSpec s;
  std::vector<std::string> seen;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw SpecError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string_view key = detail::trim(line.substr(0, eq));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    for (const auto& k : seen)
      if (k == key)
        throw SpecError("line " + std::to_string(lineno) + ": key '" + std::string(key) + "' given twice");
    try {
      set_spec_value(s, key, value);
    } catch (const SpecError& e) {
      throw SpecError("line " + std::to_string(lineno) + ": " + e.what());
    }
    seen.emplace_back(key);
  }
  validate(s);
  return s;
}

inline ExperimentSpec parse_spec_string(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_spec(in);
}

inline ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot read spec file '" + path + "'");
  return parse_spec(in);
}

inline std::string serialize(const ExperimentSpec& s) {
  std::string out;
  for (const auto& f : detail::spec_fields()) {
    out += f.key;
    out += '=';
    out += f.get(s);
    out += '\n';
  }
  return out;
}

inline std::uint64_t spec_hash(const ExperimentSpec& s) { return detail::fnv1a(serialize(s)); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// e.g. kist-load1-base-s1
inline std::string run_id(const ExperimentSpec& s) {
  return std::string(to_string(s.policy)) + "-load" + detail::format_double(s.load_factor) + "-" +
         std::string(to_string(s.loss_model)) + "-s" + std::to_string(s.seed);
}

}  // namespace kist
