#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "engine.hpp"

namespace kist {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Timestamped integer samples.
struct Series {
  std::string name;
  std::string unit;
  std::vector<std::pair<std::int64_t, std::int64_t>> samples;

  void add(SimTime t, std::int64_t v) {
    if (!samples.empty() && t.ns < samples.back().first)
      throw MetricsError("series " + name + ": timestamp went backwards");
    samples.emplace_back(t.ns, v);
  }
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<double> values() const {
    std::vector<double> v;
    v.reserve(samples.size());
    for (const auto& [t, x] : samples) v.push_back(static_cast<double>(x));
    return v;
  }
  std::int64_t sum() const {
    std::int64_t s = 0;
    for (const auto& [t, x] : samples) s += x;
    return s;
  }
};

// Empirical CDF over the full sample set.
class CdfTable {
 public:
  explicit CdfTable(std::vector<double> values) : sorted_(std::move(values)) {
    if (sorted_.empty()) throw MetricsError("CDF of an empty series");
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::size_t size() const { return sorted_.size(); }
  double min() const { return sorted_.front(); }
  double max() const { return sorted_.back(); }

  // Value at index ceil(q*n) - 1, clamped to the sample range.
  double quantile(double q) const {
    if (!(q >= 0.0 && q <= 1.0)) throw MetricsError("quantile outside [0, 1]");
    const auto n = static_cast<double>(sorted_.size());
    auto idx = static_cast<std::int64_t>(std::ceil(q * n)) - 1;
    idx = std::clamp<std::int64_t>(idx, 0, static_cast<std::int64_t>(sorted_.size()) - 1);
    return sorted_[static_cast<std::size_t>(idx)];
  }

  // Fraction of samples <= x.
  double fraction_at_most(double x) const {
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
  }

  const std::vector<double>& sorted() const { return sorted_; }

 private:
  std::vector<double> sorted_;
};

inline CdfTable cdf(const Series& s) {
  if (s.empty()) throw MetricsError("CDF of empty series " + s.name);
  return CdfTable(s.values());
}

// Every series a run exports, in export order.
inline const std::vector<std::pair<std::string_view, std::string_view>>& series_catalog() {
  static const std::vector<std::pair<std::string_view, std::string_view>> c = {
      {"ttfb_web", "ns"},        {"ttfb_bulk", "ns"},          {"ttfb_perf", "ns"},
      {"ttlb_web", "ns"},        {"ttlb_bulk", "ns"},          {"ttlb_perf", "ns"},
      {"tor_queue_time", "ns"},  {"kernel_queue_time", "ns"},  {"goodput", "bytes"},
      {"kist_limit_slack", "bytes"}, {"kist_pending_sockets", "sockets"}, {"kist_snapshots", "calls"},
  };
  return c;
}

// Flat manifest: key=value, one per line, sorted by insertion.
using Manifest = std::vector<std::pair<std::string, std::string>>;

struct RunData {
  std::string dir;
  std::map<std::string, std::string> manifest;
  std::map<std::string, Series> series;

  const std::string& get(const std::string& key) const {
    auto it = manifest.find(key);
    if (it == manifest.end()) throw MetricsError(dir + ": manifest has no key '" + key + "'");
    return it->second;
  }
};

class Collector {
 public:
  Collector() {
    for (const auto& [name, unit] : series_catalog()) series_.emplace(std::string(name), Series{std::string(name), std::string(unit), {}});
  }

  Series& series(std::string_view name) {
    auto it = series_.find(std::string(name));
    if (it == series_.end()) throw MetricsError("unknown series " + std::string(name));
    return it->second;
  }
  const Series& series(std::string_view name) const {
    auto it = series_.find(std::string(name));
    if (it == series_.end()) throw MetricsError("unknown series " + std::string(name));
    return it->second;
  }

  void record(std::string_view name, SimTime t, std::int64_t v) { series(name).add(t, v); }

  std::uint64_t& counter(const std::string& name) { return counters_[name]; }
  std::uint64_t counter_value(const std::string& name) const {
    auto it = counters_.find(name);
    return it == counters_.end() ? 0 : it->second;
  }
  const std::map<std::string, std::uint64_t>& counters() const { return counters_; }

  // Delivered payload per 1 s bucket.
  void add_goodput(SimTime at, std::uint64_t bytes) {
    const auto bucket = static_cast<std::size_t>(at.ns / 1'000'000'000);
    if (goodput_.size() <= bucket) goodput_.resize(bucket + 1, 0);
    goodput_[bucket] += bytes;
  }

  // Emits one goodput row per second of a run lasting `duration`.
  void finalize_goodput(Duration duration) {
    const auto buckets = static_cast<std::size_t>((duration.ns + 999'999'999) / 1'000'000'000);
    if (goodput_.size() < buckets) goodput_.resize(buckets, 0);
    Series& g = series("goodput");
    g.samples.clear();
    for (std::size_t i = 0; i < goodput_.size(); ++i)
      g.add(SimTime{static_cast<std::int64_t>(i) * 1'000'000'000}, static_cast<std::int64_t>(goodput_[i]));
  }

  // Writes <dir>/<series>.csv for every series plus <dir>/manifest.txt.
  void export_csv(const std::filesystem::path& dir, const Manifest& manifest) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw MetricsError("cannot create " + dir.string() + ": " + ec.message());
    for (const auto& [name, unit] : series_catalog()) {
      const Series& s = series(name);
      std::ofstream out(dir / (std::string(name) + ".csv"), std::ios::binary);
      if (!out) throw MetricsError("cannot write " + (dir / (std::string(name) + ".csv")).string());
      out << "t_ns,value\n";
      std::string line;
      for (const auto& [t, v] : s.samples) {
        line.clear();
        line += std::to_string(t);
        line += ',';
        line += std::to_string(v);
        line += '\n';
        out << line;
      }
      if (!out) throw MetricsError("write failed for series " + std::string(name));
    }
    std::ofstream m(dir / "manifest.txt", std::ios::binary);
    if (!m) throw MetricsError("cannot write manifest in " + dir.string());
    for (const auto& [k, v] : manifest) m << k << '=' << v << '\n';
    for (const auto& [name, unit] : series_catalog())
      m << "series." << name << ".rows=" << series(name).size() << '\n';
    for (const auto& [k, v] : counters_) m << "count." << k << '=' << v << '\n';
    if (!m) throw MetricsError("manifest write failed in " + dir.string());
  }

 private:
  std::map<std::string, Series> series_;
  std::map<std::string, std::uint64_t> counters_;
  std::vector<std::uint64_t> goodput_;
};

inline Series read_series_csv(const std::filesystem::path& file, std::string name) {
  std::ifstream in(file);
  if (!in) throw MetricsError("cannot read " + file.string());
  Series s;
  s.name = std::move(name);
  std::string line;
  if (!std::getline(in, line) || line != "t_ns,value") throw MetricsError(file.string() + ": bad header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw MetricsError(file.string() + ":" + std::to_string(lineno) + ": bad row");
    try {
      s.samples.emplace_back(std::stoll(line.substr(0, comma)), std::stoll(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw MetricsError(file.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return s;
}

inline RunData load_run(const std::filesystem::path& dir) {
  RunData r;
  r.dir = dir.string();
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw MetricsError("no manifest.txt in " + dir.string());
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw MetricsError(dir.string() + ": malformed manifest line '" + line + "'");
    r.manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const auto& [name, unit] : series_catalog()) {
    Series s = read_series_csv(dir / (std::string(name) + ".csv"), std::string(name));
    s.unit = std::string(unit);
    r.series.emplace(std::string(name), std::move(s));
  }
  return r;
}

struct QuantileDelta {
  std::string metric;
  double q;
  std::optional<double> amap;
  std::optional<double> kist;
  std::optional<double> delta() const {
    if (!amap || !kist) return std::nullopt;
    return *amap - *kist;
  }
};

struct CompareReport {
  std::string amap_run;
  std::string kist_run;
  std::vector<QuantileDelta> quantiles;
  std::int64_t goodput_amap = 0;
  std::int64_t goodput_kist = 0;
  std::int64_t goodput_delta() const { return goodput_amap - goodput_kist; }

  const QuantileDelta& at(std::string_view metric, double q) const {
    for (const auto& d : quantiles)
      if (d.metric == metric && d.q == q) return d;
    throw MetricsError("no comparison row for " + std::string(metric));
  }

  std::string to_text() const;
};

inline const std::vector<std::string_view>& compared_metrics() {
  static const std::vector<std::string_view> m = {"ttfb_web", "ttfb_bulk", "ttfb_perf", "ttlb_web",
                                                  "ttlb_bulk", "ttlb_perf", "tor_queue_time",
                                                  "kernel_queue_time"};
  return m;
}

// Quantile deltas AMAP minus KIST. Both runs must share every spec key except
// the policy. If neither or both runs are AMAP, `a` plays the AMAP role.
inline CompareReport compare(const RunData& a, const RunData& b) {
  for (const auto& [k, v] : a.manifest) {
    if (k.rfind("spec.", 0) != 0 || k == "spec.policy") continue;
    auto it = b.manifest.find(k);
    if (it == b.manifest.end()) throw MetricsError("spec key " + k + " missing from " + b.dir);
    if (it->second != v) throw MetricsError("spec mismatch on " + k + ": " + v + " vs " + it->second);
  }
  for (const auto& [k, v] : b.manifest)
    if (k.rfind("spec.", 0) == 0 && !a.manifest.contains(k))
      throw MetricsError("spec key " + k + " missing from " + a.dir);

  const RunData* amap = &a;
  const RunData* kist = &b;
  if (a.get("spec.policy") == "kist" && b.get("spec.policy") == "amap") std::swap(amap, kist);

  CompareReport r;
  r.amap_run = amap->get("run_id");
  r.kist_run = kist->get("run_id");
  for (std::string_view metric : compared_metrics()) {
    const Series& sa = amap->series.at(std::string(metric));
    const Series& sb = kist->series.at(std::string(metric));
    std::optional<CdfTable> ca, cb;
    if (!sa.empty()) ca.emplace(sa.values());
    if (!sb.empty()) cb.emplace(sb.values());
    for (double q : {0.1, 0.5, 0.9}) {
      QuantileDelta d{std::string(metric), q, {}, {}};
      if (ca) d.amap = ca->quantile(q);
      if (cb) d.kist = cb->quantile(q);
      r.quantiles.push_back(d);
    }
  }
  r.goodput_amap = amap->series.at("goodput").sum();
  r.goodput_kist = kist->series.at("goodput").sum();
  return r;
}

inline std::string CompareReport::to_text() const {
  std::ostringstream o;
  o << "amap_run=" << amap_run << '\n' << "kist_run=" << kist_run << '\n';
  o << "metric,quantile,amap,kist,amap_minus_kist\n";
  auto num = [](std::optional<double> v) {
    if (!v) return std::string("na");
    return std::to_string(static_cast<long long>(std::llround(*v)));
  };
  for (const auto& d : quantiles) {
    o << d.metric << ",q" << static_cast<int>(std::lround(d.q * 100)) << ',' << num(d.amap) << ','
      << num(d.kist) << ',' << num(d.delta()) << '\n';
  }
  o << "goodput_sum," << "all," << goodput_amap << ',' << goodput_kist << ',' << goodput_delta() << '\n';
  return o.str();
}

}  // namespace kist
