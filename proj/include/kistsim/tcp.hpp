#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>

#include "engine.hpp"
#include "netgraph.hpp"

namespace kist {

// Snapshot of the fields the KIST limit reads from TCP_INFO.
struct TcpInfo {
  std::uint32_t cwnd = 0;     // packets
  std::uint32_t una = 0;      // packets sent, not yet acked
  std::uint32_t mss = 0;      // bytes
  std::uint64_t notsent = 0;  // bytes written but not yet sent

  bool operator==(const TcpInfo&) const = default;
};

enum class CongestionState { slow_start, congestion_avoidance, recovery };
enum class LossKind { triple_dupack, timeout };

struct TcpConfig {
  std::uint32_t mss = 1448;
  std::uint32_t initial_cwnd = 10;
  std::uint64_t initial_sndbuf = 16 * 1024;
  std::uint64_t max_sndbuf = 4 * 1024 * 1024;
  bool autotune = true;
  // Free space needed before a full socket reports writable again.
  std::uint64_t writable_lowat = 512;
  Duration initial_rto = seconds(1);
  Duration min_rto = milliseconds(200);
  Duration max_rto = seconds(60);
  // TCP small queues: a socket keeps at most about 1 ms of line rate (and at
  // least two segments) in the host queue; the rest waits in the send buffer.
  bool small_queues = true;
  std::uint64_t small_queue_cap = 256 * 1024;
};

// Reno window arithmetic. Kept apart from TcpFlow so the rules are testable
// without running a connection.
struct RenoWindow {
  double cwnd;
  std::uint32_t ssthresh = std::numeric_limits<std::uint32_t>::max();
  CongestionState state = CongestionState::slow_start;
  std::uint32_t initial;

  explicit RenoWindow(std::uint32_t initial_cwnd = 10)
      : cwnd(initial_cwnd), initial(initial_cwnd) {}

  std::uint32_t window() const {
    return std::max<std::uint32_t>(1, static_cast<std::uint32_t>(std::floor(cwnd)));
  }

  void on_ack(std::uint32_t acked) {
    switch (state) {
      case CongestionState::slow_start:
        cwnd += acked;
        if (cwnd >= ssthresh) state = CongestionState::congestion_avoidance;
        break;
      case CongestionState::congestion_avoidance:
        cwnd += static_cast<double>(acked) / cwnd;
        break;
      case CongestionState::recovery:
        break;
    }
  }

  void on_loss(LossKind kind) {
    ssthresh = std::max<std::uint32_t>(1, window() / 2);
    if (kind == LossKind::triple_dupack) {
      cwnd = ssthresh;
      state = CongestionState::recovery;
    } else {
      cwnd = initial;
      state = CongestionState::slow_start;
    }
  }

  void exit_recovery() {
    cwnd = ssthresh;
    state = CongestionState::congestion_avoidance;
  }
};

// First-transmission record for a run of bytes that entered the kernel at
// `entered`.
struct SegmentRecord {
  std::uint64_t seq = 0;
  std::uint32_t len = 0;
  SimTime entered;
  std::optional<SimTime> first_tx;
};

inline Duration kernel_queue_time(const SegmentRecord& s) {
  if (!s.first_tx) throw std::logic_error("kernel queue time queried before transmission");
  return *s.first_tx - s.entered;
}

class TcpFlow;

// Host egress: one FIFO drained at a fixed rate, shared by every flow the host
// sends on.
class Nic {
 public:
  Nic(Engine& engine, NodeId host, std::uint64_t bits_per_second)
      : engine_(engine), host_(host), bps_(bits_per_second) {
    if (bps_ == 0) throw std::invalid_argument("host capacity must be positive");
  }
  Nic(const Nic&) = delete;
  Nic& operator=(const Nic&) = delete;

  NodeId host() const { return host_; }
  std::uint64_t bits_per_second() const { return bps_; }
  std::uint64_t backlog_bytes() const { return backlog_; }
  std::size_t backlog_segments() const { return queue_.size(); }
  std::uint64_t bytes_sent() const { return sent_; }

  Duration tx_time(std::uint32_t bytes) const {
    const std::uint64_t bits_ns = static_cast<std::uint64_t>(bytes) * 8ULL * 1'000'000'000ULL;
    return nanoseconds(static_cast<std::int64_t>((bits_ns + bps_ - 1) / bps_));
  }

  inline void enqueue(TcpFlow* flow, std::uint64_t seq, std::uint32_t len);

 private:
  struct Item {
    TcpFlow* flow;
    std::uint64_t seq;
    std::uint32_t len;
  };

  inline void start_next();

  Engine& engine_;
  NodeId host_;
  std::uint64_t bps_;
  std::deque<Item> queue_;
  std::uint64_t backlog_ = 0;
  std::uint64_t sent_ = 0;
  bool busy_ = false;
};

// One direction of a TCP connection: the sender at `src` plus the receiver
// state at `dst`. Acks return on the same path without queuing behind data.
class TcpFlow {
 public:
  struct Hooks {
    std::function<void()> on_writable;
    // Receiver: in-order stream bytes are now available up to this offset.
    std::function<void(std::uint64_t)> on_deliver;
    // Sender: stream bytes up to this offset have left the host at least once.
    std::function<void(std::uint64_t, SimTime)> on_first_transmit;
    std::function<void(const SegmentRecord&)> on_kernel_sample;
  };

  TcpFlow(Engine& engine, Nic& nic, Edge path, RngStream* loss_rng, NodeId dst, TcpConfig cfg = {})
      : engine_(engine), nic_(nic), path_(path), loss_rng_(loss_rng), src_(nic.host()), dst_(dst),
        cfg_(cfg), reno_(cfg.initial_cwnd), capacity_(cfg.initial_sndbuf) {
    if (path_.loss > 0.0 && loss_rng_ == nullptr)
      throw std::invalid_argument("lossy path needs a random stream");
  }
  TcpFlow(const TcpFlow&) = delete;
  TcpFlow& operator=(const TcpFlow&) = delete;

  Hooks& hooks() { return hooks_; }
  NodeId src() const { return src_; }
  NodeId dst() const { return dst_; }
  const Edge& path() const { return path_; }
  const TcpConfig& config() const { return cfg_; }

  bool is_open() const { return open_; }
  void close() { open_ = false; }

  // Accepts up to the free send-buffer space; the rest is refused.
  std::uint64_t write(std::uint64_t bytes) {
    if (!open_) throw std::logic_error("write on closed connection");
    const std::uint64_t accepted = std::min(bytes, free_space());
    if (accepted > 0) {
      write_seq_ += accepted;
      if (!entries_.empty() && entries_.back().at == engine_.now())
        entries_.back().end = write_seq_;
      else
        entries_.push_back({write_seq_, engine_.now()});
    }
    if (cfg_.autotune && bytes > 0 && occupancy() == capacity_) autotune();
    writable_ = free_space() >= cfg_.writable_lowat;
    if (accepted > 0) try_send();
    return accepted;
  }

  // Counted snapshot, the simulator's getsockopt(TCP_INFO).
  TcpInfo info() {
    ++info_calls_;
    return peek_info();
  }

  TcpInfo peek_info() const {
    return TcpInfo{reno_.window(), static_cast<std::uint32_t>(out_.size()), cfg_.mss, notsent()};
  }

  // Doubles the send-buffer capacity up to the configured maximum.
  std::uint64_t autotune() {
    capacity_ = std::max(capacity_, std::min(capacity_ * 2, cfg_.max_sndbuf));
    return capacity_;
  }

  void on_loss(LossKind kind) {
    reno_.on_loss(kind);
    dupacks_ = 0;
    if (kind == LossKind::triple_dupack) {
      ++fast_retransmits_;
      recovery_dupacks_ = 3;
      recover_ = snd_nxt_;
      if (!out_.empty()) mark_lost(0);
    } else {
      ++timeouts_;
      recover_ = snd_nxt_;
      after_timeout_ = true;
      for (std::size_t i = 0; i < out_.size(); ++i) mark_lost(i);
      backoff_ = std::min(backoff_ + 1, 16);
    }
    try_send();
  }

  std::uint64_t occupancy() const { return write_seq_ - snd_una_; }
  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t free_space() const { return capacity_ - occupancy(); }
  std::uint64_t notsent() const { return write_seq_ - snd_nxt_; }
  bool writable() const { return open_ && writable_; }

  std::uint32_t in_flight() const { return static_cast<std::uint32_t>(out_.size() - lost_pending_); }
  const RenoWindow& congestion() const { return reno_; }
  RenoWindow& congestion() { return reno_; }

  std::uint64_t bytes_accepted() const { return write_seq_; }
  std::uint64_t bytes_delivered() const { return rcv_nxt_; }
  std::uint64_t bytes_sent() const { return snd_nxt_; }
  std::uint64_t bytes_acked() const { return snd_una_; }
  std::uint64_t bytes_first_transmitted() const { return first_tx_high_; }
  std::uint64_t outstanding_undelivered_bytes() const {
    std::uint64_t b = 0;
    for (const auto& s : out_)
      if (s.seq + s.len > rcv_nxt_) b += s.seq + s.len - std::max(s.seq, rcv_nxt_);
    return b;
  }

  std::uint64_t info_calls() const { return info_calls_; }
  std::uint64_t segments_sent() const { return segments_sent_; }
  std::uint64_t retransmits() const { return retransmits_; }
  std::uint64_t timeouts() const { return timeouts_; }
  std::uint64_t fast_retransmits() const { return fast_retransmits_; }
  std::uint64_t sends_over_window() const { return sends_over_window_; }
  std::optional<Duration> srtt() const {
    if (!srtt_ns_) return std::nullopt;
    return nanoseconds(static_cast<std::int64_t>(*srtt_ns_));
  }

  // Called by the host NIC when a segment finishes serialization.
  void on_departure(std::uint64_t seq, std::uint32_t len) {
    const SimTime now = engine_.now();
    const std::uint64_t end = seq + len;
    if (end > first_tx_high_) {
      const std::uint64_t start = std::max(seq, first_tx_high_);
      while (!entries_.empty() && entries_.front().end <= start) entries_.pop_front();
      SegmentRecord rec{start, static_cast<std::uint32_t>(end - start),
                        entries_.empty() ? now : entries_.front().at, now};
      first_tx_high_ = end;
      while (!entries_.empty() && entries_.front().end <= end) entries_.pop_front();
      if (hooks_.on_kernel_sample) hooks_.on_kernel_sample(rec);
      if (hooks_.on_first_transmit) hooks_.on_first_transmit(end, now);
    }
    const auto arrival = loss_rng_ ? transmit(now, path_, *loss_rng_) : std::optional(now + path_.latency());
    if (arrival) engine_.schedule_at(*arrival, dst_, [this, seq, len] { on_segment_arrival(seq, len); });
    host_queued_ -= len;
    if (notsent() > 0) try_send();
  }

  std::uint64_t host_queued_bytes() const { return host_queued_; }
  std::uint64_t small_queue_limit() const {
    const std::uint64_t per_ms = nic_.bits_per_second() / 8 / 1000;
    return std::min(cfg_.small_queue_cap, std::max<std::uint64_t>(2ULL * cfg_.mss, per_ms));
  }

 private:
  struct Outstanding {
    std::uint64_t seq;
    std::uint32_t len;
    SimTime sent_at;
    bool retransmitted = false;
    bool lost = false;
  };
  struct EntryChunk {
    std::uint64_t end;
    SimTime at;
  };

  void on_segment_arrival(std::uint64_t seq, std::uint32_t len) {
    const std::uint64_t end = seq + len;
    bool advanced = false;
    if (end <= rcv_nxt_) {
      // duplicate
    } else if (seq <= rcv_nxt_) {
      rcv_nxt_ = end;
      while (!ooo_.empty() && ooo_.begin()->first <= rcv_nxt_) {
        rcv_nxt_ = std::max(rcv_nxt_, ooo_.begin()->second);
        ooo_.erase(ooo_.begin());
      }
      advanced = true;
    } else {
      auto& e = ooo_[seq];
      e = std::max(e, end);
    }
    const std::uint64_t ack = rcv_nxt_;
    engine_.schedule(path_.latency(), src_, [this, ack] { handle_ack(ack); });
    if (advanced && hooks_.on_deliver) hooks_.on_deliver(rcv_nxt_);
  }

  void handle_ack(std::uint64_t ack) {
    if (ack > snd_una_) {
      std::uint32_t acked = 0;
      std::optional<Duration> rtt;
      while (!out_.empty() && out_.front().seq + out_.front().len <= ack) {
        const Outstanding& s = out_.front();
        if (!s.retransmitted) rtt = engine_.now() - s.sent_at;
        if (s.lost) --lost_pending_;
        out_.pop_front();
        ++acked;
      }
      lost_hint_ = lost_hint_ > acked ? lost_hint_ - acked : 0;
      snd_una_ = ack;
      // Karn: only a clean sample ends the backoff.
      if (rtt) {
        update_rtt(*rtt);
        backoff_ = 0;
      }
      dupacks_ = 0;
      if (after_timeout_ && snd_una_ >= recover_) after_timeout_ = false;
      if (reno_.state == CongestionState::recovery) {
        recovery_dupacks_ = 0;
        if (ack >= recover_)
          reno_.exit_recovery();
        else if (!out_.empty() && !out_.front().lost)
          mark_lost(0);  // partial ack: next hole
      } else if (cwnd_limited_ || (reno_.state == CongestionState::slow_start && reno_.window() < 2 * max_flight_)) {
        reno_.on_ack(acked);
      }
      if (snd_una_ >= usage_seq_) {
        // A window's worth has been acked; start a new usage period.
        cwnd_limited_ = false;
        max_flight_ = in_flight();
        usage_seq_ = snd_nxt_;
      }
      if (out_.empty())
        rto_armed_ = false;
      else
        arm_rto();
      if (!writable_ && open_ && free_space() >= cfg_.writable_lowat) {
        writable_ = true;
        if (hooks_.on_writable) hooks_.on_writable();
      }
      try_send();
    } else if (ack == snd_una_ && !out_.empty()) {
      ++dupacks_;
      if (reno_.state == CongestionState::recovery) {
        ++recovery_dupacks_;
        try_send();
      } else if (!after_timeout_) {
        // Duplicates of go-back-N retransmissions are not a new loss signal.
        if (dupacks_ >= dupack_threshold())
          on_loss(LossKind::triple_dupack);
        else
          try_send();  // limited transmit
      }
    }
  }

  void mark_lost(std::size_t i) {
    if (out_[i].lost) return;
    out_[i].lost = true;
    ++lost_pending_;
    lost_hint_ = std::min(lost_hint_, i);
  }

  // Early retransmit: a short flight with nothing left to send cannot
  // produce three dupacks, so fewer suffice.
  std::uint32_t dupack_threshold() const {
    const auto out = static_cast<std::uint32_t>(out_.size());
    if (out < 4 && notsent() == 0) return std::max<std::uint32_t>(1, out - 1);
    return 3;
  }

  // Segments believed to be in the network. During recovery each dupack
  // means one segment has left it (Reno window inflation); before recovery
  // the first two dupacks each release one new segment (limited transmit).
  std::uint32_t pipe() const {
    const std::uint32_t f = in_flight();
    const std::uint32_t left = reno_.state == CongestionState::recovery ? recovery_dupacks_
                               : after_timeout_                         ? 0
                                                                        : std::min<std::uint32_t>(dupacks_, 2);
    return f > left ? f - left : 0;
  }

  void retransmit_next() {
    std::size_t i = lost_hint_;
    while (!out_[i].lost) ++i;
    Outstanding& s = out_[i];
    s.lost = false;
    s.retransmitted = true;
    s.sent_at = engine_.now();
    --lost_pending_;
    lost_hint_ = i + 1;
    ++retransmits_;
    ++segments_sent_;
    // Resending the head restarts the timer, as Linux does.
    if (i == 0 || !rto_armed_) arm_rto();
    to_nic(s.seq, s.len);
  }

  void try_send() {
    // Fast retransmissions go out at once, whatever the window.
    while (lost_pending_ > 0 && reno_.state == CongestionState::recovery) retransmit_next();
    while (true) {
      const std::uint32_t window = reno_.window();
      if (pipe() >= window) {
        if (lost_pending_ > 0 || notsent() > 0) cwnd_limited_ = true;
        break;
      }
      if (lost_pending_ > 0) {
        retransmit_next();
        continue;
      }
      const std::uint64_t pending = notsent();
      if (pending == 0) break;
      if (cfg_.small_queues && host_queued_ >= small_queue_limit()) break;
      const auto len = static_cast<std::uint32_t>(std::min<std::uint64_t>(cfg_.mss, pending));
      out_.push_back(Outstanding{snd_nxt_, len, engine_.now()});
      snd_nxt_ += len;
      send_segment(out_.back().seq, len, window);
    }
  }

  void send_segment(std::uint64_t seq, std::uint32_t len, std::uint32_t window) {
    if (pipe() > window) ++sends_over_window_;
    ++segments_sent_;
    if (!rto_armed_) arm_rto();
    to_nic(seq, len);
    max_flight_ = std::max(max_flight_, in_flight());
  }

  void to_nic(std::uint64_t seq, std::uint32_t len) {
    host_queued_ += len;
    nic_.enqueue(this, seq, len);
  }

  Duration current_rto() const {
    std::int64_t base = cfg_.initial_rto.ns;
    if (srtt_ns_) base = static_cast<std::int64_t>(*srtt_ns_ + 4.0 * rttvar_ns_);
    base = std::clamp(base, cfg_.min_rto.ns, cfg_.max_rto.ns);
    for (int i = 0; i < backoff_ && base < cfg_.max_rto.ns; ++i) base *= 2;
    return nanoseconds(std::min(base, cfg_.max_rto.ns));
  }

  void update_rtt(Duration sample) {
    const auto r = static_cast<double>(sample.ns);
    if (!srtt_ns_) {
      srtt_ns_ = r;
      rttvar_ns_ = r / 2.0;
    } else {
      rttvar_ns_ = 0.75 * rttvar_ns_ + 0.25 * std::abs(*srtt_ns_ - r);
      srtt_ns_ = 0.875 * *srtt_ns_ + 0.125 * r;
    }
  }

  // The timer event is not cancelled on every ack; it re-arms itself if the
  // deadline moved.
  void arm_rto() {
    rto_deadline_ = engine_.now() + current_rto();
    rto_armed_ = true;
    if (!timer_event_) {
      timer_event_ = true;
      engine_.schedule_at(rto_deadline_, src_, [this] { on_rto_timer(); });
    }
  }

  void on_rto_timer() {
    timer_event_ = false;
    if (out_.empty()) {
      rto_armed_ = false;
      return;
    }
    if (engine_.now() < rto_deadline_) {
      timer_event_ = true;
      engine_.schedule_at(rto_deadline_, src_, [this] { on_rto_timer(); });
      return;
    }
    on_loss(LossKind::timeout);
    arm_rto();
  }

  Engine& engine_;
  Nic& nic_;
  Edge path_;
  RngStream* loss_rng_;
  NodeId src_;
  NodeId dst_;
  TcpConfig cfg_;
  Hooks hooks_;
  RenoWindow reno_;

  bool open_ = true;
  bool writable_ = true;
  std::uint64_t capacity_;

  // Sender byte offsets.
  std::uint64_t write_seq_ = 0;
  std::uint64_t snd_nxt_ = 0;
  std::uint64_t snd_una_ = 0;
  std::uint64_t first_tx_high_ = 0;
  std::uint64_t recover_ = 0;
  bool after_timeout_ = false;
  std::deque<Outstanding> out_;
  std::size_t lost_pending_ = 0;
  std::size_t lost_hint_ = 0;
  std::deque<EntryChunk> entries_;
  std::uint32_t dupacks_ = 0;
  std::uint32_t recovery_dupacks_ = 0;
  std::uint64_t host_queued_ = 0;

  // Window validation: cwnd grows only while the flow uses it.
  bool cwnd_limited_ = false;
  std::uint32_t max_flight_ = 0;
  std::uint64_t usage_seq_ = 0;

  std::optional<double> srtt_ns_;
  double rttvar_ns_ = 0.0;
  int backoff_ = 0;
  bool rto_armed_ = false;
  bool timer_event_ = false;
  SimTime rto_deadline_;

  // Receiver.
  std::uint64_t rcv_nxt_ = 0;
  std::map<std::uint64_t, std::uint64_t> ooo_;

  std::uint64_t info_calls_ = 0;
  std::uint64_t segments_sent_ = 0;
  std::uint64_t retransmits_ = 0;
  std::uint64_t timeouts_ = 0;
  std::uint64_t fast_retransmits_ = 0;
  std::uint64_t sends_over_window_ = 0;
};

inline void Nic::enqueue(TcpFlow* flow, std::uint64_t seq, std::uint32_t len) {
  queue_.push_back({flow, seq, len});
  backlog_ += len;
  if (!busy_) start_next();
}

inline void Nic::start_next() {
  if (queue_.empty()) {
    busy_ = false;
    return;
  }
  busy_ = true;
  engine_.schedule(tx_time(queue_.front().len), host_, [this] {
    const Item item = queue_.front();
    queue_.pop_front();
    backlog_ -= item.len;
    sent_ += item.len;
    item.flow->on_departure(item.seq, item.len);
    start_next();
  });
}

}  // namespace kist
