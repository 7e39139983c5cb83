#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <stdexcept>

#include "cell.hpp"
#include "circuit.hpp"
#include "engine.hpp"
#include "tcp.hpp"

namespace kist {

class ChannelSide;

// Anything that terminates channels: relays, clients, servers.
class Node {
 public:
  virtual ~Node() = default;
  virtual NodeId id() const = 0;
  virtual void on_cell(ChannelSide& in, Cell cell) = 0;
  virtual void on_writable(ChannelSide& side) = 0;
  virtual void on_cell_transmitted(ChannelSide&, const Cell&) {}
};

using ChannelId = std::uint64_t;

// One endpoint of a channel: the outgoing TCP flow plus the application
// output buffer feeding it. Cells ride alongside the byte stream so that the
// receiving endpoint can recover them once their bytes arrive in order.
class ChannelSide {
 public:
  static constexpr std::uint64_t kUnlimited = std::numeric_limits<std::uint64_t>::max();

  ChannelId channel_id() const { return channel_; }
  Node& owner() const { return *owner_; }
  NodeId peer_node() const { return peer_->owner().id(); }
  ChannelSide& peer() const { return *peer_; }
  TcpFlow& flow() const { return *flow_; }

  bool is_open() const { return flow_->is_open(); }
  bool writable() const { return flow_->writable(); }
  TcpInfo tcp_info() const { return flow_->info(); }

  void append_to_outbuf(Cell c, SimTime now) {
    c.trace.written_to_outbuf = now;
    appended_ += kCellBytes;
    outbuf_.push_back({appended_, std::move(c)});
  }

  std::uint64_t outbuf_bytes() const { return appended_ - kernel_; }
  std::size_t outbuf_cells() const { return outbuf_.size(); }

  // Writes up to `max_bytes` of the outbuf to the kernel; returns bytes accepted.
  std::uint64_t flush(SimTime now, std::uint64_t max_bytes = kUnlimited) {
    const std::uint64_t n = std::min(outbuf_bytes(), max_bytes);
    if (n == 0 || !flow_->is_open()) return 0;
    const std::uint64_t accepted = flow_->write(n);
    kernel_ += accepted;
    while (!outbuf_.empty() && outbuf_.front().end <= kernel_) {
      InPipe p = std::move(outbuf_.front());
      outbuf_.pop_front();
      p.cell.trace.flushed_to_kernel = now;
      in_kernel_.push_back(std::move(p));
    }
    return accepted;
  }

  std::uint64_t bytes_to_kernel() const { return kernel_; }
  std::size_t cells_in_pipe() const { return outbuf_.size() + in_kernel_.size() + in_network_.size(); }
  std::uint64_t inbuf_retained() const { return framer_.retained(); }

 private:
  friend class Channel;

  struct InPipe {
    std::uint64_t end;  // stream offset just past this cell
    Cell cell;
  };

  void on_first_transmit(std::uint64_t upto, SimTime at) {
    while (!in_kernel_.empty() && in_kernel_.front().end <= upto) {
      InPipe p = std::move(in_kernel_.front());
      in_kernel_.pop_front();
      p.cell.trace.first_transmitted = at;
      owner_->on_cell_transmitted(*this, p.cell);
      in_network_.push_back(std::move(p));
    }
  }

  // Inbound bytes from the peer's flow are now available up to `upto`.
  void on_deliver(std::uint64_t upto) {
    const std::size_t cells = framer_.feed(upto - delivered_);
    delivered_ = upto;
    for (std::size_t i = 0; i < cells; ++i) {
      auto& src = peer_->in_network_;
      if (src.empty()) throw std::logic_error("stream delivered bytes with no cell in flight");
      Cell c = std::move(src.front().cell);
      src.pop_front();
      owner_->on_cell(*this, std::move(c));
    }
  }

  ChannelId channel_ = 0;
  Node* owner_ = nullptr;
  ChannelSide* peer_ = nullptr;
  TcpFlow* flow_ = nullptr;

  std::uint64_t appended_ = 0;
  std::uint64_t kernel_ = 0;
  std::deque<InPipe> outbuf_;
  std::deque<InPipe> in_kernel_;
  std::deque<InPipe> in_network_;

  CellFramer framer_;
  std::uint64_t delivered_ = 0;
};

// Bidirectional connection between two nodes: a TCP flow each way.
class Channel {
 public:
  Channel(ChannelId id, Engine& engine, Node& a, Nic& nic_a, RngStream* loss_a, Node& b, Nic& nic_b,
          RngStream* loss_b, Edge path, const TcpConfig& cfg)
      : id_(id) {
    flows_[0] = std::make_unique<TcpFlow>(engine, nic_a, path, loss_a, b.id(), cfg);
    flows_[1] = std::make_unique<TcpFlow>(engine, nic_b, path, loss_b, a.id(), cfg);
    Node* owners[2] = {&a, &b};
    for (int i = 0; i < 2; ++i) {
      sides_[i].channel_ = id;
      sides_[i].owner_ = owners[i];
      sides_[i].peer_ = &sides_[1 - i];
      sides_[i].flow_ = flows_[i].get();
    }
    for (int i = 0; i < 2; ++i) {
      ChannelSide* self = &sides_[i];
      ChannelSide* other = &sides_[1 - i];
      auto& h = flows_[i]->hooks();
      h.on_first_transmit = [self](std::uint64_t upto, SimTime at) { self->on_first_transmit(upto, at); };
      h.on_deliver = [other](std::uint64_t upto) { other->on_deliver(upto); };
      h.on_writable = [self] { self->owner().on_writable(*self); };
    }
  }
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  ChannelId id() const { return id_; }
  ChannelSide& side(int i) { return sides_.at(static_cast<std::size_t>(i)); }
  const ChannelSide& side(int i) const { return sides_.at(static_cast<std::size_t>(i)); }

  ChannelSide& side_of(const Node& n) {
    if (&sides_[0].owner() == &n) return sides_[0];
    if (&sides_[1].owner() == &n) return sides_[1];
    throw std::invalid_argument("node is not an endpoint of this channel");
  }

  void close() {
    flows_[0]->close();
    flows_[1]->close();
  }

  std::size_t cells_in_transit() const { return sides_[0].cells_in_pipe() + sides_[1].cells_in_pipe(); }

 private:
  ChannelId id_;
  std::array<std::unique_ptr<TcpFlow>, 2> flows_;
  std::array<ChannelSide, 2> sides_;
};

}  // namespace kist
