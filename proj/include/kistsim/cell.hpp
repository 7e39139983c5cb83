#pragma once

#include <cstdint>

#include "engine.hpp"

namespace kist {

using CircuitId = std::uint64_t;

inline constexpr std::uint32_t kCellBytes = 512;
// Usable payload per cell; the remainder is a simulated relay header.
inline constexpr std::uint32_t kCellPayloadBytes = 498;

enum class CellKind : std::uint8_t { data, request, sendme };

// forward: toward the exit and server. backward: toward the client.
enum class Direction : std::uint8_t { forward, backward };

// Per-hop pipeline timestamps, reset at every relay.
struct CellTrace {
  SimTime enqueued_to_circuit;
  SimTime written_to_outbuf;
  SimTime flushed_to_kernel;
  SimTime first_transmitted;
};

struct Cell {
  std::uint64_t id = 0;
  CircuitId circuit = 0;
  CellKind kind = CellKind::data;
  std::uint16_t payload = 0;
  std::uint64_t download = 0;
  std::uint64_t size = 0;  // request cells: bytes asked for
  NodeId server = kNoNode;
  bool traced = false;
  CellTrace trace;
};

}  // namespace kist
