#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "netconv/ingest/packet.hpp"

namespace netconv::ingest {

inline constexpr double kDefaultIdleTimeoutSeconds = 64.0;

struct Flow {
  FlowKey key;
  std::vector<RawPacket> packets;  // arrival order
  std::optional<std::uint32_t> label;
};

// Groups packets by canonical key. Within a key, a gap strictly greater than
// `idle_timeout_s` between consecutive packets starts a new flow. Packets
// without an IP layer are dropped. Flows come back ordered by (first packet
// timestamp, key).
std::vector<Flow> assemble_flows(std::span<const RawPacket> packets,
                                 double idle_timeout_s = kDefaultIdleTimeoutSeconds);

}  // namespace netconv::ingest
