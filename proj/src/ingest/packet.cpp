#include <algorithm>
#include <cstdio>
#include <sstream>

#include "netconv/ingest/packet.hpp"

namespace netconv::ingest {

namespace {

constexpr std::size_t kEthernetHeader = 14;
constexpr std::uint16_t kEtherIpv4 = 0x0800;
constexpr std::uint16_t kEtherIpv6 = 0x86DD;
constexpr std::uint16_t kEtherVlan = 0x8100;
constexpr std::uint16_t kEtherQinQ = 0x88A8;

std::uint16_t be16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

bool has_ports(std::uint8_t protocol) { return protocol == ip_protocol::tcp || protocol == ip_protocol::udp; }

void parse_ipv4(const std::vector<std::uint8_t>& b, std::size_t l3, PacketLayout& out) {
  if (b.size() < l3 + 20) return;
  out.l3_offset = l3;
  out.ip_version = 4;
  out.protocol = b[l3 + 9];
  const std::size_t ihl = static_cast<std::size_t>(b[l3] & 0x0F) * 4;
  const bool later_fragment = (be16(b, l3 + 6) & 0x1FFF) != 0;
  if (ihl >= 20 && !later_fragment && has_ports(out.protocol) && b.size() >= l3 + ihl + 4) {
    out.l4_offset = l3 + ihl;
  }
}

// Walks the common extension headers only as far as needed to find ports.
void parse_ipv6(const std::vector<std::uint8_t>& b, std::size_t l3, PacketLayout& out) {
  if (b.size() < l3 + 40) return;
  out.l3_offset = l3;
  out.ip_version = 6;
  std::uint8_t next = b[l3 + 6];
  std::size_t at = l3 + 40;
  for (int hops = 0; hops < 8; ++hops) {
    if (next == 0 || next == 43 || next == 60) {
      if (b.size() < at + 2) break;
      next = b[at];
      at += (static_cast<std::size_t>(b[at + 1]) + 1) * 8;
    } else if (next == 44) {
      if (b.size() < at + 8) break;
      const bool later_fragment = (be16(b, at + 2) & 0xFFF8) != 0;
      next = b[at];
      at += 8;
      if (later_fragment) {
        out.protocol = next;
        return;
      }
    } else {
      break;
    }
  }
  out.protocol = next;
  if (has_ports(next) && b.size() >= at + 4) out.l4_offset = at;
}

Endpoint endpoint_at(const std::vector<std::uint8_t>& b, const PacketLayout& layout, bool source) {
  Endpoint e;
  const std::size_t l3 = *layout.l3_offset;
  if (layout.ip_version == 4) {
    e.ip[10] = 0xFF;
    e.ip[11] = 0xFF;
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(l3 + (source ? 12 : 16)), 4, e.ip.begin() + 12);
  } else {
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(l3 + (source ? 8 : 24)), 16, e.ip.begin());
  }
  if (layout.l4_offset) e.port = be16(b, *layout.l4_offset + (source ? 0 : 2));
  return e;
}

void zero(std::vector<std::uint8_t>& b, std::size_t at, std::size_t n) {
  std::fill_n(b.begin() + static_cast<std::ptrdiff_t>(at), n, std::uint8_t{0});
}

}  // namespace

PacketLayout parse_layout(const RawPacket& packet) {
  PacketLayout out;
  const auto& b = packet.bytes;
  std::size_t l3 = 0;
  std::uint8_t version = 0;
  if (packet.link_type == LinkType::ethernet) {
    if (b.size() < kEthernetHeader) return out;
    std::uint16_t ethertype = be16(b, 12);
    l3 = kEthernetHeader;
    while ((ethertype == kEtherVlan || ethertype == kEtherQinQ) && b.size() >= l3 + 4) {
      ethertype = be16(b, l3 + 2);
      l3 += 4;
    }
    if (ethertype == kEtherIpv4) {
      version = 4;
    } else if (ethertype == kEtherIpv6) {
      version = 6;
    } else {
      return out;
    }
  } else {
    if (b.empty()) return out;
    version = b[0] >> 4;
  }
  if (version == 4) parse_ipv4(b, l3, out);
  if (version == 6) parse_ipv6(b, l3, out);
  return out;
}

Endpoint make_ipv4_endpoint(std::array<std::uint8_t, 4> ip, std::uint16_t port) {
  Endpoint e;
  e.ip[10] = 0xFF;
  e.ip[11] = 0xFF;
  std::copy(ip.begin(), ip.end(), e.ip.begin() + 12);
  e.port = port;
  return e;
}

std::string to_string(const Endpoint& e) {
  const bool v4 = std::all_of(e.ip.begin(), e.ip.begin() + 10, [](auto v) { return v == 0; }) && e.ip[10] == 0xFF &&
                  e.ip[11] == 0xFF;
  std::ostringstream os;
  if (v4) {
    os << int(e.ip[12]) << '.' << int(e.ip[13]) << '.' << int(e.ip[14]) << '.' << int(e.ip[15]) << ':' << e.port;
  } else {
    char buf[8];
    os << '[';
    for (int i = 0; i < 16; i += 2) {
      std::snprintf(buf, sizeof buf, "%x", (e.ip[i] << 8) | e.ip[i + 1]);
      os << (i ? ":" : "") << buf;
    }
    os << "]:" << e.port;
  }
  return os.str();
}

std::string to_string(const FlowKey& key) {
  return to_string(key.endpoint_lo) + " <-> " + to_string(key.endpoint_hi) + " proto " +
         std::to_string(key.protocol);
}

std::optional<FlowKey> flow_key_of(const RawPacket& packet) {
  const PacketLayout layout = parse_layout(packet);
  if (!layout.l3_offset) return std::nullopt;
  Endpoint src = endpoint_at(packet.bytes, layout, true);
  Endpoint dst = endpoint_at(packet.bytes, layout, false);
  if (dst < src) std::swap(src, dst);
  return FlowKey{src, dst, layout.protocol};
}

RawPacket anonymize(RawPacket packet) {
  auto& b = packet.bytes;
  if (packet.link_type == LinkType::ethernet && b.size() >= 12) zero(b, 0, 12);
  const PacketLayout layout = parse_layout(packet);
  if (layout.l3_offset) {
    const std::size_t l3 = *layout.l3_offset;
    if (layout.ip_version == 4) zero(b, l3 + 12, 8);
    if (layout.ip_version == 6) zero(b, l3 + 8, 32);
  }
  if (layout.l4_offset) zero(b, *layout.l4_offset, 4);
  return packet;
}

}  // namespace netconv::ingest
