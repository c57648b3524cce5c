#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace netconv::ingest {

enum class LinkType : std::uint8_t { ethernet, raw_ip };

struct RawPacket {
  std::int64_t timestamp_us = 0;
  LinkType link_type = LinkType::ethernet;
  std::vector<std::uint8_t> bytes;

  bool operator==(const RawPacket&) const = default;
};

class CaptureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CaptureContents {
  std::vector<RawPacket> packets;
  std::size_t truncated_records = 0;
};

// Reads classic pcap (micro- and nanosecond, either byte order) and simple
// pcapng (section header, interface description, enhanced and simple packet
// blocks). A truncated final record is skipped and counted.
CaptureContents parse_capture(const std::filesystem::path& path);
CaptureContents parse_capture(std::span<const std::uint8_t> file_bytes);

// Writes a little-endian microsecond pcap. All packets must share one link type.
void write_pcap(const std::filesystem::path& path, std::span<const RawPacket> packets);
std::vector<std::uint8_t> encode_pcap(std::span<const RawPacket> packets);

// Offsets of the headers a packet carries; absent layers are nullopt.
struct PacketLayout {
  std::optional<std::size_t> l3_offset;
  std::uint8_t ip_version = 0;
  std::uint8_t protocol = 0;
  std::optional<std::size_t> l4_offset;  // set only when ports are readable
};

PacketLayout parse_layout(const RawPacket& packet);

namespace ip_protocol {
inline constexpr std::uint8_t tcp = 6;
inline constexpr std::uint8_t udp = 17;
}  // namespace ip_protocol

// IPv4 addresses are stored IPv4-mapped (::ffff:a.b.c.d) so v4 and v6 share
// one ordering.
struct Endpoint {
  std::array<std::uint8_t, 16> ip{};
  std::uint16_t port = 0;

  auto operator<=>(const Endpoint&) const = default;
};

Endpoint make_ipv4_endpoint(std::array<std::uint8_t, 4> ip, std::uint16_t port);
std::string to_string(const Endpoint& e);

// Direction-canonical five-tuple: endpoint_lo <= endpoint_hi.
struct FlowKey {
  Endpoint endpoint_lo;
  Endpoint endpoint_hi;
  std::uint8_t protocol = 0;

  auto operator<=>(const FlowKey&) const = default;
};

std::string to_string(const FlowKey& key);

std::optional<FlowKey> flow_key_of(const RawPacket& packet);

// Zeroes MAC, IP and L4 port fields in place; layers that are absent are left
// alone. Length and all other bytes are unchanged.
RawPacket anonymize(RawPacket packet);

}  // namespace netconv::ingest
