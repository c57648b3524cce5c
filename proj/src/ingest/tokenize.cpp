#include <stdexcept>

#include "netconv/ingest/tokenize.hpp"

namespace netconv::ingest {

std::vector<std::uint32_t> packet_to_tokens(const RawPacket& packet, std::size_t bytes_per_packet) {
  if (bytes_per_packet % 2 != 0) throw std::invalid_argument("bytes_per_packet must be even");
  std::vector<std::uint32_t> tokens(bytes_per_packet / 2, 0);
  const auto& b = packet.bytes;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t at = 2 * t;
    const std::uint32_t hi = at < b.size() ? b[at] : 0;
    const std::uint32_t lo = at + 1 < b.size() ? b[at + 1] : 0;
    tokens[t] = (hi << 8) | lo;
  }
  return tokens;
}

TokenSequence flow_to_record(const Flow& flow, const RecordLayout& layout) {
  if (flow.packets.empty()) throw std::invalid_argument("flow_to_record: empty flow");
  TokenSequence out;
  out.label = flow.label;
  out.tokens.reserve(layout.tokens_per_record());
  for (std::size_t p = 0; p < layout.packets_per_flow; ++p) {
    if (p < flow.packets.size()) {
      const auto tokens = packet_to_tokens(flow.packets[p], layout.bytes_per_packet);
      out.tokens.insert(out.tokens.end(), tokens.begin(), tokens.end());
    } else {
      out.tokens.insert(out.tokens.end(), layout.tokens_per_packet(), kPadId);
    }
  }
  return out;
}

TokenSequence truncate_packets(const TokenSequence& record, std::size_t from_tokens_per_packet,
                               std::size_t tokens_per_packet) {
  if (tokens_per_packet > from_tokens_per_packet || from_tokens_per_packet == 0 ||
      record.tokens.size() % from_tokens_per_packet != 0) {
    throw std::invalid_argument("truncate_packets: incompatible layouts");
  }
  TokenSequence out;
  out.label = record.label;
  const std::size_t packets = record.tokens.size() / from_tokens_per_packet;
  for (std::size_t p = 0; p < packets; ++p) {
    const auto first = record.tokens.begin() + static_cast<std::ptrdiff_t>(p * from_tokens_per_packet);
    out.tokens.insert(out.tokens.end(), first, first + static_cast<std::ptrdiff_t>(tokens_per_packet));
  }
  return out;
}

}  // namespace netconv::ingest
