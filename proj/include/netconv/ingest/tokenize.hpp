#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "netconv/ingest/flow.hpp"

namespace netconv::ingest {

// Ids 0..65535 are byte pairs; two specials follow.
inline constexpr std::uint32_t kPadId = 65536;
inline constexpr std::uint32_t kMaskId = 65537;
inline constexpr std::uint32_t kVocabSize = 65538;
inline constexpr std::uint32_t kNoLabel = 0xFFFFFFFFu;

struct TokenSequence {
  std::vector<std::uint32_t> tokens;
  std::optional<std::uint32_t> label;

  bool operator==(const TokenSequence&) const = default;
};

struct RecordLayout {
  std::size_t packets_per_flow = 5;
  std::size_t bytes_per_packet = 128;

  std::size_t tokens_per_packet() const { return bytes_per_packet / 2; }
  std::size_t tokens_per_record() const { return packets_per_flow * tokens_per_packet(); }
};

// First `bytes_per_packet` bytes of the frame, zero-padded, paired big-endian.
std::vector<std::uint32_t> packet_to_tokens(const RawPacket& packet, std::size_t bytes_per_packet = 128);

// Concatenates the tokens of the first packets_per_flow packets; missing
// packets become PAD runs. The flow's packets are expected to be anonymized.
TokenSequence flow_to_record(const Flow& flow, const RecordLayout& layout = {});

// Keeps the first `tokens_per_packet` tokens of every packet slot of a record
// laid out with `from_tokens_per_packet`.
TokenSequence truncate_packets(const TokenSequence& record, std::size_t from_tokens_per_packet,
                               std::size_t tokens_per_packet);

}  // namespace netconv::ingest
