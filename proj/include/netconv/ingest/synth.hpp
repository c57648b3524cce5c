#pragma once

#include <cstdint>
#include <vector>

#include "netconv/ingest/tokenize.hpp"

namespace netconv::ingest {

// Tokens written at a record-level token offset. With variants, every record
// draws one of them uniformly instead of `tokens` (all must be equally long).
struct FieldTemplate {
  std::size_t offset = 0;
  std::vector<std::uint32_t> tokens;
  std::vector<std::vector<std::uint32_t>> variants;
};

struct ClassTemplate {
  std::vector<FieldTemplate> fields;
};

// Declarative description of a synthetic labelled corpus. Every record of
// class c carries shared_fields and classes[c].fields; all other positions of
// present packets hold uniform noise tokens. Each record keeps a uniformly
// drawn number of packets in [min_packets, packets_per_flow]; missing packet
// slots are PAD and any field that falls inside them is dropped.
struct SynthSpec {
  std::size_t packets_per_flow = 5;
  std::size_t tokens_per_packet = 64;
  std::size_t min_packets = 5;
  std::size_t per_class = 100;
  std::vector<FieldTemplate> shared_fields;
  std::vector<ClassTemplate> classes;

  std::size_t tokens_per_record() const { return packets_per_flow * tokens_per_packet; }
};

struct ProtocolSpecOptions {
  std::size_t num_classes = 4;
  std::size_t per_class = 100;
  std::size_t packets_per_flow = 5;
  std::size_t tokens_per_packet = 64;
  std::size_t min_packets = 3;
  // Per-packet (offset, length) slots holding class-specific tokens.
  std::vector<std::pair<std::size_t, std::size_t>> class_slots{{6, 4}, {14, 3}};
  // Values per class slot; each packet draws its own. 1 repeats one value.
  std::size_t field_variants = 1;
  std::uint64_t template_seed = 0x5EED;
};

// Header-like layout: a few shared fixed fields per packet (version/protocol
// words) plus class-specific contiguous fields in every packet, each drawn
// from a per-class pool of field_variants values.
SynthSpec protocol_like_spec(const ProtocolSpecOptions& options);

// Records are interleaved by class (c0, c1, ..., c0, c1, ...). Deterministic
// for a fixed seed.
std::vector<TokenSequence> synthesize_corpus(const SynthSpec& spec, std::uint64_t seed);

// Positions that a spec fixes for a given class (shared plus class fields),
// as a per-position flag over one record.
std::vector<std::uint8_t> template_positions(const SynthSpec& spec, std::uint32_t label);

}  // namespace netconv::ingest
