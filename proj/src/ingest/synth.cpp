#include <stdexcept>

#include "netconv/common/random.hpp"
#include "netconv/ingest/synth.hpp"

namespace netconv::ingest {

namespace {

void validate(const SynthSpec& spec) {
  if (spec.classes.size() < 2) throw std::invalid_argument("synthetic spec needs at least 2 classes");
  if (spec.min_packets < 1 || spec.min_packets > spec.packets_per_flow) {
    throw std::invalid_argument("synthetic spec: min_packets must be in [1, packets_per_flow]");
  }
  auto check = [&](const FieldTemplate& f) {
    if (f.offset + f.tokens.size() > spec.tokens_per_record()) {
      throw std::invalid_argument("synthetic field exceeds record length");
    }
    for (const auto t : f.tokens) {
      if (t >= kPadId) throw std::invalid_argument("synthetic field token must be a byte pair");
    }
    for (const auto& v : f.variants) {
      if (v.size() != f.tokens.size()) throw std::invalid_argument("synthetic field variants differ in length");
      for (const auto t : v) {
        if (t >= kPadId) throw std::invalid_argument("synthetic field token must be a byte pair");
      }
    }
  };
  for (const auto& f : spec.shared_fields) check(f);
  for (const auto& c : spec.classes)
    for (const auto& f : c.fields) check(f);
}

}  // namespace

SynthSpec protocol_like_spec(const ProtocolSpecOptions& o) {
  SynthSpec spec;
  spec.packets_per_flow = o.packets_per_flow;
  spec.tokens_per_packet = o.tokens_per_packet;
  spec.min_packets = o.min_packets;
  spec.per_class = o.per_class;

  Rng rng = make_rng(o.template_seed);
  std::uniform_int_distribution<std::uint32_t> word(0, 0xFFFF);
  for (std::size_t p = 0; p < o.packets_per_flow; ++p) {
    const std::size_t base = p * o.tokens_per_packet;
    spec.shared_fields.push_back({base + 0, {0x4500}, {}});  // IPv4 version/IHL/TOS
    if (o.tokens_per_packet > 4) spec.shared_fields.push_back({base + 4, {0x4006}, {}});  // TTL/protocol
  }
  if (o.field_variants == 0) throw std::invalid_argument("field_variants must be positive");
  spec.classes.resize(o.num_classes);
  for (auto& cls : spec.classes) {
    for (const auto& [offset, length] : o.class_slots) {
      std::vector<std::vector<std::uint32_t>> pool(o.field_variants, std::vector<std::uint32_t>(length));
      for (auto& v : pool)
        for (auto& t : v) t = word(rng);
      for (std::size_t p = 0; p < o.packets_per_flow; ++p) {
        if (offset + length > o.tokens_per_packet) continue;
        FieldTemplate f{p * o.tokens_per_packet + offset, pool.front(), {}};
        if (pool.size() > 1) f.variants = pool;
        cls.fields.push_back(std::move(f));
      }
    }
  }
  return spec;
}

std::vector<TokenSequence> synthesize_corpus(const SynthSpec& spec, std::uint64_t seed) {
  validate(spec);
  const std::size_t n = spec.tokens_per_record();
  std::vector<TokenSequence> out;
  out.reserve(spec.per_class * spec.classes.size());
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::uint32_t c = 0; c < spec.classes.size(); ++c) {
      Rng rng = make_rng(seed, {c, i});
      std::uniform_int_distribution<std::uint32_t> noise(0, 0xFFFF);
      std::uniform_int_distribution<std::size_t> packets(spec.min_packets, spec.packets_per_flow);
      const std::size_t present = packets(rng) * spec.tokens_per_packet;
      TokenSequence r;
      r.label = c;
      r.tokens.assign(n, kPadId);
      for (std::size_t t = 0; t < present; ++t) r.tokens[t] = noise(rng);
      auto stamp = [&](const FieldTemplate& f) {
        const auto* tokens = &f.tokens;
        if (!f.variants.empty()) {
          tokens = &f.variants[std::uniform_int_distribution<std::size_t>(0, f.variants.size() - 1)(rng)];
        }
        for (std::size_t j = 0; j < tokens->size(); ++j) {
          if (f.offset + j < present) r.tokens[f.offset + j] = (*tokens)[j];
        }
      };
      for (const auto& f : spec.shared_fields) stamp(f);
      for (const auto& f : spec.classes[c].fields) stamp(f);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<std::uint8_t> template_positions(const SynthSpec& spec, std::uint32_t label) {
  std::vector<std::uint8_t> fixed(spec.tokens_per_record(), 0);
  auto mark = [&](const FieldTemplate& f) {
    for (std::size_t j = 0; j < f.tokens.size(); ++j) fixed[f.offset + j] = 1;
  };
  for (const auto& f : spec.shared_fields) mark(f);
  for (const auto& f : spec.classes.at(label).fields) mark(f);
  return fixed;
}

}  // namespace netconv::ingest
