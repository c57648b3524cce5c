#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include "netconv/ingest/corpus.hpp"

namespace netconv::ingest {

namespace {

constexpr std::array<char, 4> kMagic{'N', 'C', 'V', '1'};
constexpr std::size_t kHeaderBytes = 13;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorpusError("cannot open corpus " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

CorpusHeader parse_header(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw CorpusError("not a corpus file (bad magic)");
  }
  CorpusHeader h;
  h.version = get_u32(bytes.data() + 4);
  if (h.version != kCorpusVersion) throw CorpusError("unsupported corpus version " + std::to_string(h.version));
  h.tokens_per_record = get_u32(bytes.data() + 8);
  h.label_present = bytes[12] != 0;
  return h;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, std::span<const TokenSequence> records,
                  std::optional<std::uint32_t> tokens_per_record) {
  const std::uint32_t width =
      tokens_per_record.value_or(records.empty() ? 0u : static_cast<std::uint32_t>(records.front().tokens.size()));
  const bool labeled = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.label.has_value(); });

  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, kCorpusVersion);
  put_u32(out, width);
  out.push_back(labeled ? 1 : 0);
  out.reserve(out.size() + records.size() * (4 + 4 * std::size_t{width}));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.tokens.size() != width) {
      throw CorpusError("record " + std::to_string(i) + " has " + std::to_string(r.tokens.size()) +
                        " tokens, expected " + std::to_string(width));
    }
    if (r.label && *r.label == kNoLabel) throw CorpusError("label value collides with the absent-label sentinel");
    put_u32(out, r.label.value_or(kNoLabel));
    for (const std::uint32_t t : r.tokens) {
      if (t >= kMaskId) throw CorpusError("record " + std::to_string(i) + " holds a MASK or out-of-vocabulary id");
      put_u32(out, t);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CorpusError("cannot write corpus " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw CorpusError("write failed for " + path.string());
}

CorpusHeader read_corpus_header(const std::filesystem::path& path) { return parse_header(slurp(path)); }

std::vector<TokenSequence> read_corpus(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const CorpusHeader h = parse_header(bytes);
  const std::size_t record_bytes = 4 + 4 * std::size_t{h.tokens_per_record};
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (payload % record_bytes != 0) throw CorpusError("corpus payload is not a whole number of records");
  std::vector<TokenSequence> records(payload / record_bytes);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (auto& r : records) {
    const std::uint32_t label = get_u32(p);
    if (label != kNoLabel) r.label = label;
    p += 4;
    r.tokens.resize(h.tokens_per_record);
    for (auto& t : r.tokens) {
      t = get_u32(p);
      p += 4;
      if (t >= kMaskId) throw CorpusError("corpus holds a MASK or out-of-vocabulary id");
    }
  }
  return records;
}

void require_labeled(std::span<const TokenSequence> records) {
  if (records.empty() || std::none_of(records.begin(), records.end(), [](const auto& r) { return r.label; })) {
    throw CorpusError("corpus is unlabeled");
  }
  if (!std::all_of(records.begin(), records.end(), [](const auto& r) { return r.label.has_value(); })) {
    throw CorpusError("corpus has unlabeled records");
  }
}

std::uint32_t max_label(std::span<const TokenSequence> records) {
  std::uint32_t m = 0;
  for (const auto& r : records) m = std::max(m, r.label.value_or(0));
  return m;
}

}  // namespace netconv::ingest
