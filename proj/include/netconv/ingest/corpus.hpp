#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "netconv/ingest/tokenize.hpp"

namespace netconv::ingest {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCorpusVersion = 1;

// On-disk layout (all integers little-endian):
//   "NCV1" | version u32 | tokens_per_record u32 | label_present u8
//   then per record: label u32 (0xFFFFFFFF when absent) | tokens u32 x tokens_per_record
struct CorpusHeader {
  std::uint32_t version = kCorpusVersion;
  std::uint32_t tokens_per_record = 0;
  bool label_present = false;
};

// `tokens_per_record` is required only to describe an empty record set.
void write_corpus(const std::filesystem::path& path, std::span<const TokenSequence> records,
                  std::optional<std::uint32_t> tokens_per_record = std::nullopt);
std::vector<TokenSequence> read_corpus(const std::filesystem::path& path);
CorpusHeader read_corpus_header(const std::filesystem::path& path);

// Throws CorpusError("corpus is unlabeled") unless every record has a label.
void require_labeled(std::span<const TokenSequence> records);
std::uint32_t max_label(std::span<const TokenSequence> records);

}  // namespace netconv::ingest
