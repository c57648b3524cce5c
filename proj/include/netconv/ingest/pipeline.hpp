#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netconv/ingest/corpus.hpp"

namespace netconv::ingest {

struct CaptureInput {
  std::filesystem::path path;
  std::optional<std::uint32_t> label;
};

struct IngestOptions {
  RecordLayout layout;
  double idle_timeout_s = kDefaultIdleTimeoutSeconds;
  std::size_t threads = 1;
};

struct IngestSummary {
  std::vector<TokenSequence> records;
  std::size_t files = 0;
  std::size_t packets = 0;
  std::size_t flows = 0;
  std::size_t truncated_records = 0;
};

// Parse -> assemble -> anonymize -> tokenize for every capture. Files are
// processed in parallel; records come back ordered by (path, first packet
// timestamp, flow key) regardless of the thread count.
IngestSummary ingest_captures(std::vector<CaptureInput> inputs, const IngestOptions& options);

// Expands files and directories into capture inputs. With labels_from_dirs,
// each capture is labelled by its parent directory; class ids follow the
// sorted directory names, which are returned through class_names.
std::vector<CaptureInput> discover_captures(std::span<const std::filesystem::path> roots, bool labels_from_dirs,
                                            std::vector<std::string>* class_names = nullptr);

}  // namespace netconv::ingest
