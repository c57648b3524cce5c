#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <set>
#include <thread>

#include "netconv/common/logging.hpp"
#include "netconv/ingest/pipeline.hpp"

namespace netconv::ingest {

namespace {

struct FileResult {
  std::vector<TokenSequence> records;
  std::size_t packets = 0;
  std::size_t truncated = 0;
};

FileResult ingest_one(const CaptureInput& input, const IngestOptions& options) {
  const CaptureContents contents = parse_capture(input.path);
  FileResult out;
  out.packets = contents.packets.size();
  out.truncated = contents.truncated_records;
  for (Flow& flow : assemble_flows(contents.packets, options.idle_timeout_s)) {
    flow.label = input.label;
    const std::size_t keep = std::min(flow.packets.size(), options.layout.packets_per_flow);
    flow.packets.resize(keep);
    for (auto& p : flow.packets) p = anonymize(std::move(p));
    out.records.push_back(flow_to_record(flow, options.layout));
  }
  return out;
}

bool is_capture_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pcap" || ext == ".pcapng" || ext == ".cap";
}

}  // namespace

IngestSummary ingest_captures(std::vector<CaptureInput> inputs, const IngestOptions& options) {
  std::stable_sort(inputs.begin(), inputs.end(),
                   [](const CaptureInput& a, const CaptureInput& b) { return a.path.string() < b.path.string(); });
  std::vector<FileResult> results(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      try {
        results[i] = ingest_one(inputs[i], options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, inputs.size()));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  IngestSummary summary;
  summary.files = inputs.size();
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto& r = results[i];
    summary.packets += r.packets;
    summary.flows += r.records.size();
    summary.truncated_records += r.truncated;
    log().debug("{}: {} packets, {} flows", inputs[i].path.string(), r.packets, r.records.size());
    std::move(r.records.begin(), r.records.end(), std::back_inserter(summary.records));
  }
  return summary;
}

std::vector<CaptureInput> discover_captures(std::span<const std::filesystem::path> roots, bool labels_from_dirs,
                                            std::vector<std::string>* class_names) {
  std::vector<std::filesystem::path> files;
  for (const auto& root : roots) {
    if (std::filesystem::is_directory(root)) {
      for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && is_capture_file(entry.path())) files.push_back(entry.path());
      }
    } else if (std::filesystem::exists(root)) {
      files.push_back(root);
    } else {
      throw CaptureError("missing input " + root.string());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<CaptureInput> out;
  std::map<std::string, std::uint32_t> ids;
  if (labels_from_dirs) {
    std::set<std::string> names;
    for (const auto& f : files) names.insert(f.parent_path().filename().string());
    for (const auto& n : names) ids.emplace(n, static_cast<std::uint32_t>(ids.size()));
    if (class_names) class_names->assign(names.begin(), names.end());
  }
  for (const auto& f : files) {
    CaptureInput in{f, std::nullopt};
    if (labels_from_dirs) in.label = ids.at(f.parent_path().filename().string());
    out.push_back(in);
  }
  return out;
}

}  // namespace netconv::ingest
