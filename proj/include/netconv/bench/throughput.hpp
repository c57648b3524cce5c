#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "netconv/ingest/tokenize.hpp"
#include "netconv/model/netconv.hpp"

namespace netconv::bench {

struct ThroughputConfig {
  std::vector<std::size_t> batch_sizes{1, 32, 1024};
  std::size_t warmup = 2;
  std::size_t iters = 5;
  std::size_t threads = 1;
  // Upper bound on live activation memory; larger batches run in chunks.
  std::size_t memory_budget_bytes = std::size_t{5} << 30;
};

struct ThroughputRow {
  std::size_t batch_size = 0;
  double samples_per_s = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  std::size_t chunks = 1;
  double baseline_ms = 0;  // same loop with an empty model
  bool unreliable = false;  // baseline >= 5% of the fastest measured time
};

struct ThroughputReport {
  std::vector<ThroughputRow> rows;
  std::size_t threads = 1;
  std::string precision = "fp32";
};

// Inference only (non-recording tape, classifier head if present). Batch i
// takes records i*b, i*b+1, ... modulo the corpus size.
ThroughputReport measure_throughput(const model::ParameterStore<float>& params, const model::ModelConfig& config,
                                    std::span<const ingest::TokenSequence> records, const ThroughputConfig& cfg);

void to_json(nlohmann::json& j, const ThroughputReport& r);
std::string throughput_csv(const ThroughputReport& r);

// Nearest-rank percentile of unsorted samples, q in [0, 1].
double percentile(std::vector<double> samples, double q);

}  // namespace netconv::bench
