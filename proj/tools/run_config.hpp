#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "netconv/bench/scaling.hpp"
#include "netconv/bench/throughput.hpp"
#include "netconv/finetune/finetune.hpp"
#include "netconv/ingest/pipeline.hpp"
#include "netconv/ingest/synth.hpp"
#include "netconv/model/config.hpp"
#include "netconv/pretrain/trainer.hpp"

namespace netconv::cli {

struct IngestSection {
  std::size_t packets_per_flow = 5;
  std::size_t bytes_per_packet = 128;
  double idle_timeout_s = ingest::kDefaultIdleTimeoutSeconds;
  bool labels_from_dirs = false;
};

struct SynthSection {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  std::size_t packets_per_flow = 5;
  std::size_t tokens_per_packet = 64;
  std::size_t min_packets = 3;
  std::size_t field_variants = 1;
  std::uint64_t template_seed = 0x5EED;

  ingest::ProtocolSpecOptions options() const;
};

struct BenchSection {
  std::vector<std::size_t> batch_sizes{1, 32, 1024};
  std::size_t warmup = 2;
  std::size_t iters = 5;
  std::vector<std::size_t> lengths{256, 512, 1024, 2048, 4096};
  std::size_t scaling_d_model = 64;
  std::size_t repeats = 3;
};

// Everything a run depends on besides its input files. The single seed feeds
// every module's seed field when the run resolves.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: subcommand default
  model::ModelConfig model;
  pretrain::PretrainConfig pretrain;
  finetune::FinetuneConfig finetune;
  IngestSection ingest;
  SynthSection synth;
  BenchSection bench;

  void apply_seed();
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Missing keys keep their defaults; unknown top-level sections are an error.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
// Writes the resolved config as "<output>.config.json".
void write_resolved_config(const RunConfig& c, const std::filesystem::path& output);

}  // namespace netconv::cli
