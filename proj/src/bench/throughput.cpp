#include "netconv/bench/throughput.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>
#include <fmt/format.h>

#include "netconv/common/logging.hpp"

namespace netconv::bench {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Live activations per record of a non-recording forward pass: a few
// (seq_len x d) buffers per layer step, with headroom.
std::size_t bytes_per_record(const model::ModelConfig& config, std::size_t seq_len) {
  return seq_len * config.d_model * sizeof(float) * 8;
}

void fill_batch(std::vector<std::uint32_t>& tokens, std::span<const ingest::TokenSequence> records,
                std::size_t first, std::size_t count) {
  const std::size_t len = records.front().tokens.size();
  tokens.resize(count * len);
  for (std::size_t j = 0; j < count; ++j) {
    const auto& src = records[(first + j) % records.size()].tokens;
    std::copy(src.begin(), src.end(), tokens.begin() + static_cast<std::ptrdiff_t>(j * len));
  }
}

}  // namespace

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double rank = std::ceil(std::clamp(q, 0.0, 1.0) * static_cast<double>(samples.size()));
  const std::size_t idx = rank < 1 ? 0 : static_cast<std::size_t>(rank) - 1;
  return samples[std::min(idx, samples.size() - 1)];
}

ThroughputReport measure_throughput(const model::ParameterStore<float>& params, const model::ModelConfig& config,
                                    std::span<const ingest::TokenSequence> records, const ThroughputConfig& cfg) {
  if (records.empty()) throw std::invalid_argument("throughput: no records");
  if (cfg.iters == 0) throw std::invalid_argument("throughput: iters must be positive");
  const std::size_t seq_len = records.front().tokens.size();
  for (const auto& r : records) {
    if (r.tokens.size() != seq_len) throw std::invalid_argument("throughput: records differ in length");
  }
  Eigen::setNbThreads(static_cast<int>(std::max<std::size_t>(cfg.threads, 1)));
  const bool has_head = model::classifier_classes(params) > 0;
  const std::size_t max_chunk = std::max<std::size_t>(1, cfg.memory_budget_bytes / bytes_per_record(config, seq_len));

  ThroughputReport report;
  report.threads = std::max<std::size_t>(cfg.threads, 1);
  std::vector<std::uint32_t> tokens;
  float sink = 0;

  for (const std::size_t b : cfg.batch_sizes) {
    if (b == 0) throw std::invalid_argument("throughput: batch size must be positive");
    const std::size_t chunk = std::min(b, max_chunk);
    ThroughputRow row;
    row.batch_size = b;
    row.chunks = (b + chunk - 1) / chunk;

    auto run_batch = [&](std::size_t iter, bool empty_model) {
      for (std::size_t c = 0; c < row.chunks; ++c) {
        const std::size_t first = iter * b + c * chunk;
        const std::size_t count = std::min(chunk, b - c * chunk);
        fill_batch(tokens, records, first, count);
        if (empty_model) {
          sink += static_cast<float>(tokens.back());
          continue;
        }
        model::Tape<float> tape(false);
        const auto enc = model::encode(tape, config, params, {tokens, seq_len});
        const auto& out = has_head ? model::classify(tape, config, params, enc).value() : enc.hidden.value();
        sink += out[0];
      }
    };

    auto time_loop = [&](bool empty_model) {
      for (std::size_t i = 0; i < cfg.warmup; ++i) run_batch(i, empty_model);
      std::vector<double> ms;
      for (std::size_t i = 0; i < cfg.iters; ++i) {
        const auto start = Clock::now();
        run_batch(cfg.warmup + i, empty_model);
        ms.push_back(elapsed_ms(start));
      }
      return ms;
    };

    const auto ms = time_loop(false);
    const auto base = time_loop(true);
    row.p50_ms = percentile(ms, 0.5);
    row.p95_ms = percentile(ms, 0.95);
    row.baseline_ms = percentile(base, 0.5);
    row.samples_per_s = row.p50_ms > 0 ? static_cast<double>(b) / (row.p50_ms / 1000.0) : 0.0;
    report.rows.push_back(row);
  }

  double fastest = report.rows.empty() ? 0.0 : report.rows.front().p50_ms;
  for (const auto& r : report.rows) fastest = std::min(fastest, r.p50_ms);
  for (auto& r : report.rows) r.unreliable = r.baseline_ms >= 0.05 * fastest;
  if (sink == 12345.678f) log().debug("throughput sink {}", sink);
  return report;
}

void to_json(nlohmann::json& j, const ThroughputReport& r) {
  j = {{"threads", r.threads}, {"precision", r.precision}, {"rows", nlohmann::json::array()}};
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"batch_size", row.batch_size},
                         {"samples_per_s", row.samples_per_s},
                         {"p50_ms", row.p50_ms},
                         {"p95_ms", row.p95_ms},
                         {"chunks", row.chunks},
                         {"baseline_ms", row.baseline_ms},
                         {"unreliable", row.unreliable}});
  }
}

std::string throughput_csv(const ThroughputReport& r) {
  std::string out = "batch_size,samples_per_s,p50_ms,p95_ms,chunks,baseline_ms,unreliable,threads,precision\n";
  for (const auto& row : r.rows) {
    out += fmt::format("{},{:.3f},{:.4f},{:.4f},{},{:.4f},{},{},{}\n", row.batch_size, row.samples_per_s, row.p50_ms,
                       row.p95_ms, row.chunks, row.baseline_ms, row.unreliable ? 1 : 0, r.threads, r.precision);
  }
  return out;
}

}  // namespace netconv::bench
