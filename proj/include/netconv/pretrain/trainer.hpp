#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "netconv/ingest/tokenize.hpp"
#include "netconv/model/checkpoint.hpp"
#include "netconv/model/netconv.hpp"
#include "netconv/pretrain/adam.hpp"
#include "netconv/pretrain/masking.hpp"

namespace netconv::pretrain {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PretrainConfig {
  MaskConfig mask;
  std::uint64_t steps = 100000;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  double warmup_fraction = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::uint64_t log_interval = 100;
  std::uint64_t checkpoint_interval = 0;  // 0: final checkpoint only

  AdamConfig adam() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

// A flattened batch of masked records ready for the encoder.
struct MlmBatch {
  std::vector<std::uint32_t> tokens;
  std::size_t seq_len = 0;
  std::vector<std::size_t> positions;  // row indices into the flattened batch
  std::vector<std::uint32_t> targets;
};

// Masks every record with its own stream derived from (seed, record, epoch).
MlmBatch make_mlm_batch(std::span<const ingest::TokenSequence> records, std::span<const std::size_t> indices,
                        const model::ModelConfig& model_cfg, const MaskConfig& mask, std::uint64_t seed,
                        std::uint64_t epoch);

// Which records form batch `step`: consecutive slices of a fresh permutation
// per epoch, so the schedule depends only on (seed, step).
class BatchSchedule {
 public:
  BatchSchedule(std::size_t num_records, std::size_t batch_size, std::uint64_t seed);
  struct Slot {
    std::size_t record;
    std::uint64_t epoch;
  };
  std::vector<Slot> batch(std::uint64_t step);

 private:
  const std::vector<std::size_t>& permutation(std::uint64_t epoch);
  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::uint64_t cached_epoch_ = ~0ull;
  std::vector<std::size_t> perm_;
};

struct StepStats {
  double loss_mean = 0;  // mean cross-entropy over masked positions
  double loss_sum = 0;   // the same, summed
  std::size_t masked = 0;
  std::size_t correct = 0;  // top-1 hits at masked positions
  std::size_t tokens = 0;
};

// One optimisation step on the masked positions of `batch`.
StepStats pretrain_step(model::ParameterStore<float>& params, const model::ModelConfig& model_cfg,
                        const MlmBatch& batch, Adam& opt);

// Masked-token loss and top-1 accuracy without updating anything.
StepStats evaluate_mlm(const model::ParameterStore<float>& params, const model::ModelConfig& model_cfg,
                       std::span<const ingest::TokenSequence> records, const MaskConfig& mask, std::uint64_t seed,
                       std::size_t batch_size = 32);

struct LogRow {
  std::uint64_t step = 0;
  double loss_mean = 0;
  double loss_sum = 0;
  double masked_acc = 0;
  double tokens_per_s = 0;
};

struct PretrainPaths {
  std::filesystem::path checkpoint;  // final; periodic ones get a -step<N> suffix
  std::filesystem::path log;         // CSV
};

struct PretrainResult {
  std::vector<LogRow> rows;
  StepStats last;
  std::uint64_t final_step = 0;
};

std::filesystem::path periodic_checkpoint_path(const std::filesystem::path& final_path, std::uint64_t step);

// Trains from a fresh init, or continues `resume` (a checkpoint written by this
// function) up to cfg.steps. Rows logged after a resume are appended to the log.
PretrainResult run_pretraining(const PretrainConfig& cfg, const model::ModelConfig& model_cfg,
                               std::span<const ingest::TokenSequence> records, const PretrainPaths& paths,
                               const std::optional<std::filesystem::path>& resume = std::nullopt);

PretrainResult run_pretraining(const PretrainConfig& cfg, const model::ModelConfig& model_cfg,
                               const std::filesystem::path& corpus, const PretrainPaths& paths,
                               const std::optional<std::filesystem::path>& resume = std::nullopt);

}  // namespace netconv::pretrain
