#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "netconv/finetune/metrics.hpp"
#include "netconv/ingest/tokenize.hpp"
#include "netconv/model/checkpoint.hpp"
#include "netconv/model/netconv.hpp"

namespace netconv::finetune {

struct FinetuneConfig {
  std::size_t epochs = 10;
  double lr = 2e-5;
  std::size_t batch_size = 8;
  std::size_t num_classes = 0;  // 0: one more than the largest label
  std::optional<model::PoolMode> pool_mode;  // overrides the encoder's setting
  bool freeze_encoder = false;
  std::uint64_t seed = 0;
  double train_fraction = 0.64;
  double val_fraction = 0.16;
  double test_fraction = 0.20;

  void validate() const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

struct Split {
  std::vector<std::size_t> train, val, test;
};

// Per class: shuffle with the seed, then cut round(n * train) and
// round(n * val) records; the remainder is the test split.
Split stratified_split(std::span<const ingest::TokenSequence> records, const FinetuneConfig& cfg);

std::vector<ingest::TokenSequence> select(std::span<const ingest::TokenSequence> records,
                                          std::span<const std::size_t> indices);

struct EpochRecord {
  std::size_t epoch = 0;        // 0: before any update
  double train_loss = 0;        // mean over the epoch's batches
  double val_macro_f1 = 0;
};

struct FinetuneResult {
  model::ModelConfig config;
  model::ParameterStore<float> params;
  std::vector<EpochRecord> history;
  EvalReport val_report;
  EvalReport test_report;
  std::vector<std::string> warnings;
};

// Attaches a fresh head to the encoder in `pretrained` and trains on `train`;
// `val` is only evaluated, `test` only for the final report.
FinetuneResult finetune(const model::Checkpoint& pretrained, std::span<const ingest::TokenSequence> train,
                        std::span<const ingest::TokenSequence> val, std::span<const ingest::TokenSequence> test,
                        const FinetuneConfig& cfg);

// Stratified split of one labelled corpus, then the above.
FinetuneResult finetune(const model::Checkpoint& pretrained, std::span<const ingest::TokenSequence> records,
                        const FinetuneConfig& cfg);

std::vector<std::uint32_t> predict(const model::ParameterStore<float>& params, const model::ModelConfig& config,
                                   std::span<const ingest::TokenSequence> records, std::size_t batch_size = 64);

EvalReport evaluate(const model::ParameterStore<float>& params, const model::ModelConfig& config,
                    std::span<const ingest::TokenSequence> records);
EvalReport evaluate(const model::Checkpoint& checkpoint, std::span<const ingest::TokenSequence> records);

model::Checkpoint to_checkpoint(const FinetuneResult& result, const FinetuneConfig& cfg);

// X records per class, uniformly without replacement; classes with fewer
// records are taken whole and reported in `warnings`. Output keeps corpus order.
std::vector<ingest::TokenSequence> few_shot_subset(std::span<const ingest::TokenSequence> records,
                                                   std::size_t shots, std::uint64_t seed,
                                                   std::vector<std::string>* warnings = nullptr);

struct ScalabilityRow {
  std::size_t tokens_per_packet = 0;
  std::size_t bytes_per_packet = 0;
  double macro_f1 = 0;
  std::size_t param_count = 0;
};

inline const std::vector<std::size_t> kScalabilityLengths{64, 96, 128, 160, 192, 224, 256};

// One fine-tuning run per length from the same pre-trained encoder. Corpora
// for shorter layouts are cut from `records`, laid out at
// `source_tokens_per_packet` tokens per packet; the split is shared.
std::vector<ScalabilityRow> scalability_run(const model::Checkpoint& pretrained,
                                            std::span<const ingest::TokenSequence> records,
                                            std::size_t source_tokens_per_packet, const FinetuneConfig& cfg,
                                            std::span<const std::size_t> lengths = kScalabilityLengths);

std::string scalability_csv(std::span<const ScalabilityRow> rows);

}  // namespace netconv::finetune
