#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "netconv/model/config.hpp"
#include "netconv/model/params.hpp"

namespace netconv::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything persisted in one file. `meta` carries run state that is not part
// of the architecture (training step, class names, ...). `extra` tensors are
// stored after the parameters and are not trainable (optimizer moments).
struct Checkpoint {
  ModelConfig config;
  nlohmann::json meta = nlohmann::json::object();
  ParameterStore<float> params;
  std::vector<std::pair<std::string, Tensor<float>>> extra;

  const Tensor<float>* find_extra(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// Written to a temporary sibling and renamed, so readers never see a torn file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace netconv::model
