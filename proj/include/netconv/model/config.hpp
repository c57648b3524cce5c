#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace netconv::model {

enum class GateMode { sbg, relu, gelu, none };
enum class PoolMode { max, mean };

std::string to_string(GateMode m);
std::string to_string(PoolMode m);
GateMode parse_gate_mode(const std::string& s);
PoolMode parse_pool_mode(const std::string& s);

struct ModelConfig {
  std::uint32_t vocab_size = 65538;  // 65,536 byte pairs + PAD + MASK
  std::size_t d_model = 256;
  std::size_t num_layers = 5;
  std::size_t kernel_size = 4;
  bool use_wbs = true;
  GateMode gate_mode = GateMode::sbg;
  bool use_residual = true;
  bool use_layer_norm = true;
  bool use_pointwise = true;
  bool final_norm = true;  // parameter-free LayerNorm on the encoder output
  PoolMode pool_mode = PoolMode::max;
  std::size_t head_hidden = 0;  // 0 means d_model
  bool tie_output_embedding = true;

  // The two specials occupy the top of the vocabulary.
  std::uint32_t pad_id() const { return vocab_size - 2; }
  std::uint32_t mask_id() const { return vocab_size - 1; }
  std::size_t classifier_hidden() const { return head_hidden ? head_hidden : d_model; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Closed-form element count of the encoder plus masked-prediction head.
std::size_t param_count(const ModelConfig& c);

}  // namespace netconv::model
