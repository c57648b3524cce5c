#include <stdexcept>

#include "netconv/model/config.hpp"

namespace netconv::model {

std::string to_string(GateMode m) {
  switch (m) {
    case GateMode::sbg:
      return "sbg";
    case GateMode::relu:
      return "relu";
    case GateMode::gelu:
      return "gelu";
    case GateMode::none:
      return "none";
  }
  return "sbg";
}

std::string to_string(PoolMode m) { return m == PoolMode::max ? "max" : "mean"; }

GateMode parse_gate_mode(const std::string& s) {
  if (s == "sbg") return GateMode::sbg;
  if (s == "relu") return GateMode::relu;
  if (s == "gelu") return GateMode::gelu;
  if (s == "none") return GateMode::none;
  throw std::invalid_argument("unknown gate mode '" + s + "' (expected sbg, relu, gelu or none)");
}

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "max") return PoolMode::max;
  if (s == "mean") return PoolMode::mean;
  throw std::invalid_argument("unknown pool mode '" + s + "' (expected max or mean)");
}

void ModelConfig::validate() const {
  if (vocab_size < 3) throw std::invalid_argument("vocab_size must leave room for PAD and MASK");
  if (d_model < 1) throw std::invalid_argument("d_model must be >= 1");
  if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
  if (kernel_size < 1) throw std::invalid_argument("kernel_size must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"d_model", c.d_model},
                     {"num_layers", c.num_layers},
                     {"kernel_size", c.kernel_size},
                     {"use_wbs", c.use_wbs},
                     {"gate_mode", to_string(c.gate_mode)},
                     {"use_residual", c.use_residual},
                     {"use_layer_norm", c.use_layer_norm},
                     {"use_pointwise", c.use_pointwise},
                     {"final_norm", c.final_norm},
                     {"pool_mode", to_string(c.pool_mode)},
                     {"head_hidden", c.head_hidden},
                     {"tie_output_embedding", c.tie_output_embedding}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.d_model = j.value("d_model", d.d_model);
  c.num_layers = j.value("num_layers", d.num_layers);
  c.kernel_size = j.value("kernel_size", d.kernel_size);
  c.use_wbs = j.value("use_wbs", d.use_wbs);
  c.gate_mode = parse_gate_mode(j.value("gate_mode", to_string(d.gate_mode)));
  c.use_residual = j.value("use_residual", d.use_residual);
  c.use_layer_norm = j.value("use_layer_norm", d.use_layer_norm);
  c.use_pointwise = j.value("use_pointwise", d.use_pointwise);
  c.final_norm = j.value("final_norm", d.final_norm);
  c.pool_mode = parse_pool_mode(j.value("pool_mode", to_string(d.pool_mode)));
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.tie_output_embedding = j.value("tie_output_embedding", d.tie_output_embedding);
  c.validate();
}

std::size_t param_count(const ModelConfig& c) {
  const std::size_t v = c.vocab_size, d = c.d_model, k = c.kernel_size;
  std::size_t layer = d * k;
  if (c.gate_mode == GateMode::sbg) layer += d * k;
  if (c.use_pointwise) layer += d * d + d;
  if (c.use_layer_norm) layer += 2 * d;
  const std::size_t head = c.tie_output_embedding ? v : d * v + v;
  return v * d + c.num_layers * layer + head;
}

}  // namespace netconv::model
