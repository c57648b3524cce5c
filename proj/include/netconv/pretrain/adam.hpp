#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "netconv/model/checkpoint.hpp"
#include "netconv/model/params.hpp"

namespace netconv::pretrain {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t warmup_steps = 0;  // linear ramp, then constant
};

// Adam over every parameter that requires a gradient and received one.
// State is keyed by parameter name so it survives checkpointing.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  double current_lr() const;
  std::uint64_t steps() const { return step_; }
  void step(model::ParameterStore<float>& params);

  void save(model::Checkpoint& ckpt) const;
  // Restores moments for names present in the checkpoint; `steps` comes from
  // the caller because it lives in the checkpoint metadata.
  void load(const model::Checkpoint& ckpt, std::uint64_t steps);

 private:
  struct Moments {
    model::Tensor<float> m, v;
  };
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace netconv::pretrain
