#include "netconv/pretrain/adam.hpp"

#include <algorithm>
#include <cmath>

namespace netconv::pretrain {

double Adam::current_lr() const {
  if (cfg_.warmup_steps == 0) return cfg_.lr;
  const double ramp = static_cast<double>(step_ + 1) / static_cast<double>(cfg_.warmup_steps);
  return cfg_.lr * std::min(1.0, ramp);
}

void Adam::step(model::ParameterStore<float>& params) {
  const double lr = current_lr();
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const auto step_size = static_cast<float>(lr / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(cfg_.eps);
  for (auto& [name, var] : params) {
    if (!var.requires_grad() || !var.has_grad()) continue;
    auto& w = var.mutable_value().storage();
    const auto& g = var.grad().storage();
    auto [it, fresh] = state_.try_emplace(name);
    if (fresh || it->second.m.size() != w.size()) {
      it->second.m = model::Tensor<float>(var.dims());
      it->second.v = model::Tensor<float>(var.dims());
    }
    auto& m = it->second.m.storage();
    auto& v = it->second.v.storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

void Adam::save(model::Checkpoint& ckpt) const {
  for (const auto& [name, mom] : state_) {
    ckpt.extra.emplace_back("adam.m/" + name, mom.m);
    ckpt.extra.emplace_back("adam.v/" + name, mom.v);
  }
}

void Adam::load(const model::Checkpoint& ckpt, std::uint64_t steps) {
  state_.clear();
  step_ = steps;
  for (const auto& [name, t] : ckpt.extra) {
    if (name.starts_with("adam.m/")) state_[name.substr(7)].m = t;
    if (name.starts_with("adam.v/")) state_[name.substr(7)].v = t;
  }
}

}  // namespace netconv::pretrain
