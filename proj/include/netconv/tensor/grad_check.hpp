#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "netconv/tensor/autograd.hpp"

namespace netconv::tensor {

using ScalarProgram = std::function<Var<double>(Tape<double>&)>;

// Compares reverse-mode gradients of `program` against central differences for
// every coordinate of `params`. Relative error per coordinate is
// |a - n| / max(1, |a|, |n|); the maximum over all coordinates is returned.
inline double grad_check(const ScalarProgram& program, std::span<Var<double>> params, double eps = 1e-4) {
  for (auto& p : params) p.zero_grad();
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    const Var<double> loss = program(tape);
    tape.backward(loss);
    for (auto& p : params) {
      analytic.push_back(p.has_grad() ? p.grad() : Tensor<double>(p.dims()));
    }
  }

  auto evaluate = [&] {
    Tape<double> probe(false);
    return program(probe).value().item();
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& values = params[pi].mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = evaluate();
      values[i] = saved - eps;
      const double minus = evaluate();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace netconv::tensor
