#pragma once

#include <cstdint>

#include "netconv/tensor/tensor.hpp"

namespace netconv::bench {

// Single-head scaled dot-product self-attention, used only as the
// quadratic-cost comparator: out = softmax(Q Kᵀ / sqrt(d)) V Wo with
// Q = x Wq, K = x Wk, V = x Wv. All projections are (d x d).
template <typename T>
struct AttentionParams {
  tensor::Tensor<T> wq, wk, wv, wo;
};

template <typename T>
AttentionParams<T> init_attention(std::size_t d, std::uint64_t seed);

template <typename T>
tensor::Tensor<T> reference_attention_forward(const tensor::Tensor<T>& x, const AttentionParams<T>& params);

}  // namespace netconv::bench
