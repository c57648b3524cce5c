#include "netconv/bench/attention.hpp"

#include <cmath>

#include "netconv/common/random.hpp"
#include "netconv/tensor/ops.hpp"

namespace netconv::bench {

template <typename T>
AttentionParams<T> init_attention(std::size_t d, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0xA77});
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto make = [&] {
    tensor::Tensor<T> t({d, d});
    for (auto& v : t.storage()) v = static_cast<T>(u(rng));
    return t;
  };
  AttentionParams<T> p;
  p.wq = make();
  p.wk = make();
  p.wv = make();
  p.wo = make();
  return p;
}

template <typename T>
tensor::Tensor<T> reference_attention_forward(const tensor::Tensor<T>& x, const AttentionParams<T>& params) {
  using tensor::Var;
  tensor::Tape<T> tape(false);
  const auto xv = Var<T>::constant(x);
  const auto q = tensor::linear(tape, xv, Var<T>::constant(params.wq));
  const auto k = tensor::linear(tape, xv, Var<T>::constant(params.wk));
  const auto v = tensor::linear(tape, xv, Var<T>::constant(params.wv));
  const T scale = T{1} / std::sqrt(static_cast<T>(x.cols()));
  const auto scores = tensor::scale(tape, tensor::linear_nt(tape, q, k), scale);
  const auto attn = tensor::softmax_rows(tape, scores);
  const auto mixed = tensor::linear(tape, attn, v);
  return tensor::linear(tape, mixed, Var<T>::constant(params.wo)).value();
}

template AttentionParams<float> init_attention<float>(std::size_t, std::uint64_t);
template AttentionParams<double> init_attention<double>(std::size_t, std::uint64_t);
template tensor::Tensor<float> reference_attention_forward<float>(const tensor::Tensor<float>&,
                                                                  const AttentionParams<float>&);
template tensor::Tensor<double> reference_attention_forward<double>(const tensor::Tensor<double>&,
                                                                    const AttentionParams<double>&);

}  // namespace netconv::bench
