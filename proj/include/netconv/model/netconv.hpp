#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "netconv/model/config.hpp"
#include "netconv/model/params.hpp"
#include "netconv/tensor/ops.hpp"

namespace netconv::model {

using tensor::Tape;

std::string layer_param(std::size_t layer, const char* what);

// Encoder and masked-prediction head, deterministic for a seed. Embedding and
// linear weights ~ U(-0.02, 0.02); kernel scores 0 (uniform window scores);
// norm gain 1; biases 0. Without window scoring the raw kernel starts at 1/k,
// which is the same initial operator.
template <typename T>
ParameterStore<T> init_model(const ModelConfig& config, std::uint64_t seed);

// Fresh two-layer classification head ("head.*"), replacing any existing one.
// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
template <typename T>
void init_classifier_head(ParameterStore<T>& params, const ModelConfig& config, std::size_t num_classes,
                          std::uint64_t seed);

std::size_t classifier_classes(const ParameterStore<float>& params);

// Flattened batch of equal-length records: tokens.size() == batch * seq_len.
struct TokenBatch {
  std::span<const std::uint32_t> tokens;
  std::size_t seq_len = 0;

  std::size_t batch() const { return seq_len ? tokens.size() / seq_len : 0; }
};

template <typename T>
struct Encoded {
  Var<T> hidden;                     // (batch*seq_len x d_model)
  std::vector<std::uint8_t> valid;   // token != PAD, per row
  std::size_t seq_len = 0;
};

// One traffic convolution layer over row blocks of seq_len:
//   u = mask(LN(x));  h = conv(u | scores_h);  g = conv(u | scores_g)
//   o = h * sigmoid(g)   (or relu(h) / gelu(h) / h, per gate mode)
//   y = x + W o + b      (pointwise and residual each optional)
template <typename T>
Var<T> traffic_conv_layer(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params,
                          std::size_t layer, const Var<T>& x, std::span<const std::uint8_t> valid,
                          std::size_t seq_len);

template <typename T>
Encoded<T> encode(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params, TokenBatch batch);

// Logits over the vocabulary for hidden rows at `positions` (row indices into
// the flattened batch).
template <typename T>
Var<T> mlm_logits(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params,
                  const Var<T>& hidden, std::span<const std::size_t> positions);

// Mean cross-entropy of the masked-prediction head at `positions`; equal to
// cross_entropy(mlm_logits(...)) but never materialises the full logit matrix
// for a tied head. `argmax` receives the top-1 id per position when given.
template <typename T>
Var<T> mlm_loss(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params, const Var<T>& hidden,
                std::span<const std::size_t> positions, std::span<const std::uint32_t> targets,
                std::vector<std::uint32_t>* argmax = nullptr);

// Pool over valid positions of every record, then Linear -> ReLU -> Linear.
// Returns (batch x num_classes).
template <typename T>
Var<T> classify(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params, const Encoded<T>& enc);

// Window scores actually used by a layer's path ("h_kernel" or "g_kernel"):
// softmax of every raw row, or the raw rows when scoring is off.
template <typename T>
Tensor<T> window_scores(const ModelConfig& config, const ParameterStore<T>& params, std::size_t layer,
                        const char* path);

}  // namespace netconv::model
