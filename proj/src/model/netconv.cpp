#include "netconv/model/netconv.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "netconv/common/random.hpp"

namespace netconv::model {

namespace {

template <typename T>
Tensor<T> uniform(Shape dims, T bound, Rng& rng) {
  Tensor<T> t(std::move(dims));
  std::uniform_real_distribution<double> u(-static_cast<double>(bound), static_cast<double>(bound));
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

}  // namespace

std::string layer_param(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "." + what;
}

template <typename T>
ParameterStore<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, {0x1417});
  const std::size_t v = config.vocab_size, d = config.d_model, k = config.kernel_size;
  const T scale = T(0.02);
  const T kernel_init = config.use_wbs ? T{0} : T{1} / static_cast<T>(k);

  ParameterStore<T> p;
  p.add("embed", uniform<T>({v, d}, scale, rng));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    p.add(layer_param(l, "h_kernel"), Tensor<T>({d, k}, kernel_init));
    if (config.gate_mode == GateMode::sbg) p.add(layer_param(l, "g_kernel"), Tensor<T>({d, k}, kernel_init));
    if (config.use_pointwise) {
      p.add(layer_param(l, "pointwise.weight"), uniform<T>({d, d}, scale, rng));
      p.add(layer_param(l, "pointwise.bias"), Tensor<T>({d}));
    }
    if (config.use_layer_norm) {
      p.add(layer_param(l, "norm.gain"), Tensor<T>({d}, T{1}));
      p.add(layer_param(l, "norm.bias"), Tensor<T>({d}));
    }
  }
  if (!config.tie_output_embedding) p.add("mlm.weight", uniform<T>({d, v}, scale, rng));
  p.add("mlm.bias", Tensor<T>({v}));
  return p;
}

template <typename T>
void init_classifier_head(ParameterStore<T>& params, const ModelConfig& config, std::size_t num_classes,
                          std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("classification needs at least 2 classes");
  params.remove_prefix("head.");
  Rng rng = make_rng(seed, {0x4EAD});
  const std::size_t d = config.d_model, h = config.classifier_hidden();
  params.add("head.fc1.weight", uniform<T>({d, h}, T{1} / std::sqrt(static_cast<T>(d)), rng));
  params.add("head.fc1.bias", Tensor<T>({h}));
  params.add("head.fc2.weight", uniform<T>({h, num_classes}, T{1} / std::sqrt(static_cast<T>(h)), rng));
  params.add("head.fc2.bias", Tensor<T>({num_classes}));
}

std::size_t classifier_classes(const ParameterStore<float>& params) {
  if (!params.contains("head.fc2.bias")) return 0;
  return params.at("head.fc2.bias").value().size();
}

template <typename T>
Var<T> traffic_conv_layer(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params,
                          std::size_t layer, const Var<T>& x, std::span<const std::uint8_t> valid,
                          std::size_t seq_len) {
  using namespace tensor;
  if (x.value().rank() != 2 || x.value().cols() != config.d_model) {
    throw ShapeError("traffic_conv_layer: expected (rows x " + std::to_string(config.d_model) + ") input, got " +
                     tensor::to_string(x.dims()));
  }
  Var<T> u = x;
  if (config.use_layer_norm) {
    u = layer_norm(tape, u, params.at(layer_param(layer, "norm.gain")), params.at(layer_param(layer, "norm.bias")));
  }
  u = mask_rows(tape, u, valid);
  const Var<T> h = scored_depthwise_conv(tape, u, params.at(layer_param(layer, "h_kernel")), seq_len, config.use_wbs);
  Var<T> o;
  switch (config.gate_mode) {
    case GateMode::sbg: {
      const Var<T> g =
          scored_depthwise_conv(tape, u, params.at(layer_param(layer, "g_kernel")), seq_len, config.use_wbs);
      o = mul(tape, h, sigmoid(tape, g));
      break;
    }
    case GateMode::relu:
      o = relu(tape, h);
      break;
    case GateMode::gelu:
      o = gelu(tape, h);
      break;
    case GateMode::none:
      o = h;
      break;
  }
  if (config.use_pointwise) {
    o = linear(tape, o, params.at(layer_param(layer, "pointwise.weight")),
               params.at(layer_param(layer, "pointwise.bias")));
  }
  return config.use_residual ? add(tape, x, o) : o;
}

template <typename T>
Encoded<T> encode(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params, TokenBatch batch) {
  if (batch.seq_len == 0 || batch.tokens.empty() || batch.tokens.size() % batch.seq_len != 0) {
    throw std::invalid_argument("encode: token count must be a positive multiple of seq_len");
  }
  Encoded<T> out;
  out.seq_len = batch.seq_len;
  out.valid.resize(batch.tokens.size());
  for (std::size_t i = 0; i < batch.tokens.size(); ++i) out.valid[i] = batch.tokens[i] != config.pad_id();
  Var<T> x = tensor::embedding_lookup(tape, params.at("embed"), batch.tokens);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    x = traffic_conv_layer(tape, config, params, l, x, out.valid, batch.seq_len);
  }
  if (config.final_norm) {
    const auto ones = Var<T>::constant(Tensor<T>({config.d_model}, T{1}));
    const auto zeros = Var<T>::constant(Tensor<T>({config.d_model}));
    x = tensor::layer_norm(tape, x, ones, zeros);
  }
  out.hidden = x;
  return out;
}

template <typename T>
Var<T> mlm_logits(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params,
                  const Var<T>& hidden, std::span<const std::size_t> positions) {
  if (positions.empty()) throw std::invalid_argument("mlm_logits: no masked positions");
  const Var<T> rows = tensor::gather_rows(tape, hidden, positions);
  if (config.tie_output_embedding) return tensor::linear_nt(tape, rows, params.at("embed"), params.at("mlm.bias"));
  return tensor::linear(tape, rows, params.at("mlm.weight"), params.at("mlm.bias"));
}

template <typename T>
Var<T> mlm_loss(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params, const Var<T>& hidden,
                std::span<const std::size_t> positions, std::span<const std::uint32_t> targets,
                std::vector<std::uint32_t>* argmax) {
  if (positions.empty()) throw std::invalid_argument("mlm_loss: no masked positions");
  const Var<T> rows = tensor::gather_rows(tape, hidden, positions);
  if (config.tie_output_embedding) {
    return tensor::linear_nt_cross_entropy(tape, rows, params.at("embed"), params.at("mlm.bias"), targets, argmax);
  }
  const Var<T> logits = tensor::linear(tape, rows, params.at("mlm.weight"), params.at("mlm.bias"));
  if (argmax) {
    const auto& lv = logits.value();
    argmax->resize(lv.rows());
    for (std::size_t r = 0; r < lv.rows(); ++r) {
      const auto row = lv.row(r);
      (*argmax)[r] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return tensor::cross_entropy(tape, logits, targets);
}

template <typename T>
Var<T> classify(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& params, const Encoded<T>& enc) {
  using namespace tensor;
  const Var<T> pooled = config.pool_mode == PoolMode::max
                            ? max_pool_over_sequence(tape, enc.hidden, enc.valid, enc.seq_len)
                            : mean_pool_over_sequence(tape, enc.hidden, enc.valid, enc.seq_len);
  const Var<T> hidden = relu(tape, linear(tape, pooled, params.at("head.fc1.weight"), params.at("head.fc1.bias")));
  return linear(tape, hidden, params.at("head.fc2.weight"), params.at("head.fc2.bias"));
}

template <typename T>
Tensor<T> window_scores(const ModelConfig& config, const ParameterStore<T>& params, std::size_t layer,
                        const char* path) {
  const Var<T>& raw = params.at(layer_param(layer, path));
  if (!config.use_wbs) return raw.value();
  Tape<T> tape(false);
  return tensor::softmax_rows(tape, raw).value();
}

#define NETCONV_INSTANTIATE(T)                                                                                    \
  template ParameterStore<T> init_model<T>(const ModelConfig&, std::uint64_t);                                   \
  template void init_classifier_head<T>(ParameterStore<T>&, const ModelConfig&, std::size_t, std::uint64_t);     \
  template Var<T> traffic_conv_layer<T>(Tape<T>&, const ModelConfig&, const ParameterStore<T>&, std::size_t,     \
                                        const Var<T>&, std::span<const std::uint8_t>, std::size_t);              \
  template Encoded<T> encode<T>(Tape<T>&, const ModelConfig&, const ParameterStore<T>&, TokenBatch);             \
  template Var<T> mlm_logits<T>(Tape<T>&, const ModelConfig&, const ParameterStore<T>&, const Var<T>&,           \
                                std::span<const std::size_t>);                                                   \
  template Var<T> mlm_loss<T>(Tape<T>&, const ModelConfig&, const ParameterStore<T>&, const Var<T>&,             \
                              std::span<const std::size_t>, std::span<const std::uint32_t>,                      \
                              std::vector<std::uint32_t>*);                                                      \
  template Var<T> classify<T>(Tape<T>&, const ModelConfig&, const ParameterStore<T>&, const Encoded<T>&);        \
  template Tensor<T> window_scores<T>(const ModelConfig&, const ParameterStore<T>&, std::size_t, const char*);

NETCONV_INSTANTIATE(float)
NETCONV_INSTANTIATE(double)

#undef NETCONV_INSTANTIATE

}  // namespace netconv::model
