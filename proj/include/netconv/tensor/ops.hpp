#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "netconv/tensor/autograd.hpp"

namespace netconv::tensor {

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> row_array(Tensor<T>& t, std::size_t r) {
  return {t.data() + r * t.cols(), static_cast<Eigen::Index>(t.cols())};
}
template <typename T>
Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> row_array(const Tensor<T>& t, std::size_t r) {
  return {t.data() + r * t.cols(), static_cast<Eigen::Index>(t.cols())};
}

// Eigen's vectorised reductions peel unaligned leading elements onto a scalar
// path with a different summation order, so reducing straight out of tensor
// storage would make results depend on heap placement. Reductions therefore
// run over Eigen-owned (always aligned) temporaries.
template <typename Expr>
auto owned_sum(const Expr& e) {
  const Eigen::Array<typename Expr::Scalar, 1, Eigen::Dynamic> tmp = e;
  return tmp.sum();
}

template <typename Mat>
Eigen::Matrix<typename Mat::Scalar, 1, Eigen::Dynamic> column_sums(const Mat& m) {
  const Eigen::Matrix<typename Mat::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owned = m;
  return owned.colwise().sum();
}

template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> column_sums(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& m) {
  return m.colwise().sum();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.dims() == b.dims(), std::string(op) + ": shape mismatch " + to_string(a.dims()) + " vs " +
                                    to_string(b.dims()));
}

template <typename T>
void require_matrix(const Var<T>& a, const char* op) {
  require(a.value().rank() == 2, std::string(op) + ": expected a rank-2 tensor, got " + to_string(a.dims()));
}

// Accumulate into a parent's gradient buffer only if it participates.
template <typename T>
Tensor<T>* grad_sink(const std::shared_ptr<Node<T>>& n) {
  return (n && n->requires_grad) ? &n->grad_buffer() : nullptr;
}

template <typename T, typename Fn, typename DFn>
Var<T> unary(Tape<T>& tape, const Var<T>& x, Fn fn, DFn dfn) {
  Tensor<T> out(x.dims());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(xv[i]);
  return tape.record(std::move(out), {&x}, [&] {
    return [xn = x.shared(), dfn](const Tensor<T>& g) {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfn(xn->value[i]);
    };
  });
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

}  // namespace detail

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return tape.record(std::move(out), {&a, &b}, [&] {
    return [an = a.shared(), bn = b.shared()](const Tensor<T>& g) {
      for (auto* sink : {detail::grad_sink(an), detail::grad_sink(bn)}) {
        if (!sink) continue;
        for (std::size_t i = 0; i < g.size(); ++i) (*sink)[i] += g[i];
      }
    };
  });
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape.record(std::move(out), {&a, &b}, [&] {
    return [an = a.shared(), bn = b.shared()](const Tensor<T>& g) {
      if (auto* ga = detail::grad_sink(an)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bn->value[i];
      }
      if (auto* gb = detail::grad_sink(bn)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * an->value[i];
      }
    };
  });
}

template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor) {
  return detail::unary(tape, x, [factor](T v) { return v * factor; }, [factor](T) { return factor; });
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
  return detail::unary(
      tape, x, [](T v) { return detail::sigmoid_scalar(v); },
      [](T v) {
        const T s = detail::sigmoid_scalar(v);
        return s * (T{1} - s);
      });
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  return detail::unary(
      tape, x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v) { return v > T{0} ? T{1} : T{0}; });
}

// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Tape<T>& tape, const Var<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary(
      tape, x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2)); },
      [](T v) {
        const T cdf = T(0.5) * (T{1} + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  T s{0};
  for (const T v : x.value().values()) s += v;
  return tape.record(Tensor<T>::scalar(s), {&x}, [&] {
    return [xn = x.shared()](const Tensor<T>& g) {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
    };
  });
}

// Softmax over the last dimension, max-subtracted.
template <typename T>
Var<T> softmax_rows(Tape<T>& tape, const Var<T>& x) {
  detail::require(x.value().rank() >= 1 && x.value().cols() > 0, "softmax_rows: empty input");
  const auto& xv = x.value();
  Tensor<T> out(xv.dims());
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = xv.row(r);
    auto o = out.row(r);
    const T m = *std::max_element(in.begin(), in.end());
    T z{0};
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  auto result = tape.record(std::move(out), {&x}, [] { return typename Tape<T>::BackwardFn{}; });
  if (result.requires_grad()) {
    // Needs its own output value, so the closure is attached after creation.
    std::weak_ptr<Node<T>> self = result.shared();
    result.node()->backward = [xn = x.shared(), self, rows, cols](const Tensor<T>& g) {
      const auto& y = self.lock()->value;
      auto& gx = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot{0};
        for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < cols; ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
      }
    };
  }
  return result;
}

// Depthwise convolution over row blocks of `seq_len` rows. For every block b,
// position t and channel c:
//   out[t][c] = sum_{i<k} kernel[c][i] * x[t+i][c]
// with rows past the end of the block read as zero, so the window starting at
// t is aligned to t and the output keeps the input length.
template <typename T>
Var<T> depthwise_conv(Tape<T>& tape, const Var<T>& x, const Var<T>& kernel, std::size_t seq_len) {
  detail::require_matrix(x, "depthwise_conv");
  detail::require_matrix(kernel, "depthwise_conv");
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  const std::size_t rows = xv.rows(), d = xv.cols(), k = kv.cols();
  detail::require(kv.rows() == d, "depthwise_conv: kernel rows " + std::to_string(kv.rows()) +
                                      " != channels " + std::to_string(d));
  detail::require(k >= 1, "depthwise_conv: kernel size must be >= 1");
  detail::require(seq_len >= 1 && rows % seq_len == 0,
                  "depthwise_conv: row count is not a multiple of seq_len");
  Tensor<T> out(xv.dims());
  const std::size_t blocks = rows / seq_len;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * seq_len;
    for (std::size_t t = 0; t < seq_len; ++t) {
      T* o = out.data() + (base + t) * d;
      const std::size_t taps = std::min(k, seq_len - t);
      for (std::size_t i = 0; i < taps; ++i) {
        const T* in = xv.data() + (base + t + i) * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += kv[c * k + i] * in[c];
      }
    }
  }
  return tape.record(std::move(out), {&x, &kernel}, [&] {
    return [xn = x.shared(), kn = kernel.shared(), seq_len, blocks, d, k](const Tensor<T>& g) {
      Tensor<T>* gx = detail::grad_sink(xn);
      Tensor<T>* gk = detail::grad_sink(kn);
      const auto& xv = xn->value;
      const auto& kv = kn->value;
      for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t base = b * seq_len;
        for (std::size_t t = 0; t < seq_len; ++t) {
          const T* go = g.data() + (base + t) * d;
          const std::size_t taps = std::min(k, seq_len - t);
          for (std::size_t i = 0; i < taps; ++i) {
            const std::size_t src = (base + t + i) * d;
            if (gx) {
              T* gi = gx->data() + src;
              for (std::size_t c = 0; c < d; ++c) gi[c] += kv[c * k + i] * go[c];
            }
            if (gk) {
              const T* in = xv.data() + src;
              for (std::size_t c = 0; c < d; ++c) (*gk)[c * k + i] += in[c] * go[c];
            }
          }
        }
      }
    };
  });
}

// Depthwise convolution whose per-channel kernel rows are softmax-normalised
// raw scores. With `normalise` off the raw scores are used as the kernel.
template <typename T>
Var<T> scored_depthwise_conv(Tape<T>& tape, const Var<T>& x, const Var<T>& raw_weights, std::size_t seq_len,
                             bool normalise = true) {
  if (!normalise) return depthwise_conv(tape, x, raw_weights, seq_len);
  return depthwise_conv(tape, x, softmax_rows(tape, raw_weights), seq_len);
}

// Row-wise layer normalisation with per-channel gain and bias.
template <typename T>
Var<T> layer_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  detail::require_matrix(x, "layer_norm");
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  detail::require(gain.value().size() == d && bias.value().size() == d, "layer_norm: gain/bias size mismatch");
  Tensor<T> out(xv.dims());
  Tensor<T> normed(xv.dims());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = xv.row(r);
    T mean{0};
    for (const T v : in) mean += v;
    mean /= static_cast<T>(d);
    T var{0};
    for (const T v : in) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (in[c] - mean) * inv_std[r];
      normed(r, c) = h;
      out(r, c) = h * gain.value()[c] + bias.value()[c];
    }
  }
  return tape.record(std::move(out), {&x, &gain, &bias}, [&] {
    return [xn = x.shared(), gn = gain.shared(), bn = bias.shared(), normed = std::move(normed),
            inv_std = std::move(inv_std), rows, d](const Tensor<T>& g) {
      Tensor<T>* gx = detail::grad_sink(xn);
      Tensor<T>* gg = detail::grad_sink(gn);
      Tensor<T>* gb = detail::grad_sink(bn);
      const auto& gain = gn->value;
      std::vector<T> dh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh{0}, mean_dh_h{0};
        for (std::size_t c = 0; c < d; ++c) {
          const T go = g(r, c);
          if (gg) (*gg)[c] += go * normed(r, c);
          if (gb) (*gb)[c] += go;
          dh[c] = go * gain[c];
          mean_dh += dh[c];
          mean_dh_h += dh[c] * normed(r, c);
        }
        if (!gx) continue;
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        for (std::size_t c = 0; c < d; ++c) {
          (*gx)(r, c) += inv_std[r] * (dh[c] - mean_dh - normed(r, c) * mean_dh_h);
        }
      }
    };
  });
}

// y = x W + bias, with x (R x a), W (a x b), bias (b) or empty.
template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias = {}) {
  detail::require_matrix(weight, "linear");
  const std::size_t a = weight.value().rows(), b = weight.value().cols();
  detail::require(x.value().cols() == a, "linear: input width " + std::to_string(x.value().cols()) +
                                             " != weight rows " + std::to_string(a));
  if (bias) detail::require(bias.value().size() == b, "linear: bias size mismatch");
  Shape out_dims = x.dims();
  if (out_dims.empty()) out_dims = {1};
  out_dims.back() = b;
  Tensor<T> out(out_dims);
  auto y = detail::as_matrix(out);
  y.noalias() = detail::as_matrix(x.value()) * detail::as_matrix(weight.value());
  if (bias) {
    const auto bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(),
                                                                          static_cast<Eigen::Index>(b));
    y.rowwise() += bv;
  }
  return tape.record(std::move(out), {&x, &weight, &bias}, [&] {
    return [xn = x.shared(), wn = weight.shared(), bn = bias.shared(), b](const Tensor<T>& g) {
      const auto gm = detail::as_matrix(g);
      if (auto* gx = detail::grad_sink(xn)) {
        detail::as_matrix(*gx).noalias() += gm * detail::as_matrix(wn->value).transpose();
      }
      if (auto* gw = detail::grad_sink(wn)) {
        detail::as_matrix(*gw).noalias() += detail::as_matrix(xn->value).transpose() * gm;
      }
      if (auto* gb = detail::grad_sink(bn)) {
        auto gbv = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data(), static_cast<Eigen::Index>(b));
        gbv += detail::column_sums(gm);
      }
    };
  });
}

// y = x Eᵀ + bias, with x (R x a), E (b x a). Used for tied output heads and
// attention scores.
template <typename T>
Var<T> linear_nt(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias = {}) {
  detail::require_matrix(weight, "linear_nt");
  const std::size_t b = weight.value().rows(), a = weight.value().cols();
  detail::require(x.value().cols() == a, "linear_nt: input width " + std::to_string(x.value().cols()) +
                                             " != weight cols " + std::to_string(a));
  if (bias) detail::require(bias.value().size() == b, "linear_nt: bias size mismatch");
  Tensor<T> out(Shape{x.value().rows(), b});
  auto y = detail::as_matrix(out);
  y.noalias() = detail::as_matrix(x.value()) * detail::as_matrix(weight.value()).transpose();
  if (bias) {
    const auto bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(),
                                                                          static_cast<Eigen::Index>(b));
    y.rowwise() += bv;
  }
  return tape.record(std::move(out), {&x, &weight, &bias}, [&] {
    return [xn = x.shared(), wn = weight.shared(), bn = bias.shared(), b](const Tensor<T>& g) {
      const auto gm = detail::as_matrix(g);
      if (auto* gx = detail::grad_sink(xn)) {
        detail::as_matrix(*gx).noalias() += gm * detail::as_matrix(wn->value);
      }
      if (auto* gw = detail::grad_sink(wn)) {
        detail::as_matrix(*gw).noalias() += gm.transpose() * detail::as_matrix(xn->value);
      }
      if (auto* gb = detail::grad_sink(bn)) {
        auto gbv = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data(), static_cast<Eigen::Index>(b));
        gbv += detail::column_sums(gm);
      }
    };
  });
}

template <typename T>
Var<T> embedding_lookup(Tape<T>& tape, const Var<T>& table, std::span<const std::uint32_t> ids) {
  detail::require_matrix(table, "embedding_lookup");
  const std::size_t vocab = table.value().rows(), d = table.value().cols();
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[r]) + " >= vocabulary size " +
                              std::to_string(vocab));
    }
    const auto src = table.value().row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return tape.record(std::move(out), {&table}, [&] {
    return [tn = table.shared(), ids = std::vector<std::uint32_t>(ids.begin(), ids.end()), d](const Tensor<T>& g) {
      auto& gt = tn->grad_buffer();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        T* dst = gt.data() + static_cast<std::size_t>(ids[r]) * d;
        const T* src = g.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    };
  });
}

// Multiplies each row by 0 or 1 according to `keep`.
template <typename T>
Var<T> mask_rows(Tape<T>& tape, const Var<T>& x, std::span<const std::uint8_t> keep) {
  detail::require_matrix(x, "mask_rows");
  detail::require(keep.size() == x.value().rows(), "mask_rows: mask length mismatch");
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < keep.size(); ++r) {
    if (!keep[r]) std::fill(out.row(r).begin(), out.row(r).end(), T{0});
  }
  return tape.record(std::move(out), {&x}, [&] {
    return [xn = x.shared(), keep = std::vector<std::uint8_t>(keep.begin(), keep.end())](const Tensor<T>& g) {
      auto& gx = xn->grad_buffer();
      for (std::size_t r = 0; r < keep.size(); ++r) {
        if (!keep[r]) continue;
        const auto src = g.row(r);
        auto dst = gx.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    };
  });
}

template <typename T>
Var<T> gather_rows(Tape<T>& tape, const Var<T>& x, std::span<const std::size_t> positions) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t d = x.value().cols();
  Tensor<T> out(Shape{positions.size(), d});
  for (std::size_t r = 0; r < positions.size(); ++r) {
    if (positions[r] >= x.value().rows()) throw std::out_of_range("gather_rows: position out of range");
    const auto src = x.value().row(positions[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return tape.record(std::move(out), {&x}, [&] {
    return [xn = x.shared(), pos = std::vector<std::size_t>(positions.begin(), positions.end())](
               const Tensor<T>& g) {
      auto& gx = xn->grad_buffer();
      for (std::size_t r = 0; r < pos.size(); ++r) {
        const auto src = g.row(r);
        auto dst = gx.row(pos[r]);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    };
  });
}

class EmptyPoolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Max over the valid rows of each `seq_len` block; returns (blocks x d).
template <typename T>
Var<T> max_pool_over_sequence(Tape<T>& tape, const Var<T>& x, std::span<const std::uint8_t> valid,
                              std::size_t seq_len) {
  detail::require_matrix(x, "max_pool_over_sequence");
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  detail::require(valid.size() == rows && seq_len >= 1 && rows % seq_len == 0,
                  "max_pool_over_sequence: mask/seq_len mismatch");
  const std::size_t blocks = rows / seq_len;
  Tensor<T> out(Shape{blocks, d}, -std::numeric_limits<T>::infinity());
  std::vector<std::size_t> argmax(blocks * d, rows);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const std::size_t r = b * seq_len + t;
      if (!valid[r]) continue;
      for (std::size_t c = 0; c < d; ++c) {
        const T v = x.value()(r, c);
        if (argmax[b * d + c] == rows || v > out(b, c)) {
          out(b, c) = v;
          argmax[b * d + c] = r;
        }
      }
    }
    if (d > 0 && argmax[b * d] == rows) throw EmptyPoolError("pooling over a sequence with no valid positions");
  }
  return tape.record(std::move(out), {&x}, [&] {
    return [xn = x.shared(), argmax = std::move(argmax), d](const Tensor<T>& g) {
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < argmax.size(); ++i) gx(argmax[i], i % d) += g[i];
    };
  });
}

template <typename T>
Var<T> mean_pool_over_sequence(Tape<T>& tape, const Var<T>& x, std::span<const std::uint8_t> valid,
                               std::size_t seq_len) {
  detail::require_matrix(x, "mean_pool_over_sequence");
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  detail::require(valid.size() == rows && seq_len >= 1 && rows % seq_len == 0,
                  "mean_pool_over_sequence: mask/seq_len mismatch");
  const std::size_t blocks = rows / seq_len;
  Tensor<T> out(Shape{blocks, d});
  std::vector<T> counts(blocks, T{0});
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const std::size_t r = b * seq_len + t;
      if (!valid[r]) continue;
      counts[b] += T{1};
      for (std::size_t c = 0; c < d; ++c) out(b, c) += x.value()(r, c);
    }
    if (counts[b] == T{0}) throw EmptyPoolError("pooling over a sequence with no valid positions");
    for (std::size_t c = 0; c < d; ++c) out(b, c) /= counts[b];
  }
  return tape.record(std::move(out), {&x}, [&] {
    return [xn = x.shared(), valid = std::vector<std::uint8_t>(valid.begin(), valid.end()),
            counts = std::move(counts), seq_len, d](const Tensor<T>& g) {
      auto& gx = xn->grad_buffer();
      for (std::size_t r = 0; r < valid.size(); ++r) {
        if (!valid[r]) continue;
        const std::size_t b = r / seq_len;
        for (std::size_t c = 0; c < d; ++c) gx(r, c) += g(b, c) / counts[b];
      }
    };
  });
}

// Mean over rows of -log softmax(logits)[target], log-sum-exp stabilised.
template <typename T>
Var<T> cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const std::uint32_t> targets) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.value().rows(), v = logits.value().cols();
  if (m == 0 || targets.empty()) throw std::invalid_argument("cross_entropy: no rows");
  detail::require(targets.size() == m, "cross_entropy: target count mismatch");
  std::vector<T> lse(m);
  T total{0};
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= v) throw std::out_of_range("cross_entropy: target out of range");
    const auto row = detail::row_array(logits.value(), r);
    const T mx = row.maxCoeff();
    lse[r] = mx + std::log(detail::owned_sum((row - mx).exp()));
    total += lse[r] - row[targets[r]];
  }
  const T inv_m = T{1} / static_cast<T>(m);
  return tape.record(Tensor<T>::scalar(total * inv_m), {&logits}, [&] {
    return [ln = logits.shared(), lse = std::move(lse), tgt = std::vector<std::uint32_t>(targets.begin(), targets.end()),
            inv_m](const Tensor<T>& g) {
      auto& gl = ln->grad_buffer();
      const T s = g[0] * inv_m;
      for (std::size_t r = 0; r < tgt.size(); ++r) {
        detail::row_array(gl, r) += s * (detail::row_array(std::as_const(ln->value), r) - lse[r]).exp();
        gl(r, tgt[r]) -= s;
      }
    };
  });
}


// Mean cross-entropy of softmax(x Eᵀ + bias) against targets, fused so the
// (rows x vocab) logit matrix is never held: logits are produced in
// (row chunk x vocab block) tiles with an online log-sum-exp, and the
// backward pass recomputes each tile. Optionally reports the top-1 index of
// every row.
template <typename T>
Var<T> linear_nt_cross_entropy(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                               std::span<const std::uint32_t> targets,
                               std::vector<std::uint32_t>* argmax = nullptr, std::size_t row_chunk = 128,
                               std::size_t vocab_block = 1024) {
  detail::require_matrix(x, "linear_nt_cross_entropy");
  detail::require_matrix(weight, "linear_nt_cross_entropy");
  const std::size_t m = x.value().rows(), v = weight.value().rows(), a = weight.value().cols();
  detail::require(x.value().cols() == a, "linear_nt_cross_entropy: input width " +
                                             std::to_string(x.value().cols()) + " != weight cols " +
                                             std::to_string(a));
  if (bias) detail::require(bias.value().size() == v, "linear_nt_cross_entropy: bias size mismatch");
  if (m == 0) throw std::invalid_argument("linear_nt_cross_entropy: no rows");
  detail::require(targets.size() == m, "linear_nt_cross_entropy: target count mismatch");
  for (const auto t : targets)
    if (t >= v) throw std::out_of_range("linear_nt_cross_entropy: target out of range");
  row_chunk = std::max<std::size_t>(1, row_chunk);
  vocab_block = std::max<std::size_t>(1, vocab_block);

  using Idx = Eigen::Index;
  // Logits of rows [r0, r0 + n) against vocabulary ids [c0, c0 + w).
  auto tile = [](const Tensor<T>& xv, const Tensor<T>& wv, const Tensor<T>* bv, std::size_t r0, std::size_t n,
                 std::size_t c0, std::size_t w, detail::RowMajor<T>& out) {
    out.noalias() = detail::as_matrix(xv).middleRows(static_cast<Idx>(r0), static_cast<Idx>(n)) *
                    detail::as_matrix(wv).middleRows(static_cast<Idx>(c0), static_cast<Idx>(w)).transpose();
    if (bv) {
      out.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv->data() + c0, static_cast<Idx>(w));
    }
  };

  std::vector<T> lse(m, -std::numeric_limits<T>::infinity());
  std::vector<T> best_val(m, -std::numeric_limits<T>::infinity());
  std::vector<std::uint32_t> best(m, 0);
  T total{0};
  detail::RowMajor<T> buf;
  for (std::size_t r0 = 0; r0 < m; r0 += row_chunk) {
    const std::size_t n = std::min(row_chunk, m - r0);
    std::vector<T> mx(n, -std::numeric_limits<T>::infinity()), z(n, T{0});
    for (std::size_t c0 = 0; c0 < v; c0 += vocab_block) {
      const std::size_t w = std::min(vocab_block, v - c0);
      tile(x.value(), weight.value(), bias ? &bias.value() : nullptr, r0, n, c0, w, buf);
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Idx>(i);
        Idx arg = 0;
        const T block_max = buf.row(ii).maxCoeff(&arg);
        if (block_max > best_val[r0 + i]) {
          best_val[r0 + i] = block_max;
          best[r0 + i] = static_cast<std::uint32_t>(c0 + static_cast<std::size_t>(arg));
        }
        const T new_max = std::max(mx[i], block_max);
        z[i] = z[i] * std::exp(mx[i] - new_max) + (buf.row(ii).array() - new_max).exp().sum();
        mx[i] = new_max;
        const std::size_t t = targets[r0 + i];
        if (t >= c0 && t < c0 + w) total -= buf(ii, static_cast<Idx>(t - c0));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      lse[r0 + i] = mx[i] + std::log(z[i]);
      total += lse[r0 + i];
    }
  }
  if (argmax) *argmax = std::move(best);
  const T inv_m = T{1} / static_cast<T>(m);
  return tape.record(Tensor<T>::scalar(total * inv_m), {&x, &weight, &bias}, [&] {
    return [xn = x.shared(), wn = weight.shared(), bn = bias.shared(), lse = std::move(lse),
            tgt = std::vector<std::uint32_t>(targets.begin(), targets.end()), inv_m, row_chunk, vocab_block,
            tile](const Tensor<T>& g) {
      const T s = g[0] * inv_m;
      auto* gx = detail::grad_sink(xn);
      auto* gw = detail::grad_sink(wn);
      auto* gb = detail::grad_sink(bn);
      const std::size_t rows = tgt.size(), vocab = wn->value.rows();
      detail::RowMajor<T> p;
      for (std::size_t r0 = 0; r0 < rows; r0 += row_chunk) {
        const std::size_t n = std::min(row_chunk, rows - r0);
        for (std::size_t c0 = 0; c0 < vocab; c0 += vocab_block) {
          const std::size_t w = std::min(vocab_block, vocab - c0);
          tile(xn->value, wn->value, bn ? &bn->value : nullptr, r0, n, c0, w, p);
          for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Idx>(i);
            p.row(ii) = s * (p.row(ii).array() - lse[r0 + i]).exp();
            const std::size_t t = tgt[r0 + i];
            if (t >= c0 && t < c0 + w) p(ii, static_cast<Idx>(t - c0)) -= s;
          }
          if (gx) {
            detail::as_matrix(*gx).middleRows(static_cast<Idx>(r0), static_cast<Idx>(n)).noalias() +=
                p * detail::as_matrix(wn->value).middleRows(static_cast<Idx>(c0), static_cast<Idx>(w));
          }
          if (gw) {
            detail::as_matrix(*gw).middleRows(static_cast<Idx>(c0), static_cast<Idx>(w)).noalias() +=
                p.transpose() * detail::as_matrix(xn->value).middleRows(static_cast<Idx>(r0), static_cast<Idx>(n));
          }
          if (gb) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data() + c0, static_cast<Idx>(w)) +=
                detail::column_sums(p);
          }
        }
      }
    };
  });
}

}  // namespace netconv::tensor
