#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dancemeld/autograd/var.hpp"

// Differentiable primitives over time-major 2-D tensors.
namespace dancemeld::ag {

namespace detail {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  DM_THROW_IF(!a.value().same_shape(b.value()), ShapeMismatch,
              std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                  " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

template <typename T>
void add_into(Node<T>& parent, const Tensor<T>& g, T scale = T(1)) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += scale * g[i];
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    detail::add_into(*self.parents[0], self.grad);
    detail::add_into(*self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    detail::add_into(*self.parents[0], self.grad);
    detail::add_into(*self.parents[1], self.grad, T(-1));
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_result<T>(std::move(out), {a.node()}, [s](Node<T>& self) {
    detail::add_into(*self.parents[0], self.grad, s);
  });
}

// a (R x C) + bias (1 x C) broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias) {
  DM_THROW_IF(bias.rows() != 1 || bias.cols() != a.cols(), ShapeMismatch, "add_row bias shape");
  Tensor<T> out = a.value();
  const std::size_t C = a.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) += bias.value()[c];
  return make_result<T>(std::move(out), {a.node(), bias.node()}, [C](Node<T>& self) {
    detail::add_into(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < C; ++c) g[c] += self.grad(r, c);
    }
  });
}

// a (R x C) * g (1 x C) broadcast over rows.
template <typename T>
Var<T> mul_row(const Var<T>& a, const Var<T>& gain) {
  DM_THROW_IF(gain.rows() != 1 || gain.cols() != a.cols(), ShapeMismatch, "mul_row gain shape");
  Tensor<T> out = a.value();
  const std::size_t C = a.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) *= gain.value()[c];
  return make_result<T>(std::move(out), {a.node(), gain.node()}, [C](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pg = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < C; ++c) g(r, c) += self.grad(r, c) * pg.value[c];
    }
    if (pg.requires_grad) {
      auto& g = pg.grad_buffer();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < C; ++c) g[c] += self.grad(r, c) * pa.value(r, c);
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  DM_THROW_IF(a.cols() != b.rows(), ShapeMismatch,
              "matmul inner dims " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  Tensor<T> out(a.rows(), b.cols());
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer().matrix().noalias() += self.grad.matrix() * pb.value.matrix().transpose();
    if (pb.requires_grad) pb.grad_buffer().matrix().noalias() += pa.value.matrix().transpose() * self.grad.matrix();
  });
}

// a (m x k) times b^T where b is (n x k).
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  DM_THROW_IF(a.cols() != b.cols(), ShapeMismatch, "matmul_nt inner dims");
  Tensor<T> out(a.rows(), b.rows());
  out.matrix().noalias() = a.value().matrix() * b.value().matrix().transpose();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer().matrix().noalias() += self.grad.matrix() * pb.value.matrix();
    if (pb.requires_grad) pb.grad_buffer().matrix().noalias() += self.grad.matrix().transpose() * pa.value.matrix();
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > T(0)) g[i] += self.grad[i];
  });
}

// tanh approximation, as in most transformer codebases
template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T k0 = T(0.7978845608028654);
  constexpr T k1 = T(0.044715);
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v)));
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = p.value[i];
      const T u = k0 * (x + k1 * x * x * x);
      const T th = std::tanh(u);
      const T du = k0 * (T(1) + T(3) * k1 * x * x);
      g[i] += self.grad[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du);
    }
  });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v / (T(1) + std::exp(-v));
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-p.value[i]));
      g[i] += self.grad[i] * s * (T(1) + p.value[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().storage()) acc += double(v);
  return make_result<T>(Tensor<T>::scalar(T(acc)), {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (auto& v : g.storage()) v += up;
  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().storage()) acc += double(v) * double(v);
  return make_result<T>(Tensor<T>::scalar(T(acc)), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    const T up = T(2) * self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * p.value[i];
  });
}

// Mean of squared elementwise differences over every axis.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mse");
  const std::size_t n = a.value().size();
  DM_THROW_IF(n == 0, ShapeMismatch, "mse of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(a.value()[i]) - double(b.value()[i]);
    acc += d * d;
  }
  return make_result<T>(Tensor<T>::scalar(T(acc / double(n))), {a.node(), b.node()}, [n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T up = T(2) * self.grad[0] / T(n);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += up * (pa.value[i] - pb.value[i]);
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] -= up * (pa.value[i] - pb.value[i]);
    }
  });
}

// Stop-gradient: same value, no path back to the argument.
template <typename T>
Var<T> detach(const Var<T>& a) {
  return constant<T>(a.value());
}

// Straight-through estimator: forwards `quantized` bit-exactly while routing
// the incoming gradient to `continuous` unchanged.
template <typename T>
Var<T> straight_through(const Var<T>& continuous, const Tensor<T>& quantized) {
  DM_THROW_IF(!continuous.value().same_shape(quantized), ShapeMismatch, "straight_through shape");
  return make_result<T>(quantized, {continuous.node()}, [](Node<T>& self) {
    detail::add_into(*self.parents[0], self.grad);
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  DM_THROW_IF(parts.empty(), ShapeMismatch, "concat_cols of nothing");
  const std::size_t R = parts[0].rows();
  std::size_t C = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    DM_THROW_IF(p.rows() != R, LengthMismatch,
                "concat_cols row mismatch " + std::to_string(p.rows()) + " vs " + std::to_string(R));
    offsets.push_back(C);
    C += p.cols();
    parents.push_back(p.node());
  }
  Tensor<T> out(R, C);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < R; ++r)
      std::copy_n(v.data() + r * v.cols(), v.cols(), out.data() + r * C + offsets[k]);
  }
  return make_result<T>(std::move(out), std::move(parents), [offsets, C](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      const std::size_t w = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < w; ++c) g(r, c) += self.grad[r * C + offsets[k] + c];
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  Tensor<T> out = a.value().slice_cols(begin, end);
  return make_result<T>(std::move(out), {a.node()}, [begin](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) g(r, begin + c) += self.grad(r, c);
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  DM_THROW_IF(parts.empty(), ShapeMismatch, "concat_rows of nothing");
  const std::size_t C = parts[0].cols();
  std::vector<std::shared_ptr<Node<T>>> parents;
  typename Tensor<T>::Storage data;
  for (const auto& p : parts) {
    DM_THROW_IF(p.cols() != C, ShapeMismatch, "concat_rows column mismatch");
    data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
    parents.push_back(p.node());
  }
  const std::size_t R = data.size() / C;
  return make_result<T>(Tensor<T>(R, C, std::move(data)), std::move(parents), [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& pp : self.parents) {
      const std::size_t n = pp->value.size();
      if (pp->requires_grad) {
        auto& g = pp->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  Tensor<T> out = a.value().slice_rows(begin, end);
  const std::size_t C = a.cols();
  return make_result<T>(std::move(out), {a.node()}, [begin, C](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * C + i] += self.grad[i];
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  Tensor<T> out(a.cols(), a.rows());
  out.matrix() = a.value().matrix().transpose();
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    self.parents[0]->grad_buffer().matrix() += self.grad.matrix().transpose();
  });
}

// out[i] = table[indices[i]]; gradient scatters back into the table rows.
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> indices) {
  const std::size_t C = table.cols();
  Tensor<T> out(indices.size(), C);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    DM_THROW_IF(indices[i] < 0 || std::size_t(indices[i]) >= table.rows(), IndexOutOfRange,
                "gather index " + std::to_string(indices[i]));
    std::copy_n(table.value().data() + std::size_t(indices[i]) * C, C, out.data() + i * C);
  }
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  return make_result<T>(std::move(out), {table.node()}, [idx = std::move(idx), C](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < C; ++c) g(std::size_t(idx[i]), c) += self.grad(i, c);
  });
}

// Nearest-neighbour temporal upsampling: every row repeated `factor` times.
template <typename T>
Var<T> upsample_rows(const Var<T>& a, std::size_t factor) {
  const std::size_t R = a.rows(), C = a.cols();
  Tensor<T> out(R * factor, C);
  for (std::size_t r = 0; r < R * factor; ++r)
    std::copy_n(a.value().data() + (r / factor) * C, C, out.data() + r * C);
  return make_result<T>(std::move(out), {a.node()}, [factor, C](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < C; ++c) g(r / factor, c) += self.grad(r, c);
  });
}

// Non-overlapping temporal average pooling. Rows must divide evenly.
template <typename T>
Var<T> avg_pool_rows(const Var<T>& a, std::size_t factor) {
  DM_THROW_IF(factor == 0 || a.rows() % factor != 0, BadLength,
              "avg_pool_rows: " + std::to_string(a.rows()) + " rows not divisible by " + std::to_string(factor));
  const std::size_t R = a.rows() / factor, C = a.cols();
  Tensor<T> out(R, C);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < C; ++c) out(r / factor, c) += a.value()(r, c);
  for (auto& v : out.storage()) v /= T(factor);
  return make_result<T>(std::move(out), {a.node()}, [factor, C](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < C; ++c) g(r, c) += self.grad(r / factor, c) / T(factor);
  });
}

// First temporal difference: out[i] = a[i+1] - a[i].
template <typename T>
Var<T> diff_rows(const Var<T>& a) {
  DM_THROW_IF(a.rows() < 2, SequenceTooShort, "temporal difference needs at least 2 rows");
  const std::size_t R = a.rows() - 1, C = a.cols();
  Tensor<T> out(R, C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) = a.value()(r + 1, c) - a.value()(r, c);
  return make_result<T>(std::move(out), {a.node()}, [R, C](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        g(r + 1, c) += self.grad(r, c);
        g(r, c) -= self.grad(r, c);
      }
  });
}

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t dilation = 1;

  std::size_t output_length(std::size_t input_length) const {
    const std::ptrdiff_t span = std::ptrdiff_t(dilation * (kernel - 1) + 1);
    const std::ptrdiff_t padded = std::ptrdiff_t(input_length + 2 * padding);
    if (padded < span) return 0;
    return std::size_t((padded - span) / std::ptrdiff_t(stride) + 1);
  }
};

// 1-D temporal convolution. x: T x Cin, weight: (K*Cin) x Cout with tap-major
// rows, bias: 1 x Cout. Zero padding.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geo) {
  const std::size_t Tin = x.rows(), Cin = x.cols(), K = geo.kernel;
  DM_THROW_IF(weight.rows() != K * Cin, ShapeMismatch,
              "conv1d weight rows " + std::to_string(weight.rows()) + " != " + std::to_string(K * Cin));
  DM_THROW_IF(bias.cols() != weight.cols(), ShapeMismatch, "conv1d bias width");
  const std::size_t Tout = geo.output_length(Tin);
  DM_THROW_IF(Tout == 0, BadLength, "conv1d input too short");

  auto cols = std::make_shared<Tensor<T>>(Tout, K * Cin);
  for (std::size_t t = 0; t < Tout; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t src = std::ptrdiff_t(t * geo.stride + k * geo.dilation) - std::ptrdiff_t(geo.padding);
      if (src < 0 || src >= std::ptrdiff_t(Tin)) continue;
      std::copy_n(x.value().data() + std::size_t(src) * Cin, Cin, cols->data() + t * K * Cin + k * Cin);
    }
  Tensor<T> out(Tout, weight.cols());
  out.matrix().noalias() = cols->matrix() * weight.value().matrix();
  out.matrix().rowwise() += bias.value().matrix().row(0);

  return make_result<T>(std::move(out), {x.node(), weight.node(), bias.node()},
                        [cols, geo, Tin, Cin, K](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pw.requires_grad) pw.grad_buffer().matrix().noalias() += cols->matrix().transpose() * self.grad.matrix();
    if (pb.requires_grad) pb.grad_buffer().matrix().row(0) += self.grad.matrix().colwise().sum();
    if (px.requires_grad) {
      RowMatrix<T> gcols = self.grad.matrix() * pw.value.matrix().transpose();
      auto& gx = px.grad_buffer();
      for (std::size_t t = 0; t < self.grad.rows(); ++t)
        for (std::size_t k = 0; k < K; ++k) {
          const std::ptrdiff_t src = std::ptrdiff_t(t * geo.stride + k * geo.dilation) - std::ptrdiff_t(geo.padding);
          if (src < 0 || src >= std::ptrdiff_t(Tin)) continue;
          T* dst = gx.data() + std::size_t(src) * Cin;
          const T* g = gcols.data() + t * K * Cin + k * Cin;
          for (std::size_t c = 0; c < Cin; ++c) dst[c] += g[c];
        }
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    T m = row[0];
    for (T v : row) m = std::max(m, v);
    T s = 0;
    for (T& v : row) s += (v = std::exp(v - m));
    for (T& v : row) v /= s;
  }
  auto probs = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {a.node()}, [probs](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += self.grad(r, c) * (*probs)(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += (*probs)(r, c) * (self.grad(r, c) - dot);
    }
  });
}

// Row-wise layer normalisation with learnable gain and bias (1 x C each).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const std::size_t R = x.rows(), C = x.cols();
  auto xhat = std::make_shared<Tensor<T>>(R, C);
  auto inv_std = std::make_shared<std::vector<T>>(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < C; ++c) mean += x.value()(r, c);
    mean /= double(C);
    for (std::size_t c = 0; c < C; ++c) {
      const double d = x.value()(r, c) - mean;
      var += d * d;
    }
    var /= double(C);
    (*inv_std)[r] = T(1.0 / std::sqrt(var + double(eps)));
    for (std::size_t c = 0; c < C; ++c) (*xhat)(r, c) = T((x.value()(r, c) - mean)) * (*inv_std)[r];
  }
  Tensor<T> out(R, C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out(r, c) = (*xhat)(r, c) * gain.value()[c] + bias.value()[c];

  return make_result<T>(std::move(out), {x.node(), gain.node(), bias.node()}, [xhat, inv_std, R, C](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pg.requires_grad || pb.requires_grad) {
      auto& gg = pg.grad_buffer();
      auto& gb = pb.grad_buffer();
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          gg[c] += self.grad(r, c) * (*xhat)(r, c);
          gb[c] += self.grad(r, c);
        }
    }
    if (px.requires_grad) {
      auto& gx = px.grad_buffer();
      std::vector<T> dxhat(C);
      for (std::size_t r = 0; r < R; ++r) {
        T mean_d = 0, mean_dx = 0;
        for (std::size_t c = 0; c < C; ++c) {
          dxhat[c] = self.grad(r, c) * pg.value[c];
          mean_d += dxhat[c];
          mean_dx += dxhat[c] * (*xhat)(r, c);
        }
        mean_d /= T(C);
        mean_dx /= T(C);
        for (std::size_t c = 0; c < C; ++c)
          gx(r, c) += (*inv_std)[r] * (dxhat[c] - mean_d - (*xhat)(r, c) * mean_dx);
      }
    }
  });
}

// Inverted dropout; identity when p == 0.
template <typename T, typename Rng>
Var<T> dropout(const Var<T>& a, T p, Rng& rng) {
  if (p <= T(0)) return a;
  auto mask = std::make_shared<Tensor<T>>(a.rows(), a.cols());
  std::bernoulli_distribution keep(1.0 - double(p));
  const T s = T(1) / (T(1) - p);
  for (auto& m : mask->storage()) m = keep(rng) ? s : T(0);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return make_result<T>(std::move(out), {a.node()}, [mask](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

}  // namespace dancemeld::ag
