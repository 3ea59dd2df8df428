#pragma once

// Differentiable primitives. Every op takes an optional tape; when the tape
// is null or no input requires a gradient the op runs forward only.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <vector>

#include "peci/nn/tensor.hpp"

namespace peci::nn {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::ShapeMismatch, what);
}

template <class T>
void accumulate(Tensor<T>& dst, std::span<const T> src) {
  auto g = dst.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

struct ConvGeom {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
  std::size_t col_rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t col_cols() const { return static_cast<std::size_t>(out_h) * out_w; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

template <class T>
void im2col(const T* img, const ConvGeom& g, T* cols) {
  const int k = g.kernel;
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        T* dst = cols + row * g.col_cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* drow = dst + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(drow, drow + g.out_w, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * g.width;
          if (g.stride == 1) {
            const int shift = kx - g.pad;
            const int x0 = std::max(0, -shift);
            const int x1 = std::min(g.out_w, g.width - shift);
            std::fill(drow, drow + std::max(0, x0), T(0));
            if (x1 > x0) std::copy(srow + x0 + shift, srow + x1 + shift, drow + x0);
            std::fill(drow + std::max(x0, x1), drow + g.out_w, T(0));
          } else {
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              drow[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* img) {
  const int k = g.kernel;
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* src = cols + row * g.col_cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * g.width;
          const T* srow = src + static_cast<std::size_t>(oy) * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

/// Cross-correlation of x [N,C,H,W] with w [O,C,k,k]; b [O] may be undefined.
template <class T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  detail::require(x.rank() == 4 && w.rank() == 4, "conv2d expects 4-D input and weight");
  detail::require(w.dim(1) == x.dim(1), "conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " +
                                            shape_str(w.shape()));
  detail::require(w.dim(2) == w.dim(3), "conv2d kernel must be square");
  detail::require(!b.defined() || (b.numel() == static_cast<std::size_t>(w.dim(0))), "conv2d bias size mismatch");
  const int n = x.dim(0);
  const int out_c = w.dim(0);
  detail::ConvGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad, 0, 0};
  g.out_h = (g.height + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kernel) / stride + 1;
  detail::require(g.out_h > 0 && g.out_w > 0, "conv2d output would be empty");

  const bool track = tracks(tape, x, w, b);
  Tensor<T> out({n, out_c, g.out_h, g.out_w}, track);
  const std::size_t K = g.col_rows();
  const std::size_t P = g.col_cols();
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  Buffer<T> cols(g.pointwise() ? 0 : K * P);
  ConstMatMap<T> W(w.data(), out_c, K);
  for (int i = 0; i < n; ++i) {
    const T* xi = x.data() + i * in_stride;
    const T* col_ptr = xi;
    if (!g.pointwise()) {
      detail::im2col(xi, g, cols.data());
      col_ptr = cols.data();
    }
    MatMap<T> Y(out.data() + static_cast<std::size_t>(i) * out_c * P, out_c, P);
    Y.noalias() = W * ConstMatMap<T>(col_ptr, K, P);
    if (b.defined()) {
      for (int o = 0; o < out_c; ++o) Y.row(o).array() += b[o];
    }
  }
  if (track) {
    tape->record([x, w, b, out, g, n, out_c, K, P, in_stride]() mutable {
      Buffer<T> cols(g.pointwise() ? 0 : K * P);
      Buffer<T> dcols(K * P);
      ConstMatMap<T> W(w.data(), out_c, K);
      const T* dout = out.grad().data();
      for (int i = 0; i < n; ++i) {
        ConstMatMap<T> dY(dout + static_cast<std::size_t>(i) * out_c * P, out_c, P);
        const T* xi = x.data() + i * in_stride;
        if (w.requires_grad()) {
          const T* col_ptr = xi;
          if (!g.pointwise()) {
            detail::im2col(xi, g, cols.data());
            col_ptr = cols.data();
          }
          MatMap<T> dW(w.grad_data(), out_c, K);
          dW.noalias() += dY * ConstMatMap<T>(col_ptr, K, P).transpose();
        }
        if (b.defined() && b.requires_grad()) {
          auto db = b.grad();
          for (int o = 0; o < out_c; ++o) db[o] += dY.row(o).sum();
        }
        if (x.requires_grad()) {
          T* dxi = x.grad_data() + i * in_stride;
          if (g.pointwise()) {
            MatMap<T>(dxi, K, P).noalias() += W.transpose() * dY;
          } else {
            MatMap<T>(dcols.data(), K, P).noalias() = W.transpose() * dY;
            detail::col2im_add(dcols.data(), g, dxi);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-channel batch normalization over (N,H,W). In training mode batch
/// statistics are used and the running estimates are updated in place.
template <class T>
Tensor<T> batchnorm2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum, T eps) {
  detail::require(x.rank() == 4, "batchnorm2d expects 4-D input");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  detail::require(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c) &&
                      running_mean.numel() == static_cast<std::size_t>(c) &&
                      running_var.numel() == static_cast<std::size_t>(c),
                  "batchnorm2d parameter size mismatch");
  const std::size_t m = static_cast<std::size_t>(n) * hw;
  const bool track = tracks(tape, x, gamma, beta);
  Tensor<T> out(x.shape(), track);
  std::vector<T> mean(c), inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) ss += (p[j] - mu) * (p[j] - mu);
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      running_mean[ch] = static_cast<T>((1 - momentum) * running_mean[ch] + momentum * mu);
      running_var[ch] = static_cast<T>((1 - momentum) * running_var[ch] + momentum * unbiased);
    } else {
      mean[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
    }
    const T scale = gamma[ch] * inv_std[ch];
    const T shift = beta[ch] - mean[ch] * scale;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
      const T* p = x.data() + off;
      T* q = out.data() + off;
      for (std::size_t j = 0; j < hw; ++j) q[j] = p[j] * scale + shift;
    }
  }
  if (track) {
    tape->record([x, gamma, beta, out, mean, inv_std, training, n, c, hw, m]() mutable {
      const T* dy = out.grad().data();
      for (int ch = 0; ch < c; ++ch) {
        T sum_dy = 0, sum_dy_xhat = 0;
        for (int i = 0; i < n; ++i) {
          const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
          for (std::size_t j = 0; j < hw; ++j) {
            const T xhat = (x[off + j] - mean[ch]) * inv_std[ch];
            sum_dy += dy[off + j];
            sum_dy_xhat += dy[off + j] * xhat;
          }
        }
        if (gamma.requires_grad()) gamma.grad()[ch] += sum_dy_xhat;
        if (beta.requires_grad()) beta.grad()[ch] += sum_dy;
        if (!x.requires_grad()) continue;
        T* dx = x.grad_data();
        const T g = gamma[ch] * inv_std[ch];
        const T inv_m = T(1) / static_cast<T>(m);
        for (int i = 0; i < n; ++i) {
          const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * hw;
          for (std::size_t j = 0; j < hw; ++j) {
            if (training) {
              const T xhat = (x[off + j] - mean[ch]) * inv_std[ch];
              dx[off + j] += g * (dy[off + j] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
            } else {
              dx[off + j] += g * dy[off + j];
            }
          }
        }
      }
    });
  }
  return out;
}

/// Normalizes over the last dimension.
template <class T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int d = x.dim(-1);
  detail::require(gamma.numel() == static_cast<std::size_t>(d) && beta.numel() == static_cast<std::size_t>(d),
                  "layer_norm parameter size mismatch");
  const std::size_t rows = x.numel() / d;
  const bool track = tracks(tape, x, gamma, beta);
  Tensor<T> out(x.shape(), track);
  std::vector<T> xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += p[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= d;
    inv_std[r] = static_cast<T>(1.0 / std::sqrt(var + eps));
    for (int j = 0; j < d; ++j) {
      xhat[r * d + j] = static_cast<T>((p[j] - mu) * inv_std[r]);
      out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
    }
  }
  if (track) {
    tape->record([x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows]() mutable {
      const T* dy = out.grad().data();
      std::vector<T> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T s1 = 0, s2 = 0;
        for (int j = 0; j < d; ++j) {
          const T g = dy[r * d + j];
          if (gamma.requires_grad()) gamma.grad()[j] += g * xhat[r * d + j];
          if (beta.requires_grad()) beta.grad()[j] += g;
          dxhat[j] = g * gamma[j];
          s1 += dxhat[j];
          s2 += dxhat[j] * xhat[r * d + j];
        }
        if (!x.requires_grad()) continue;
        T* dx = x.grad_data() + r * d;
        for (int j = 0; j < d; ++j) {
          dx[j] += inv_std[r] * (dxhat[j] - (s1 + xhat[r * d + j] * s2) / static_cast<T>(d));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise

enum class Activation { Relu, Sigmoid, Gelu };

template <class T>
Tensor<T> activation(Tape<T>* tape, Activation kind, const Tensor<T>& x) {
  const bool track = tracks(tape, x);
  Tensor<T> out(x.shape(), track);
  const std::size_t n = x.numel();
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  switch (kind) {
    case Activation::Relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
      break;
    case Activation::Gelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * kInvSqrt2));
      break;
  }
  if (track) {
    tape->record([x, out, kind, n]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.grad_data();
      constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
      for (std::size_t i = 0; i < n; ++i) {
        switch (kind) {
          case Activation::Relu: dx[i] += x[i] > T(0) ? dy[i] : T(0); break;
          case Activation::Sigmoid: dx[i] += dy[i] * out[i] * (T(1) - out[i]); break;
          case Activation::Gelu: {
            const T cdf = T(0.5) * (T(1) + std::erf(x[i] * kInvSqrt2));
            const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x[i] * x[i]);
            dx[i] += dy[i] * (cdf + x[i] * pdf);
            break;
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  return activation(tape, Activation::Relu, x);
}
template <class T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  return activation(tape, Activation::Sigmoid, x);
}
template <class T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x) {
  return activation(tape, Activation::Gelu, x);
}

/// a + b. `b` may also have a leading dimension of 1, broadcast over a's first axis.
template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool bcast = !same && b.rank() == a.rank() && b.dim(0) == 1 && b.numel() * a.dim(0) == a.numel() &&
                     std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1);
  detail::require(same || bcast, "add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool track = tracks(tape, a, b);
  Tensor<T> out(a.shape(), track);
  const std::size_t inner = b.numel();
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i % inner];
  if (track) {
    tape->record([a, b, out, inner]() mutable {
      const T* dy = out.grad().data();
      const std::size_t n = out.numel();
      if (a.requires_grad()) {
        T* da = a.grad_data();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        T* db = b.grad_data();
        for (std::size_t i = 0; i < n; ++i) db[i % inner] += dy[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul shape mismatch");
  const bool track = tracks(tape, a, b);
  Tensor<T> out(a.shape(), track);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (track) {
    tape->record([a, b, out]() mutable {
      const T* dy = out.grad().data();
      if (a.requires_grad()) {
        T* da = a.grad_data();
        for (std::size_t i = 0; i < out.numel(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        T* db = b.grad_data();
        for (std::size_t i = 0; i < out.numel(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
  const bool track = tracks(tape, x);
  Tensor<T> out(x.shape(), track);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;
  if (track) {
    tape->record([x, out, factor]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.grad_data();
      for (std::size_t i = 0; i < out.numel(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return out;
}

/// Sum of all elements, as a [1] tensor.
template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  const bool track = tracks(tape, x);
  Tensor<T> out({1}, track);
  T s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  out[0] = s;
  if (track) {
    tape->record([x, out]() mutable {
      const T g = out.grad()[0];
      T* dx = x.grad_data();
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += g;
    });
  }
  return out;
}

/// Sum of scalar tensors.
template <class T>
Tensor<T> add_scalars(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  bool track = false;
  T s = 0;
  for (const auto& x : xs) {
    detail::require(x.numel() == 1, "add_scalars expects scalars");
    s += x[0];
    track = track || tracks(tape, x);
  }
  Tensor<T> out({1}, track);
  out[0] = s;
  if (track) {
    tape->record([xs, out]() mutable {
      const T g = out.grad()[0];
      for (auto& x : xs) {
        if (x.requires_grad()) x.grad()[0] += g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

/// Bilinear 2x upsampling, align_corners = false with edge clamping.
template <class T>
Tensor<T> upsample_bilinear2x(Tape<T>* tape, const Tensor<T>& x) {
  detail::require(x.rank() == 4, "upsample expects 4-D input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  struct Tap {
    int lo, hi;
    T frac;
  };
  auto taps = [](int out_size, int in_size) {
    std::vector<Tap> t(out_size);
    for (int o = 0; o < out_size; ++o) {
      T src = (static_cast<T>(o) + T(0.5)) / T(2) - T(0.5);
      if (src < 0) src = 0;
      int lo = static_cast<int>(src);
      if (lo > in_size - 1) lo = in_size - 1;
      const int hi = std::min(lo + 1, in_size - 1);
      t[o] = {lo, hi, src - static_cast<T>(lo)};
    }
    return t;
  };
  const auto ty = taps(oh, h);
  const auto tx = taps(ow, w);
  const bool track = tracks(tape, x);
  Tensor<T> out({n, c, oh, ow}, track);
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const auto& a = ty[oy];
      const T* r0 = src + static_cast<std::size_t>(a.lo) * w;
      const T* r1 = src + static_cast<std::size_t>(a.hi) * w;
      for (int ox = 0; ox < ow; ++ox) {
        const auto& b = tx[ox];
        const T top = r0[b.lo] * (T(1) - b.frac) + r0[b.hi] * b.frac;
        const T bot = r1[b.lo] * (T(1) - b.frac) + r1[b.hi] * b.frac;
        dst[static_cast<std::size_t>(oy) * ow + ox] = top * (T(1) - a.frac) + bot * a.frac;
      }
    }
  }
  if (track) {
    tape->record([x, out, ty, tx, planes, h, w, oh, ow]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.grad_data();
      for (std::size_t p = 0; p < planes; ++p) {
        const T* g = dy + p * oh * ow;
        T* d = dx + p * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const auto& a = ty[oy];
          for (int ox = 0; ox < ow; ++ox) {
            const auto& b = tx[ox];
            const T v = g[static_cast<std::size_t>(oy) * ow + ox];
            const T vt = v * (T(1) - a.frac);
            const T vb = v * a.frac;
            d[static_cast<std::size_t>(a.lo) * w + b.lo] += vt * (T(1) - b.frac);
            d[static_cast<std::size_t>(a.lo) * w + b.hi] += vt * b.frac;
            d[static_cast<std::size_t>(a.hi) * w + b.lo] += vb * (T(1) - b.frac);
            d[static_cast<std::size_t>(a.hi) * w + b.hi] += vb * b.frac;
          }
        }
      }
    });
  }
  return out;
}

/// k x k max pooling with stride and zero-area padding (padded cells never win).
template <class T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& x, int k, int stride, int pad) {
  detail::require(x.rank() == 4, "maxpool2d expects 4-D input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  const bool track = tracks(tape, x);
  Tensor<T> out({n, c, oh, ow}, track);
  std::vector<std::size_t> argmax(out.numel());
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = p * h * w;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const std::size_t idx = p * h * w + static_cast<std::size_t>(iy) * w + ix;
            if (x[idx] > best) {
              best = x[idx];
              best_i = idx;
            }
          }
        }
        const std::size_t o = p * oh * ow + static_cast<std::size_t>(oy) * ow + ox;
        out[o] = best;
        argmax[o] = best_i;
      }
    }
  }
  if (track) {
    tape->record([x, out, argmax = std::move(argmax)]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.grad_data();
      for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
    });
  }
  return out;
}

/// Concatenates 4-D tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  detail::require(!xs.empty(), "concat_channels needs at least one tensor");
  const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int total = 0;
  bool track = false;
  for (const auto& x : xs) {
    detail::require(x.rank() == 4 && x.dim(0) == n && x.dim(2) == h && x.dim(3) == w,
                    "concat_channels spatial mismatch " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
    total += x.dim(1);
    track = track || tracks(tape, x);
  }
  Tensor<T> out({n, total, h, w}, track);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    int offset = 0;
    for (const auto& x : xs) {
      const std::size_t len = static_cast<std::size_t>(x.dim(1)) * hw;
      const T* src = x.data() + i * len;
      std::copy(src, src + len, out.data() + (static_cast<std::size_t>(i) * total + offset) * hw);
      offset += x.dim(1);
    }
  }
  if (track) {
    tape->record([xs, out, n, total, hw]() mutable {
      const T* dy = out.grad().data();
      for (int i = 0; i < n; ++i) {
        int offset = 0;
        for (auto& x : xs) {
          const std::size_t len = static_cast<std::size_t>(x.dim(1)) * hw;
          if (x.requires_grad()) {
            const T* g = dy + (static_cast<std::size_t>(i) * total + offset) * hw;
            T* d = x.grad_data() + i * len;
            for (std::size_t j = 0; j < len; ++j) d[j] += g[j];
          }
          offset += x.dim(1);
        }
      }
    });
  }
  return out;
}

/// Picks channels `idx` (in that order) from a 4-D tensor.
template <class T>
Tensor<T> select_channels(Tape<T>* tape, const Tensor<T>& x, const std::vector<int>& idx) {
  detail::require(x.rank() == 4, "select_channels expects 4-D input");
  const int n = x.dim(0), c = x.dim(1);
  for (int i : idx) {
    if (i < 0 || i >= c) fail(ErrorCode::IndexOutOfRange, "channel " + std::to_string(i) + " of " + std::to_string(c));
  }
  const int k = static_cast<int>(idx.size());
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const bool track = tracks(tape, x);
  Tensor<T> out({n, k, x.dim(2), x.dim(3)}, track);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      const T* src = x.data() + (static_cast<std::size_t>(i) * c + idx[j]) * hw;
      std::copy(src, src + hw, out.data() + (static_cast<std::size_t>(i) * k + j) * hw);
    }
  }
  if (track) {
    tape->record([x, out, idx, n, c, k, hw]() mutable {
      const T* dy = out.grad().data();
      T* dx = x.grad_data();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
          const T* g = dy + (static_cast<std::size_t>(i) * k + j) * hw;
          T* d = dx + (static_cast<std::size_t>(i) * c + idx[j]) * hw;
          for (std::size_t p = 0; p < hw; ++p) d[p] += g[p];
        }
      }
    });
  }
  return out;
}

/// [N,C,H,W] -> [N,H*W,C] (to_tokens) and its inverse.
template <class T>
Tensor<T> to_tokens(Tape<T>* tape, const Tensor<T>& x) {
  detail::require(x.rank() == 4, "to_tokens expects 4-D input");
  const int n = x.dim(0), c = x.dim(1);
  const int l = x.dim(2) * x.dim(3);
  const bool track = tracks(tape, x);
  Tensor<T> out({n, l, c}, track);
  for (int i = 0; i < n; ++i) {
    ConstMatMap<T> src(x.data() + static_cast<std::size_t>(i) * c * l, c, l);
    MatMap<T>(out.data() + static_cast<std::size_t>(i) * c * l, l, c) = src.transpose();
  }
  if (track) {
    tape->record([x, out, n, c, l]() mutable {
      for (int i = 0; i < n; ++i) {
        ConstMatMap<T> g(out.grad().data() + static_cast<std::size_t>(i) * c * l, l, c);
        MatMap<T>(x.grad_data() + static_cast<std::size_t>(i) * c * l, c, l) += g.transpose();
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> from_tokens(Tape<T>* tape, const Tensor<T>& x, int h, int w) {
  detail::require(x.rank() == 3 && x.dim(1) == h * w, "from_tokens token count mismatch");
  const int n = x.dim(0), c = x.dim(2), l = h * w;
  const bool track = tracks(tape, x);
  Tensor<T> out({n, c, h, w}, track);
  for (int i = 0; i < n; ++i) {
    ConstMatMap<T> src(x.data() + static_cast<std::size_t>(i) * c * l, l, c);
    MatMap<T>(out.data() + static_cast<std::size_t>(i) * c * l, c, l) = src.transpose();
  }
  if (track) {
    tape->record([x, out, n, c, l]() mutable {
      for (int i = 0; i < n; ++i) {
        ConstMatMap<T> g(out.grad().data() + static_cast<std::size_t>(i) * c * l, c, l);
        MatMap<T>(x.grad_data() + static_cast<std::size_t>(i) * c * l, l, c) += g.transpose();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token ops

/// y = x W^T + b over the last dimension; w is [out, in].
template <class T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int in = x.dim(-1);
  detail::require(w.rank() == 2 && w.dim(1) == in, "linear weight mismatch " + shape_str(w.shape()) + " for input " +
                                                       shape_str(x.shape()));
  const int outd = w.dim(0);
  detail::require(!b.defined() || b.numel() == static_cast<std::size_t>(outd), "linear bias mismatch");
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = outd;
  const bool track = tracks(tape, x, w, b);
  Tensor<T> out(shape, track);
  MatMap<T> Y(out.data(), rows, outd);
  Y.noalias() = ConstMatMap<T>(x.data(), rows, in) * ConstMatMap<T>(w.data(), outd, in).transpose();
  if (b.defined()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (int o = 0; o < outd; ++o) Y(r, o) += b[o];
    }
  }
  if (track) {
    tape->record([x, w, b, out, rows, in, outd]() mutable {
      ConstMatMap<T> dY(out.grad().data(), rows, outd);
      if (w.requires_grad()) {
        MatMap<T>(w.grad_data(), outd, in).noalias() += dY.transpose() * ConstMatMap<T>(x.data(), rows, in);
      }
      if (b.defined() && b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (int o = 0; o < outd; ++o) db[o] += dY(r, o);
        }
      }
      if (x.requires_grad()) {
        MatMap<T>(x.grad_data(), rows, in).noalias() += dY * ConstMatMap<T>(w.data(), outd, in);
      }
    });
  }
  return out;
}

/// Multi-head scaled dot-product attention over q, k, v of shape [N,L,D].
template <class T>
Tensor<T> attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads) {
  detail::require(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(), "attention q/k/v mismatch");
  const int n = q.dim(0), l = q.dim(1), d = q.dim(2);
  if (heads < 1 || d % heads != 0) {
    fail(ErrorCode::HeadsDontDivide, "width " + std::to_string(d) + " not divisible by " + std::to_string(heads));
  }
  const int dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const bool track = tracks(tape, q, k, v);
  Tensor<T> out(q.shape(), track);
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using Block = Eigen::Map<const Mat, 0, Stride>;
  using MutBlock = Eigen::Map<Mat, 0, Stride>;
  // Softmax probabilities per (sample, head), kept for backward.
  Buffer<T> probs(static_cast<std::size_t>(n) * heads * l * l);
  for (int i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * l * d;
    for (int h = 0; h < heads; ++h) {
      Block Q(q.data() + base + h * dh, l, dh, Stride(d));
      Block K(k.data() + base + h * dh, l, dh, Stride(d));
      Block V(v.data() + base + h * dh, l, dh, Stride(d));
      MatMap<T> P(probs.data() + (static_cast<std::size_t>(i) * heads + h) * l * l, l, l);
      P.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (int r = 0; r < l; ++r) {
        const T mx = P.row(r).maxCoeff();
        P.row(r) = (P.row(r).array() - mx).exp();
        P.row(r) /= P.row(r).sum();
      }
      MutBlock O(out.data() + base + h * dh, l, dh, Stride(d));
      O.noalias() = P * V;
    }
  }
  if (track) {
    tape->record([q, k, v, out, probs = std::move(probs), n, l, d, heads, dh, inv_sqrt]() mutable {
      Mat dP(l, l), dS(l, l);
      const T* dout = out.grad().data();
      for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * l * d;
        for (int h = 0; h < heads; ++h) {
          Block dO(dout + base + h * dh, l, dh, Stride(d));
          Block Q(q.data() + base + h * dh, l, dh, Stride(d));
          Block K(k.data() + base + h * dh, l, dh, Stride(d));
          Block V(v.data() + base + h * dh, l, dh, Stride(d));
          ConstMatMap<T> P(probs.data() + (static_cast<std::size_t>(i) * heads + h) * l * l, l, l);
          if (v.requires_grad()) {
            MutBlock dV(v.grad_data() + base + h * dh, l, dh, Stride(d));
            dV.noalias() += P.transpose() * dO;
          }
          if (!q.requires_grad() && !k.requires_grad()) continue;
          dP.noalias() = dO * V.transpose();
          for (int r = 0; r < l; ++r) {
            const T dot = (dP.row(r).array() * P.row(r).array()).sum();
            dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
          }
          dS *= inv_sqrt;
          if (q.requires_grad()) {
            MutBlock dQ(q.grad_data() + base + h * dh, l, dh, Stride(d));
            dQ.noalias() += dS * K;
          }
          if (k.requires_grad()) {
            MutBlock dK(k.grad_data() + base + h * dh, l, dh, Stride(d));
            dK.noalias() += dS.transpose() * Q;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace peci::nn
