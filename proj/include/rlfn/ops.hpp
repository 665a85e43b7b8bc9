#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rlfn/gemm.hpp"
#include "rlfn/tensor.hpp"

namespace rlfn {

/// Convolution layer parameters. weight is (c_out, c_in, k, k); bias is (1, c_out, 1, 1).
template <typename T>
struct BasicConvParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  int stride = 1;
  int padding = 0;

  int out_channels() const { return weight.shape().n; }
  int in_channels() const { return weight.shape().c; }
  int kernel() const { return weight.shape().h; }
  std::size_t param_count() const { return weight.numel() + bias.numel(); }

  template <typename U>
  BasicConvParams<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>(), stride, padding};
  }
};

using ConvParams = BasicConvParams<float>;

namespace detail {

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

inline int conv_out_size(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  return span < 0 ? 0 : span / stride + 1;
}

// col[K x (oh*ow)] with row index (ky*k + kx)*c_in + ci.
template <typename T>
void im2col(const T* in, int c_in, int h, int w, int k, int stride, int pad, int oh, int ow, T* col) {
  const std::size_t opix = static_cast<std::size_t>(oh) * ow;
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      for (int ci = 0; ci < c_in; ++ci) {
        T* dst = col + static_cast<std::size_t>((ky * k + kx) * c_in + ci) * opix;
        const T* plane = in + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* row = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int k, int stride, int pad, int oh, int ow,
                T* in_grad) {
  const std::size_t opix = static_cast<std::size_t>(oh) * ow;
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      for (int ci = 0; ci < c_in; ++ci) {
        const T* src = col + static_cast<std::size_t>((ky * k + kx) * c_in + ci) * opix;
        T* plane = in_grad + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const T* row = src + static_cast<std::size_t>(oy) * ow;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

// Weight (c_out, c_in, k, k) reordered to [c_out][(ky*k + kx)*c_in + ci].
template <typename T>
std::vector<T> pack_weight(std::span<const T> w, int c_out, int c_in, int k) {
  std::vector<T> packed(w.size());
  const int kk = k * k;
  for (int co = 0; co < c_out; ++co) {
    for (int ci = 0; ci < c_in; ++ci) {
      for (int t = 0; t < kk; ++t) {
        packed[(static_cast<std::size_t>(co) * kk + t) * c_in + ci] =
            w[(static_cast<std::size_t>(co) * c_in + ci) * kk + t];
      }
    }
  }
  return packed;
}

// grad_from(input, output) returns d output / d input.
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary_op(const BasicTensor<T>& x, Fwd fwd, Deriv grad_from) {
  std::span<const T> xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  return make_op_result<T>(x.shape(), std::move(out), {x}, [grad_from](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    std::span<T> g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad_from(in.data[i], self.data[i]) * self.grad[i];
  });
}

template <typename T>
BasicTensor<T> gather_op(const BasicTensor<T>& x, Shape out_shape, std::vector<std::uint32_t> idx) {
  std::span<const T> xs = x.data();
  std::vector<T> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = xs[idx[i]];
  return make_op_result<T>(out_shape, std::move(out), {x}, [idx = std::move(idx)](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    std::span<T> g = in.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

}  // namespace detail

/// Direct 2-D cross-correlation plus bias, lowered to a GEMM over an im2col buffer.
///
/// Each output site sums its taps kernel-row-major with input channel innermost, in the same
/// order on every run.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicConvParams<T>& p) {
  const Shape& is = input.shape();
  const Shape& ws = p.weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (is.c != ws.c) {
    throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(is.c) + " but weight expects " +
                     std::to_string(ws.c));
  }
  if (p.bias.numel() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias length " + std::to_string(p.bias.numel()) +
                     " does not match output channels " + std::to_string(ws.n));
  }
  if (p.stride < 1 || p.padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const int k = ws.h;
  const int oh = detail::conv_out_size(is.h, k, p.stride, p.padding);
  const int ow = detail::conv_out_size(is.w, k, p.stride, p.padding);
  if (oh <= 0 || ow <= 0 || is.n == 0) {
    throw ShapeError("conv2d: zero-sized output for input " + is.str() + " with kernel " + std::to_string(k) +
                     ", stride " + std::to_string(p.stride) + ", padding " + std::to_string(p.padding));
  }

  const int c_out = ws.n;
  const int c_in = ws.c;
  const int kdim = c_in * k * k;
  const int opix = oh * ow;
  const bool pointwise = k == 1 && p.stride == 1 && p.padding == 0;
  const Shape out_shape{is.n, c_out, oh, ow};

  std::vector<T> wp = detail::pack_weight<T>(p.weight.data(), c_out, c_in, k);
  std::span<const T> bias = p.bias.data();
  std::vector<T> out(out_shape.numel());
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * opix);
  std::span<const T> in = input.data();
  for (int n = 0; n < is.n; ++n) {
    T* o = out.data() + static_cast<std::size_t>(n) * c_out * opix;
    for (int co = 0; co < c_out; ++co) {
      std::fill(o + static_cast<std::size_t>(co) * opix, o + static_cast<std::size_t>(co + 1) * opix, bias[co]);
    }
    const T* b = in.data() + static_cast<std::size_t>(n) * is.c * is.plane();
    if (!pointwise) {
      detail::im2col(b, c_in, is.h, is.w, k, p.stride, p.padding, oh, ow, col.data());
      b = col.data();
    }
    detail::gemm<T>(c_out, opix, kdim, wp.data(), kdim, b, opix, o, opix);
  }

  const int stride = p.stride;
  const int pad = p.padding;
  auto grad_fn = [wp = std::move(wp), c_out, c_in, k, kdim, opix, oh, ow, pointwise, stride,
                  pad](detail::Node<T>& self) {
    detail::Node<T>& x = *self.inputs[0];
    detail::Node<T>& wn = *self.inputs[1];
    detail::Node<T>& bn = *self.inputs[2];
    const Shape& xs = x.shape;
    const T* gout = self.grad.data();
    const std::size_t out_per_image = static_cast<std::size_t>(c_out) * opix;
    const std::size_t in_per_image = static_cast<std::size_t>(xs.c) * xs.plane();

    if (bn.requires_grad) {
      std::span<T> gb = bn.ensure_grad();
      for (int n = 0; n < xs.n; ++n) {
        for (int co = 0; co < c_out; ++co) {
          const T* g = gout + n * out_per_image + static_cast<std::size_t>(co) * opix;
          T s = 0;
          for (int i = 0; i < opix; ++i) s += g[i];
          gb[co] += s;
        }
      }
    }

    std::vector<T> colbuf(pointwise ? 0 : static_cast<std::size_t>(kdim) * opix);
    if (wn.requires_grad) {
      std::vector<T> gwp(static_cast<std::size_t>(c_out) * kdim, T(0));
      std::vector<T> rows(static_cast<std::size_t>(opix) * kdim);
      for (int n = 0; n < xs.n; ++n) {
        const T* b = x.data.data() + n * in_per_image;
        if (!pointwise) {
          detail::im2col(b, c_in, xs.h, xs.w, k, stride, pad, oh, ow, colbuf.data());
          b = colbuf.data();
        }
        detail::transpose(b, kdim, opix, rows.data());
        detail::gemm<T>(c_out, kdim, opix, gout + n * out_per_image, opix, rows.data(), kdim, gwp.data(), kdim);
      }
      std::span<T> gw = wn.ensure_grad();
      const int kk = k * k;
      for (int co = 0; co < c_out; ++co) {
        for (int ci = 0; ci < c_in; ++ci) {
          for (int t = 0; t < kk; ++t) {
            gw[(static_cast<std::size_t>(co) * c_in + ci) * kk + t] +=
                gwp[(static_cast<std::size_t>(co) * kk + t) * c_in + ci];
          }
        }
      }
    }

    if (x.requires_grad) {
      std::vector<T> wt(static_cast<std::size_t>(kdim) * c_out);
      detail::transpose(wp.data(), c_out, kdim, wt.data());
      std::span<T> gx = x.ensure_grad();
      for (int n = 0; n < xs.n; ++n) {
        T* gi = gx.data() + n * in_per_image;
        if (pointwise) {
          detail::gemm<T>(kdim, opix, c_out, wt.data(), c_out, gout + n * out_per_image, opix, gi, opix);
        } else {
          std::fill(colbuf.begin(), colbuf.end(), T(0));
          detail::gemm<T>(kdim, opix, c_out, wt.data(), c_out, gout + n * out_per_image, opix, colbuf.data(), opix);
          detail::col2im_add(colbuf.data(), c_in, xs.h, xs.w, k, stride, pad, oh, ow, gi);
        }
      }
    }
  };
  return make_op_result<T>(out_shape, std::move(out), {input, p.weight, p.bias}, std::move(grad_fn));
}

// Subgradient at exactly 0 is 0.
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return detail::unary_op(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return detail::unary_op(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T value) {
  return detail::unary_op(x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

/// Max over k x k windows without padding. Ties go to the first maximal element in row-major
/// window order, which is also where the gradient is routed.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, int kernel, int stride) {
  const Shape& s = x.shape();
  if (kernel < 1 || stride < 1) throw ShapeError("maxpool2d: kernel and stride must be positive");
  if (s.h < kernel || s.w < kernel) {
    throw ShapeError("maxpool2d: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " smaller than kernel " + std::to_string(kernel));
  }
  const int oh = (s.h - kernel) / stride + 1;
  const int ow = (s.w - kernel) / stride + 1;
  const Shape out_shape{s.n, s.c, oh, ow};
  std::vector<T> out(out_shape.numel());
  std::vector<std::uint32_t> argmax(out.size());
  std::span<const T> xs = x.data();
  std::size_t o = 0;
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * s.plane();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(oy * stride) * s.w + ox * stride;
        for (int ky = 0; ky < kernel; ++ky) {
          const std::size_t row = base + static_cast<std::size_t>(oy * stride + ky) * s.w + ox * stride;
          for (int kx = 0; kx < kernel; ++kx) {
            if (xs[row + kx] > xs[best]) best = row + kx;
          }
        }
        out[o] = xs[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return make_op_result<T>(out_shape, std::move(out), {x}, [argmax = std::move(argmax)](detail::Node<T>& self) {
    detail::Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    std::span<T> g = in.ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

namespace detail {

template <typename T>
struct LerpTap {
  int lo = 0;
  int hi = 0;
  T frac = 0;
};

// Half-pixel-centre source coordinate: src = (dst + 0.5) * in/out - 0.5, clamped at 0.
template <typename T>
std::vector<LerpTap<T>> bilinear_taps(int in, int out) {
  std::vector<LerpTap<T>> taps(out);
  const T ratio = static_cast<T>(in) / static_cast<T>(out);
  for (int d = 0; d < out; ++d) {
    T src = (static_cast<T>(d) + T(0.5)) * ratio - T(0.5);
    if (src < T(0)) src = T(0);
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    const int hi = lo < in - 1 ? lo + 1 : lo;
    taps[d] = {lo, hi, src - static_cast<T>(lo)};
  }
  return taps;
}

}  // namespace detail

template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: output size must be positive");
  if (s.h < 1 || s.w < 1) throw ShapeError("upsample_bilinear: empty input " + s.str());
  auto ty = detail::bilinear_taps<T>(s.h, out_h);
  auto tx = detail::bilinear_taps<T>(s.w, out_w);
  const Shape out_shape{s.n, s.c, out_h, out_w};
  std::vector<T> out(out_shape.numel());
  std::span<const T> xs = x.data();
  std::size_t o = 0;
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const T* plane = xs.data() + static_cast<std::size_t>(nc) * s.plane();
    for (int y = 0; y < out_h; ++y) {
      const T ly = ty[y].frac;
      const T* r0 = plane + static_cast<std::size_t>(ty[y].lo) * s.w;
      const T* r1 = plane + static_cast<std::size_t>(ty[y].hi) * s.w;
      for (int xo = 0; xo < out_w; ++xo, ++o) {
        const T lx = tx[xo].frac;
        const int a = tx[xo].lo;
        const int b = tx[xo].hi;
        out[o] = (T(1) - ly) * ((T(1) - lx) * r0[a] + lx * r0[b]) + ly * ((T(1) - lx) * r1[a] + lx * r1[b]);
      }
    }
  }
  auto grad_fn = [ty = std::move(ty), tx = std::move(tx), out_h, out_w](detail::Node<T>& self) {
    detail::Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Shape& is = in.shape;
    std::span<T> g = in.ensure_grad();
    std::size_t o = 0;
    for (int nc = 0; nc < is.n * is.c; ++nc) {
      T* plane = g.data() + static_cast<std::size_t>(nc) * is.plane();
      for (int y = 0; y < out_h; ++y) {
        const T ly = ty[y].frac;
        T* r0 = plane + static_cast<std::size_t>(ty[y].lo) * is.w;
        T* r1 = plane + static_cast<std::size_t>(ty[y].hi) * is.w;
        for (int xo = 0; xo < out_w; ++xo, ++o) {
          const T go = self.grad[o];
          const T lx = tx[xo].frac;
          r0[tx[xo].lo] += (T(1) - ly) * (T(1) - lx) * go;
          r0[tx[xo].hi] += (T(1) - ly) * lx * go;
          r1[tx[xo].lo] += ly * (T(1) - lx) * go;
          r1[tx[xo].hi] += ly * lx * go;
        }
      }
    }
  };
  return make_op_result<T>(out_shape, std::move(out), {x}, std::move(grad_fn));
}

namespace detail {

// For each element of the shuffled output, the flat index of its source element.
inline std::vector<std::uint32_t> shuffle_index(const Shape& in, int r) {
  const int oc = in.c / (r * r);
  const int oh = in.h * r;
  const int ow = in.w * r;
  std::vector<std::uint32_t> idx(in.numel());
  std::size_t o = 0;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < oc; ++c) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x, ++o) {
          const int src_c = c * r * r + (y % r) * r + (x % r);
          idx[o] = static_cast<std::uint32_t>(((static_cast<std::size_t>(n) * in.c + src_c) * in.h + y / r) * in.w +
                                              x / r);
        }
      }
    }
  }
  return idx;
}

}  // namespace detail

/// output(n, c, h*r + i, w*r + j) = input(n, c*r*r + i*r + j, h, w)
template <typename T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, int r) {
  const Shape& s = x.shape();
  if (r < 1) throw ShapeError("pixel_shuffle: factor must be positive");
  if (s.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(s.c) + " not divisible by r^2 = " +
                     std::to_string(r * r));
  }
  return detail::gather_op<T>(x, Shape{s.n, s.c / (r * r), s.h * r, s.w * r}, detail::shuffle_index(s, r));
}

template <typename T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& x, int r) {
  const Shape& s = x.shape();
  if (r < 1) throw ShapeError("pixel_unshuffle: factor must be positive");
  if (s.h % r != 0 || s.w % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + s.str() + " not divisible by " + std::to_string(r));
  }
  const Shape out_shape{s.n, s.c * r * r, s.h / r, s.w / r};
  const std::vector<std::uint32_t> forward = detail::shuffle_index(out_shape, r);
  std::vector<std::uint32_t> idx(forward.size());
  for (std::size_t o = 0; o < forward.size(); ++o) idx[forward[o]] = static_cast<std::uint32_t>(o);
  return detail::gather_op<T>(x, out_shape, std::move(idx));
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::span<const T> as = a.data();
  std::span<const T> bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      std::span<T> g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::span<const T> as = a.data();
  std::span<const T> bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      detail::Node<T>& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      std::span<T> g = in.ensure_grad();
      if (k == 0) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::span<const T> as = a.data();
  std::span<const T> bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    detail::Node<T>& a = *self.inputs[0];
    detail::Node<T>& b = *self.inputs[1];
    if (a.requires_grad) {
      std::span<T> g = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.data[i];
    }
    if (b.requires_grad) {
      std::span<T> g = b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.data[i];
    }
  });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("div", a, b);
  std::span<const T> as = a.data();
  std::span<const T> bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] / bs[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    detail::Node<T>& a = *self.inputs[0];
    detail::Node<T>& b = *self.inputs[1];
    if (a.requires_grad) {
      std::span<T> g = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / b.data[i];
    }
    if (b.requires_grad) {
      std::span<T> g = b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / b.data[i];
    }
  });
}

// Sum of all elements as a (1,1,1,1) tensor, accumulated in double in storage order.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  return make_op_result<T>(Shape{1, 1, 1, 1}, {static_cast<T>(s)}, {x}, [](detail::Node<T>& self) {
    detail::Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    std::span<T> g = in.ensure_grad();
    const T go = self.grad[0];
    for (T& v : g) v += go;
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: part " + s.str() + " does not match batch/spatial dims of " + s0.str());
    }
    channels += s.c;
  }
  const Shape out_shape{s0.n, channels, s0.h, s0.w};
  std::vector<T> out(out_shape.numel());
  const std::size_t plane = s0.plane();
  for (int n = 0; n < s0.n; ++n) {
    std::size_t offset = static_cast<std::size_t>(n) * channels * plane;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      std::span<const T> src = p.data().subspan(static_cast<std::size_t>(n) * len, len);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += len;
    }
  }
  return make_op_result<T>(out_shape, std::move(out), parts, [channels, plane](detail::Node<T>& self) {
    const int batch = self.shape.n;
    std::size_t channel_offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = static_cast<std::size_t>(in->shape.c) * plane;
      if (in->requires_grad) {
        std::span<T> g = in->ensure_grad();
        for (int n = 0; n < batch; ++n) {
          const T* src = self.grad.data() + static_cast<std::size_t>(n) * channels * plane + channel_offset;
          T* dst = g.data() + static_cast<std::size_t>(n) * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      channel_offset += len;
    }
  });
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int start, int count) {
  const Shape& s = x.shape();
  if (start < 0 || count < 1 || start + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + std::to_string(s.c) + " channels");
  }
  const Shape out_shape{s.n, count, s.h, s.w};
  std::vector<std::uint32_t> idx(out_shape.numel());
  std::size_t o = 0;
  const std::size_t len = static_cast<std::size_t>(count) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = (static_cast<std::size_t>(n) * s.c + start) * s.plane();
    for (std::size_t i = 0; i < len; ++i, ++o) idx[o] = static_cast<std::uint32_t>(base + i);
  }
  return detail::gather_op<T>(x, out_shape, std::move(idx));
}

}  // namespace rlfn
