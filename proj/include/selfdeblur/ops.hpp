#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "selfdeblur/autodiff.hpp"

// Differentiable operations over Var<T>. Every op computes its forward value
// eagerly and, when any input requires a gradient, records a closure that
// maps the output gradient onto the inputs. Reductions accumulate in double.

namespace selfdeblur {

enum class Padding { valid, reflect_same };

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void add_into(Tensor<T>* dst, const T* src) {
  if (!dst) return;
  T* d = dst->ptr();
  const std::size_t n = dst->size();
  for (std::size_t i = 0; i < n; ++i) d[i] += src[i];
}

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= m) return static_cast<std::size_t>(2 * (m - 1) - i);
  return static_cast<std::size_t>(i);
}

// Unfolds C x H x W into (C*kh*kw) x (Ho*Wo), valid positions only.
template <class T>
void im2col(const T* in, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t Ho, std::size_t Wo, T* col) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        T* row = col + ((c * kh + a) * kw + b) * Ho * Wo;
        for (std::size_t i = 0; i < Ho; ++i) {
          const T* src = in + (c * H + i * stride + a) * W + b;
          T* dst = row + i * Wo;
          if (stride == 1) {
            std::copy(src, src + Wo, dst);
          } else {
            for (std::size_t j = 0; j < Wo; ++j) dst[j] = src[j * stride];
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t Ho, std::size_t Wo, T* in) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        const T* row = col + ((c * kh + a) * kw + b) * Ho * Wo;
        for (std::size_t i = 0; i < Ho; ++i) {
          T* dst = in + (c * H + i * stride + a) * W + b;
          const T* src = row + i * Wo;
          if (stride == 1) {
            for (std::size_t j = 0; j < Wo; ++j) dst[j] += src[j];
          } else {
            for (std::size_t j = 0; j < Wo; ++j) dst[j * stride] += src[j];
          }
        }
      }
}

}  // namespace detail

// Reflection padding by p pixels on every side (edge pixel not repeated).
template <class T>
Var<T> reflect_pad(Var<T> x, std::size_t p) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "reflect_pad");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (p == 0) return x;
  if (p >= H || p >= W)
    throw DimensionError("reflect_pad: pad " + std::to_string(p) + " too large for " +
                         shape_str(xv.shape()));
  const std::size_t Hp = H + 2 * p, Wp = W + 2 * p;
  std::vector<std::size_t> rows(Hp), cols(Wp);
  for (std::size_t i = 0; i < Hp; ++i)
    rows[i] = detail::reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(p), H);
  for (std::size_t j = 0; j < Wp; ++j)
    cols[j] = detail::reflect_index(static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(p), W);
  Tensor<T> out({C, Hp, Wp});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Hp; ++i)
      for (std::size_t j = 0; j < Wp; ++j) out(c, i, j) = xv(c, rows[i], cols[j]);
  return x.tape->push("reflect_pad", std::move(out), {x.id},
                      [=](Tape<T>& t, std::size_t self) {
                        const Tensor<T>& g = t.grad(self);
                        Tensor<T>* gx = t.grad_slot(x.id);
                        for (std::size_t c = 0; c < C; ++c)
                          for (std::size_t i = 0; i < Hp; ++i)
                            for (std::size_t j = 0; j < Wp; ++j) (*gx)(c, rows[i], cols[j]) += g(c, i, j);
                      });
}

// Cross-correlation (weights are not flipped).
//   input  C_in x H x W, weight C_out x C_in x kh x kw
//   output C_out x (floor((H_pad - kh) / stride) + 1) x (...)
template <class T>
Var<T> conv2d(Var<T> input, Var<T> weight, std::size_t stride = 1, Padding pad = Padding::valid) {
  if (stride < 1) throw ContractViolation("conv2d: stride must be >= 1");
  const Tensor<T>& wv = weight.value();
  require_rank(wv, 4, "conv2d weight");
  require_rank(input.value(), 3, "conv2d input");
  const std::size_t Cout = wv.dim(0), Cin = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  if (input.value().dim(0) != Cin)
    throw DimensionError("conv2d: input has " + std::to_string(input.value().dim(0)) +
                         " channels, weight expects " + std::to_string(Cin));
  if (pad == Padding::reflect_same) {
    if (kh % 2 == 0 || kw % 2 == 0 || kh != kw)
      throw ConfigError("conv2d: reflect_same padding needs an odd square kernel");
    input = reflect_pad(input, kh / 2);
  }
  const Tensor<T>& xv = input.value();
  const std::size_t H = xv.dim(1), W = xv.dim(2);
  if (kh > H || kw > W)
    throw DimensionError("conv2d: kernel " + shape_str(wv.shape()) + " larger than input " +
                         shape_str(xv.shape()));
  const std::size_t Ho = (H - kh) / stride + 1, Wo = (W - kw) / stride + 1;
  const std::size_t R = Cin * kh * kw, P = Ho * Wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1;

  std::vector<T> col;
  if (!pointwise) {
    col.resize(R * P);
    detail::im2col(xv.ptr(), Cin, H, W, kh, kw, stride, Ho, Wo, col.data());
  }
  Tensor<T> out({Cout, Ho, Wo});
  {
    using M = detail::RowMat<T>;
    Eigen::Map<const M> Wm(wv.ptr(), Cout, R);
    Eigen::Map<const M> Cm(pointwise ? xv.ptr() : col.data(), R, P);
    Eigen::Map<M> Om(out.ptr(), Cout, P);
    Om.noalias() = Wm * Cm;
  }
  Tape<T>* tape = input.tape;
  return tape->push(
      "conv2d", std::move(out), {input.id, weight.id},
      [=, col = std::move(col)](Tape<T>& t, std::size_t self) {
        using M = detail::RowMat<T>;
        const Tensor<T>& g = t.grad(self);
        Eigen::Map<const M> Gm(g.ptr(), Cout, P);
        const T* colp = pointwise ? t.value(input.id).ptr() : col.data();
        if (Tensor<T>* gw = t.grad_slot(weight.id)) {
          Eigen::Map<const M> Cm(colp, R, P);
          Eigen::Map<M> GWm(gw->ptr(), Cout, R);
          GWm.noalias() += Gm * Cm.transpose();
        }
        if (Tensor<T>* gx = t.grad_slot(input.id)) {
          Eigen::Map<const M> Wm(t.value(weight.id).ptr(), Cout, R);
          if (pointwise) {
            Eigen::Map<M> GXm(gx->ptr(), R, P);
            GXm.noalias() += Wm.transpose() * Gm;
          } else {
            M gcol = Wm.transpose() * Gm;
            detail::col2im_add(gcol.data(), Cin, H, W, kh, kw, stride, Ho, Wo, gx->ptr());
          }
        }
      });
}

// Adds b[c] to every pixel of channel c.
template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> b) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "add_channel_bias");
  const std::size_t C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
  if (b.value().size() != C) throw DimensionError("add_channel_bias: bias length mismatch");
  Tensor<T> out = xv;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < HW; ++k) out[c * HW + k] += b.value()[c];
  return x.tape->push("add_channel_bias", std::move(out), {x.id, b.id},
                      [=](Tape<T>& t, std::size_t self) {
                        const Tensor<T>& g = t.grad(self);
                        detail::add_into(t.grad_slot(x.id), g.ptr());
                        if (Tensor<T>* gb = t.grad_slot(b.id))
                          for (std::size_t c = 0; c < C; ++c) {
                            double s = 0;
                            for (std::size_t k = 0; k < HW; ++k) s += g[c * HW + k];
                            (*gb)[c] += static_cast<T>(s);
                          }
                      });
}

// 2x bilinear upsampling. Output pixel i samples the input at (i + 0.5) / 2 - 0.5,
// clamped to [0, n - 1].
template <class T>
Var<T> upsample_bilinear2x(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "upsample_bilinear2x");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  struct Tap {
    std::size_t i0, i1;
    T w1;
  };
  auto taps = [](std::size_t n) {
    std::vector<Tap> v(2 * n);
    for (std::size_t o = 0; o < 2 * n; ++o) {
      double s = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      const std::size_t i1 = std::min(i0 + 1, n - 1);
      v[o] = {i0, i1, static_cast<T>(s - static_cast<double>(i0))};
    }
    return v;
  };
  const std::vector<Tap> ty = taps(H), tx = taps(W);
  Tensor<T> out({C, 2 * H, 2 * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < 2 * H; ++i) {
      const Tap& a = ty[i];
      for (std::size_t j = 0; j < 2 * W; ++j) {
        const Tap& b = tx[j];
        const T top = xv(c, a.i0, b.i0) * (1 - b.w1) + xv(c, a.i0, b.i1) * b.w1;
        const T bot = xv(c, a.i1, b.i0) * (1 - b.w1) + xv(c, a.i1, b.i1) * b.w1;
        out(c, i, j) = top * (1 - a.w1) + bot * a.w1;
      }
    }
  return x.tape->push("upsample_bilinear2x", std::move(out), {x.id},
                      [=](Tape<T>& t, std::size_t self) {
                        const Tensor<T>& g = t.grad(self);
                        Tensor<T>& gx = *t.grad_slot(x.id);
                        for (std::size_t c = 0; c < C; ++c)
                          for (std::size_t i = 0; i < 2 * H; ++i) {
                            const Tap& a = ty[i];
                            for (std::size_t j = 0; j < 2 * W; ++j) {
                              const Tap& b = tx[j];
                              const T v = g(c, i, j);
                              gx(c, a.i0, b.i0) += v * (1 - a.w1) * (1 - b.w1);
                              gx(c, a.i0, b.i1) += v * (1 - a.w1) * b.w1;
                              gx(c, a.i1, b.i0) += v * a.w1 * (1 - b.w1);
                              gx(c, a.i1, b.i1) += v * a.w1 * b.w1;
                            }
                          }
                      });
}

// output_i = sum_j weight_ij * input_j + bias_i
template <class T>
Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias) {
  const Tensor<T>& wv = weight.value();
  require_rank(wv, 2, "linear weight");
  const std::size_t m = wv.dim(0), n = wv.dim(1);
  if (input.value().size() != n || bias.value().size() != m)
    throw DimensionError("linear: weight " + shape_str(wv.shape()) + ", input " +
                         shape_str(input.value().shape()) + ", bias " +
                         shape_str(bias.value().shape()));
  using M = detail::RowMat<T>;
  using V = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Tensor<T> out({m});
  Eigen::Map<V>(out.ptr(), m).noalias() =
      Eigen::Map<const M>(wv.ptr(), m, n) * Eigen::Map<const V>(input.value().ptr(), n) +
      Eigen::Map<const V>(bias.value().ptr(), m);
  return input.tape->push(
      "linear", std::move(out), {input.id, weight.id, bias.id},
      [=](Tape<T>& t, std::size_t self) {
        Eigen::Map<const V> g(t.grad(self).ptr(), m);
        if (Tensor<T>* gb = t.grad_slot(bias.id)) detail::add_into(gb, t.grad(self).ptr());
        if (Tensor<T>* gw = t.grad_slot(weight.id))
          Eigen::Map<M>(gw->ptr(), m, n).noalias() +=
              g * Eigen::Map<const V>(t.value(input.id).ptr(), n).transpose();
        if (Tensor<T>* gi = t.grad_slot(input.id))
          Eigen::Map<V>(gi->ptr(), n).noalias() +=
              Eigen::Map<const M>(t.value(weight.id).ptr(), m, n).transpose() * g;
      });
}

template <class T>
Var<T> leaky_relu(Var<T> x, double slope) {
  Tensor<T> out = x.value();
  const T s = static_cast<T>(slope);
  for (auto& v : out.data())
    if (v < 0) v *= s;
  return x.tape->push("leaky_relu", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(x.id);
    Tensor<T>& gx = *t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] < 0 ? s * g[i] : g[i];
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  return x.tape->push("sigmoid", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = *t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

// Softmax over all entries taken as one flat vector.
template <class T>
Var<T> softmax(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const T mx = xv.max();
  std::vector<double> e(xv.size());
  double z = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    e[i] = std::exp(static_cast<double>(xv[i] - mx));
    z += e[i];
  }
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = static_cast<T>(e[i] / z);
  return x.tape->push("softmax", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    double dot = 0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += static_cast<double>(g[i]) * y[i];
    Tensor<T>& gx = *t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += static_cast<T>(y[i] * (static_cast<double>(g[i]) - dot));
  });
}

// Per-channel standardization over the spatial extent (biased variance),
// followed by y = gain[c] * xhat + shift[c].
template <class T>
Var<T> channel_norm(Var<T> x, Var<T> gain, Var<T> shift, double eps = 1e-5) {
  if (!(eps > 0)) throw ContractViolation("channel_norm: eps must be positive");
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "channel_norm");
  const std::size_t C = xv.dim(0), N = xv.dim(1) * xv.dim(2);
  if (gain.value().size() != C || shift.value().size() != C)
    throw DimensionError("channel_norm: gain/shift length must equal channel count");
  std::vector<T> inv_std(C);
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T* p = xv.ptr() + c * N;
    double mean = 0;
    for (std::size_t k = 0; k < N; ++k) mean += p[k];
    mean /= static_cast<double>(N);
    double var = 0;
    for (std::size_t k = 0; k < N; ++k) {
      const double d = p[k] - mean;
      var += d * d;
    }
    var /= static_cast<double>(N);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[c] = static_cast<T>(is);
    const T gc = gain.value()[c], bc = shift.value()[c];
    for (std::size_t k = 0; k < N; ++k) {
      const T h = static_cast<T>((p[k] - mean) * is);
      xhat[c * N + k] = h;
      out[c * N + k] = gc * h + bc;
    }
  }
  return x.tape->push(
      "channel_norm", std::move(out), {x.id, gain.id, shift.id},
      [=, xhat = std::move(xhat)](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>* gx = t.grad_slot(x.id);
        Tensor<T>* gg = t.grad_slot(gain.id);
        Tensor<T>* gs = t.grad_slot(shift.id);
        for (std::size_t c = 0; c < C; ++c) {
          const T* gp = g.ptr() + c * N;
          const T* hp = xhat.ptr() + c * N;
          double sg = 0, sgh = 0;
          for (std::size_t k = 0; k < N; ++k) {
            sg += gp[k];
            sgh += static_cast<double>(gp[k]) * hp[k];
          }
          if (gg) (*gg)[c] += static_cast<T>(sgh);
          if (gs) (*gs)[c] += static_cast<T>(sg);
          if (gx) {
            const double mg = sg / static_cast<double>(N), mgh = sgh / static_cast<double>(N);
            const double scale = static_cast<double>(t.value(gain.id)[c]) * inv_std[c];
            T* dst = gx->ptr() + c * N;
            for (std::size_t k = 0; k < N; ++k)
              dst[k] += static_cast<T>(scale * (gp[k] - mg - hp[k] * mgh));
          }
        }
      });
}

// Stacks a (Ca x H x W) over b (Cb x H x W).
template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av, 3, "concat_channels");
  require_rank(bv, 3, "concat_channels");
  if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw DimensionError("concat_channels: spatial mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  const std::size_t na = av.size();
  std::vector<T> d(av.vec());
  d.insert(d.end(), bv.vec().begin(), bv.vec().end());
  Tensor<T> out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)}, std::move(d));
  return a.tape->push("concat_channels", std::move(out), {a.id, b.id},
                      [=](Tape<T>& t, std::size_t self) {
                        const T* g = t.grad(self).ptr();
                        detail::add_into(t.grad_slot(a.id), g);
                        detail::add_into(t.grad_slot(b.id), g + na);
                      });
}

template <class T>
Var<T> crop(Var<T> x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  const Tensor<T>& xv = x.value();
  if (top == 0 && left == 0 && h == xv.dim(1) && w == xv.dim(2)) return x;
  Tensor<T> out = crop3(xv, top, left, h, w);
  const std::size_t C = xv.dim(0);
  return x.tape->push("crop", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = *t.grad_slot(x.id);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) gx(c, top + i, left + j) += g(c, i, j);
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape s) {
  Tensor<T> out = x.value().reshaped(std::move(s));
  return x.tape->push("reshape", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    detail::add_into(t.grad_slot(x.id), t.grad(self).ptr());
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape->push("add", std::move(out), {a.id, b.id}, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).ptr();
    detail::add_into(t.grad_slot(a.id), g);
    detail::add_into(t.grad_slot(b.id), g);
  });
}

template <class T>
Var<T> scale(Var<T> x, double s) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = static_cast<T>(v * s);
  return x.tape->push("scale", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = *t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += static_cast<T>(g[i] * s);
  });
}

template <class T>
Var<T> square(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= v;
  return x.tape->push("square", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(x.id);
    Tensor<T>& gx = *t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2 * xv[i] * g[i];
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  Tensor<T> out({1}, static_cast<T>(x.value().sum()));
  return x.tape->push("sum", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad_slot(x.id)->data()) v += g;
  });
}

// sum_i x_i * w_i against a constant tensor w.
template <class T>
Var<T> dot_const(Var<T> x, const Tensor<T>& w) {
  if (x.value().size() != w.size()) throw DimensionError("dot_const: length mismatch");
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(x.value()[i]) * w[i];
  return x.tape->push("dot_const", Tensor<T>({1}, static_cast<T>(s)), {x.id},
                      [=](Tape<T>& t, std::size_t self) {
                        const T g = t.grad(self)[0];
                        Tensor<T>& gx = *t.grad_slot(x.id);
                        for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
                      });
}

// Mean squared difference against a constant target.
template <class T>
Var<T> mse(Var<T> pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("mse: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  const std::size_t n = target.size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - target[i];
    s += d * d;
  }
  return pred.tape->push("mse", Tensor<T>({1}, static_cast<T>(s / static_cast<double>(n))),
                         {pred.id}, [=](Tape<T>& t, std::size_t self) {
                           const double g = t.grad(self)[0] * 2.0 / static_cast<double>(n);
                           const Tensor<T>& pv = t.value(pred.id);
                           Tensor<T>& gp = *t.grad_slot(pred.id);
                           for (std::size_t i = 0; i < n; ++i)
                             gp[i] += static_cast<T>(g * (static_cast<double>(pv[i]) - target[i]));
                         });
}

// Smoothed isotropic total variation:
//   sum_c sum_(i,j) sqrt(dh^2 + dv^2 + eps^2)
// over i < max(H-1, 1), j < max(W-1, 1) with forward differences dh, dv.
// An axis of extent 1 contributes zero difference.
template <class T>
Var<T> total_variation(Var<T> x, double eps) {
  if (!(eps >= 0)) throw ContractViolation("total_variation: eps must be non-negative");
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "total_variation");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const std::size_t Hi = std::max<std::size_t>(H - 1, 1), Wi = std::max<std::size_t>(W - 1, 1);
  const double e2 = eps * eps;
  double s = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Hi; ++i)
      for (std::size_t j = 0; j < Wi; ++j) {
        const double v = xv(c, i, j);
        const double dh = W > 1 ? xv(c, i, j + 1) - v : 0.0;
        const double dv = H > 1 ? xv(c, i + 1, j) - v : 0.0;
        s += std::sqrt(dh * dh + dv * dv + e2);
      }
  return x.tape->push(
      "total_variation", Tensor<T>({1}, static_cast<T>(s)), {x.id},
      [=](Tape<T>& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor<T>& v = t.value(x.id);
        Tensor<T>& gx = *t.grad_slot(x.id);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < Hi; ++i)
            for (std::size_t j = 0; j < Wi; ++j) {
              const double dh = W > 1 ? v(c, i, j + 1) - v(c, i, j) : 0.0;
              const double dv = H > 1 ? v(c, i + 1, j) - v(c, i, j) : 0.0;
              const double r = std::sqrt(dh * dh + dv * dv + e2);
              if (r == 0) continue;
              const double a = g * dh / r, b = g * dv / r;
              if (W > 1) gx(c, i, j + 1) += static_cast<T>(a);
              if (H > 1) gx(c, i + 1, j) += static_cast<T>(b);
              gx(c, i, j) -= static_cast<T>(a + b);
            }
      });
}

// Reverses both axes of a K x K map.
template <class T>
Var<T> flip2d(Var<T> k) {
  const Tensor<T>& kv = k.value();
  require_rank(kv, 2, "flip2d");
  const std::size_t n = kv.size();
  Tensor<T> out(kv.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = kv[n - 1 - i];
  return k.tape->push("flip2d", std::move(out), {k.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gk = *t.grad_slot(k.id);
    for (std::size_t i = 0; i < n; ++i) gk[n - 1 - i] += g[i];
  });
}

// Valid cross-correlation of every channel of x (C x H x W) with one shared
// kernel k (kh x kw): out[c,i,j] = sum_ab k[a,b] x[c,i+a,j+b].
template <class T>
Var<T> depthwise_correlate(Var<T> x, Var<T> k) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& kv = k.value();
  require_rank(xv, 3, "depthwise_correlate input");
  require_rank(kv, 2, "depthwise_correlate kernel");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2), kh = kv.dim(0), kw = kv.dim(1);
  if (kh > H || kw > W)
    throw DimensionError("depthwise_correlate: kernel " + shape_str(kv.shape()) +
                         " larger than image " + shape_str(xv.shape()));
  const std::size_t Ho = H - kh + 1, Wo = W - kw + 1;
  Tensor<T> out({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        const T w = kv(a, b);
        for (std::size_t i = 0; i < Ho; ++i) {
          const T* src = &xv(c, i + a, b);
          T* dst = &out(c, i, 0);
          for (std::size_t j = 0; j < Wo; ++j) dst[j] += w * src[j];
        }
      }
  return x.tape->push(
      "depthwise_correlate", std::move(out), {x.id, k.id}, [=](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xval = t.value(x.id);
        const Tensor<T>& kval = t.value(k.id);
        Tensor<T>* gx = t.grad_slot(x.id);
        Tensor<T>* gk = t.grad_slot(k.id);
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) {
            const T w = kval(a, b);
            double acc = 0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < Ho; ++i) {
                const T* gp = &g(c, i, 0);
                if (gx) {
                  T* dst = &(*gx)(c, i + a, b);
                  for (std::size_t j = 0; j < Wo; ++j) dst[j] += w * gp[j];
                }
                if (gk) {
                  const T* src = &xval(c, i + a, b);
                  for (std::size_t j = 0; j < Wo; ++j) acc += static_cast<double>(gp[j]) * src[j];
                }
              }
            if (gk) (*gk)(a, b) += static_cast<T>(acc);
          }
      });
}

}  // namespace selfdeblur
