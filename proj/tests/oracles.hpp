#pragma once

// Straight-line reference implementations used only by the tests. Each one
// follows the defining formula with plain loops and shares no code with the
// library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "selfdeblur/tensor.hpp"

namespace oracle {

using selfdeblur::Tensor;

inline Tensor<double> random(const selfdeblur::Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = d(eng);
  return t;
}

inline Tensor<double> random_simplex(std::size_t K, std::uint64_t seed) {
  Tensor<double> k = random({K, K}, seed, 0.0, 1.0);
  const double s = k.sum();
  for (auto& v : k.data()) v /= s;
  return k;
}

// Mirror index without repeating the edge: -1 -> 1, n -> n-2.
inline std::size_t mirror(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

// conv2d (cross-correlation). With `same`, the input is mirror-padded by k/2.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride, bool same) {
  const long C = static_cast<long>(x.dim(0)), H = static_cast<long>(x.dim(1)), W = static_cast<long>(x.dim(2));
  const long Co = static_cast<long>(w.dim(0)), kh = static_cast<long>(w.dim(2)), kw = static_cast<long>(w.dim(3));
  const long ph = same ? kh / 2 : 0, pw = same ? kw / 2 : 0;
  const long Hp = H + 2 * ph, Wp = W + 2 * pw;
  const long s = static_cast<long>(stride);
  const long Ho = (Hp - kh) / s + 1, Wo = (Wp - kw) / s + 1;
  Tensor<double> out({static_cast<std::size_t>(Co), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  for (long o = 0; o < Co; ++o)
    for (long i = 0; i < Ho; ++i)
      for (long j = 0; j < Wo; ++j) {
        double acc = 0;
        for (long c = 0; c < C; ++c)
          for (long a = 0; a < kh; ++a)
            for (long b = 0; b < kw; ++b) {
              const std::size_t yi = mirror(i * s + a - ph, H), xj = mirror(j * s + b - pw, W);
              acc += w[static_cast<std::size_t>(((o * C + c) * kh + a) * kw + b)] *
                     x(static_cast<std::size_t>(c), yi, xj);
            }
        out(static_cast<std::size_t>(o), static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
      }
  return out;
}

// Bilinear 2x with half-pixel centres: output i samples input (i + 0.5)/2 - 0.5,
// clamped to the valid range.
inline Tensor<double> upsample2x(const Tensor<double>& x) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<double> out({C, 2 * H, 2 * W});
  auto sample = [](std::size_t o, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
    double s = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, n - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * W; ++j) {
        std::size_t y0, y1, x0, x1;
        double fy, fx;
        sample(i, H, y0, y1, fy);
        sample(j, W, x0, x1, fx);
        out(c, i, j) = (1 - fy) * ((1 - fx) * x(c, y0, x0) + fx * x(c, y0, x1)) +
                       fy * ((1 - fx) * x(c, y1, x0) + fx * x(c, y1, x1));
      }
  return out;
}

// True convolution, valid region: y[i,j] = sum_ab k[a,b] x[i+K-1-a, j+K-1-b].
inline Tensor<double> blur(const Tensor<double>& x, const Tensor<double>& k) {
  const std::size_t C = x.dim(0), K = k.dim(0), Ho = x.dim(1) - K + 1, Wo = x.dim(2) - K + 1;
  Tensor<double> y({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double s = 0;
        for (std::size_t a = 0; a < K; ++a)
          for (std::size_t b = 0; b < K; ++b) s += k(a, b) * x(c, i + K - 1 - a, j + K - 1 - b);
        y(c, i, j) = s;
      }
  return y;
}

// Isotropic smoothed TV over i < max(H-1,1), j < max(W-1,1).
inline double tv(const Tensor<double>& x, double eps) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  double s = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < std::max<std::size_t>(H - 1, 1); ++i)
      for (std::size_t j = 0; j < std::max<std::size_t>(W - 1, 1); ++j) {
        const double dh = W > 1 ? x(c, i, j + 1) - x(c, i, j) : 0;
        const double dv = H > 1 ? x(c, i + 1, j) - x(c, i, j) : 0;
        s += std::sqrt(dh * dh + dv * dv + eps * eps);
      }
  return s;
}

// Mean SSIM computed window by window with a 2-D Gaussian weight table.
inline double ssim(const Tensor<double>& a, const Tensor<double>& b) {
  const int n = 11;
  const double sigma = 1.5, C1 = 1e-4, C2 = 9e-4;
  std::vector<double> w(n * n);
  double ws = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double d2 = (i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0);
      w[static_cast<std::size_t>(i * n + j)] = std::exp(-d2 / (2 * sigma * sigma));
      ws += w[static_cast<std::size_t>(i * n + j)];
    }
  for (double& v : w) v /= ws;
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + n <= H; ++i)
      for (std::size_t j = 0; j + n <= W; ++j) {
        double ma = 0, mb = 0;
        for (int p = 0; p < n; ++p)
          for (int q = 0; q < n; ++q) {
            const double wt = w[static_cast<std::size_t>(p * n + q)];
            ma += wt * a(c, i + p, j + q);
            mb += wt * b(c, i + p, j + q);
          }
        double va = 0, vb = 0, cov = 0;
        for (int p = 0; p < n; ++p)
          for (int q = 0; q < n; ++q) {
            const double wt = w[static_cast<std::size_t>(p * n + q)];
            const double da = a(c, i + p, j + q) - ma, db = b(c, i + p, j + q) - mb;
            va += wt * da * da;
            vb += wt * db * db;
            cov += wt * da * db;
          }
        s += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        ++count;
      }
    total += s / static_cast<double>(count);
  }
  return total / static_cast<double>(C);
}

// Central differences of a scalar function of a tensor.
template <class Fn>
Tensor<double> numeric_grad(Fn&& f, Tensor<double> x, double h = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = x[i];
    x[i] = o + h;
    const double fp = f(x);
    x[i] = o - h;
    const double fm = f(x);
    x[i] = o;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace oracle
