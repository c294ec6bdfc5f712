#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "selfdeblur/model.hpp"
#include "selfdeblur/rng.hpp"

namespace selfdeblur {

struct SynthSpec {
  std::size_t kernel_size = 7;
  int walk_steps = 10;
  double step_std = 0.8;  // pixels per step, per axis
  double sigma = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd");
    if (walk_steps < 0) throw ConfigError("walk_steps must be >= 0");
    if (!(step_std >= 0)) throw ConfigError("step_std must be >= 0");
    if (!(sigma >= 0)) throw ConfigError("sigma must be >= 0");
  }
};

template <class T>
struct DatasetPair {
  Tensor<T> x_gt;  // C x H x W sharp image
  Tensor<T> k_gt;  // K x K, on the simplex
  Tensor<T> y;     // C x (H-K+1) x (W-K+1)
  double sigma = 0;
  std::uint64_t seed = 0;
};

template <class T>
Tensor<T> delta_kernel(std::size_t K) {
  Tensor<T> k({K, K});
  k(K / 2, K / 2) = T(1);
  return k;
}

// Motion-like kernel: a seeded Gaussian random walk, densely resampled along
// each step, splatted bilinearly onto the K x K grid after moving its centre
// of mass to the grid centre. Samples that still fall off the grid are
// clamped to the border before the final renormalization.
template <class T>
Tensor<T> gen_kernel_randomwalk(const SynthSpec& spec) {
  spec.validate();
  const std::size_t K = spec.kernel_size;
  constexpr int kSubsteps = 8;
  Rng rng(derive_seed(spec.seed, 101));
  std::vector<double> py{0.0}, px{0.0};
  double cy = 0, cx = 0;
  for (int s = 0; s < spec.walk_steps; ++s) {
    const double ny = cy + rng.normal(0.0, spec.step_std);
    const double nx = cx + rng.normal(0.0, spec.step_std);
    for (int u = 1; u <= kSubsteps; ++u) {
      const double f = static_cast<double>(u) / kSubsteps;
      py.push_back(cy + f * (ny - cy));
      px.push_back(cx + f * (nx - cx));
    }
    cy = ny;
    cx = nx;
  }
  double my = 0, mx = 0;
  for (std::size_t i = 0; i < py.size(); ++i) {
    my += py[i];
    mx += px[i];
  }
  my /= static_cast<double>(py.size());
  mx /= static_cast<double>(px.size());
  const double centre = static_cast<double>(K - 1) / 2.0;
  const double hi = static_cast<double>(K - 1);

  std::vector<double> acc(K * K, 0.0);
  for (std::size_t i = 0; i < py.size(); ++i) {
    const double y = std::clamp(py[i] - my + centre, 0.0, hi);
    const double x = std::clamp(px[i] - mx + centre, 0.0, hi);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, K - 1), x1 = std::min(x0 + 1, K - 1);
    const double wy = y - static_cast<double>(y0), wx = x - static_cast<double>(x0);
    acc[y0 * K + x0] += (1 - wy) * (1 - wx);
    acc[y0 * K + x1] += (1 - wy) * wx;
    acc[y1 * K + x0] += wy * (1 - wx);
    acc[y1 * K + x1] += wy * wx;
  }
  double total = 0;
  for (double v : acc) total += v;
  Tensor<T> k({K, K});
  for (std::size_t i = 0; i < acc.size(); ++i) k[i] = static_cast<T>(acc[i] / total);
  return k;
}

// y = clip(k (*) x + n, 0, 1), n ~ N(0, sigma^2), valid convolution.
template <class T>
DatasetPair<T> synth_blur(const Tensor<T>& x_gt, const Tensor<T>& k_gt, double sigma,
                          std::uint64_t seed) {
  require_rank(x_gt, 3, "synth_blur image");
  require_rank(k_gt, 2, "synth_blur kernel");
  if (!(sigma >= 0)) throw ContractViolation("sigma must be >= 0");
  if (x_gt.dim(1) <= k_gt.dim(0) || x_gt.dim(2) <= k_gt.dim(1))
    throw DimensionError("image " + shape_str(x_gt.shape()) + " must be larger than kernel " +
                         shape_str(k_gt.shape()));
  Tensor<T> y = blur(x_gt, k_gt);
  if (sigma > 0) {
    Rng rng(derive_seed(seed, 202));
    for (auto& v : y.data())
      v = static_cast<T>(std::clamp(static_cast<double>(v) + rng.normal(0.0, sigma), 0.0, 1.0));
  } else {
    for (auto& v : y.data()) v = std::clamp(v, T(0), T(1));
  }
  return {x_gt, k_gt, std::move(y), sigma, seed};
}

// Noise level from the finest diagonal Haar band: each non-overlapping 2x2
// block gives d = (a - b - c + d) / 2, and sigma = median(|d|) / 0.6745.
template <class T>
double estimate_sigma(const Tensor<T>& y) {
  require_rank(y, 3, "estimate_sigma");
  const std::size_t C = y.dim(0), H = y.dim(1), W = y.dim(2);
  if (H < 2 || W < 2) throw ContractViolation("estimate_sigma: image must be at least 2x2");
  std::vector<double> d;
  d.reserve(C * (H / 2) * (W / 2));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i + 1 < H; i += 2)
      for (std::size_t j = 0; j + 1 < W; j += 2) {
        const double v = (static_cast<double>(y(c, i, j)) - y(c, i, j + 1) - y(c, i + 1, j) +
                          y(c, i + 1, j + 1)) / 2.0;
        d.push_back(std::abs(v));
      }
  const std::size_t n = d.size();
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n / 2), d.end());
  double med = d[n / 2];
  if (n % 2 == 0) {
    const double lo = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n / 2));
    med = 0.5 * (med + lo);
  }
  return med / 0.6745;
}

// Deterministic piecewise-smooth test scene: a gentle gradient background
// with overlapping discs, rectangles and a stripe patch, so edges run in many
// orientations. Values stay in [0.05, 0.95].
template <class T>
Tensor<T> synthetic_scene(std::size_t H, std::size_t W, std::uint64_t seed, std::size_t channels = 1) {
  Rng rng(derive_seed(seed, 303));
  Tensor<T> img({channels, H, W});
  const double gy = rng.uniform(-0.3, 0.3), gx = rng.uniform(-0.3, 0.3);
  std::vector<double> base(H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      base[i * W + j] = 0.5 + gy * (static_cast<double>(i) / H - 0.5) + gx * (static_cast<double>(j) / W - 0.5);
  const int shapes = 14;
  for (int s = 0; s < shapes; ++s) {
    const double level = s % 2 ? rng.uniform(0.05, 0.4) : rng.uniform(0.6, 0.95);
    const double cy = rng.uniform(0, H), cx = rng.uniform(0, W);
    const double r = rng.uniform(0.08, 0.22) * static_cast<double>(std::min(H, W));
    const int kind = static_cast<int>(rng.uniform() * 3);
    const double angle = rng.uniform(0, std::numbers::pi);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
        const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
        bool inside = false;
        if (kind == 0) inside = dy * dy + dx * dx < r * r;
        if (kind == 1) inside = std::abs(u) < r && std::abs(v) < 0.6 * r;
        if (kind == 2)
          inside = std::abs(u) < r && std::abs(v) < r &&
                   static_cast<int>(std::floor((u + r) / (0.35 * r))) % 2 == 0;
        if (inside) base[i * W + j] = level;
      }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double tint = channels == 1 ? 0.0 : rng.uniform(-0.05, 0.05);
    for (std::size_t k = 0; k < H * W; ++k)
      img[c * H * W + k] = static_cast<T>(std::clamp(base[k] + tint, 0.05, 0.95));
  }
  return img;
}

}  // namespace selfdeblur
