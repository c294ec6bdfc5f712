#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "selfdeblur/solver.hpp"

namespace selfdeblur {

inline constexpr double kPsnrCeiling = 300.0;

struct Shift {
  int dy = 0;
  int dx = 0;
  friend bool operator==(const Shift&, const Shift&) = default;
};

struct MetricsReport {
  double psnr = 0;
  double ssim = 0;
  double kernel_mse_aligned = std::numeric_limits<double>::quiet_NaN();
  double error_ratio = std::numeric_limits<double>::quiet_NaN();
  Shift shift;  // applied to the estimate to line it up with the reference
};

inline std::size_t half_ceil(std::size_t k) { return (k + 1) / 2; }

// Candidate shifts in [-m, m]^2, ordered by L1 length so ties resolve to the
// smallest displacement, with (0, 0) first.
inline std::vector<Shift> shift_candidates(int m) {
  std::vector<Shift> out;
  for (int dy = -m; dy <= m; ++dy)
    for (int dx = -m; dx <= m; ++dx) out.push_back({dy, dx});
  std::stable_sort(out.begin(), out.end(), [](Shift a, Shift b) {
    return std::abs(a.dy) + std::abs(a.dx) < std::abs(b.dy) + std::abs(b.dx);
  });
  return out;
}

// out[c, i, j] = img[c, i - dy, j - dx]; zeros enter from outside.
template <class T>
Tensor<T> shift_image(const Tensor<T>& img, Shift s) {
  require_rank(img, 3, "shift_image");
  const auto H = static_cast<int>(img.dim(1)), W = static_cast<int>(img.dim(2));
  Tensor<T> out(img.shape());
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const int si = i - s.dy, sj = j - s.dx;
        if (si >= 0 && si < H && sj >= 0 && sj < W)
          out(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
              img(c, static_cast<std::size_t>(si), static_cast<std::size_t>(sj));
      }
  return out;
}

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Visits the border-cropped region of ref against est displaced by s.
template <class T, class Fn>
void for_each_aligned(const Tensor<T>& est, const Tensor<T>& ref, Shift s, std::size_t crop, Fn&& fn) {
  const std::size_t C = ref.dim(0), H = ref.dim(1), W = ref.dim(2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = crop; i < H - crop; ++i)
      for (std::size_t j = crop; j < W - crop; ++j)
        fn(static_cast<double>(est(c, static_cast<std::size_t>(static_cast<int>(i) - s.dy),
                                   static_cast<std::size_t>(static_cast<int>(j) - s.dx))),
           static_cast<double>(ref(c, i, j)));
}

template <class T>
void check_crop(const Tensor<T>& ref, std::size_t crop, int max_shift) {
  require_rank(ref, 3, "metric input");
  if (2 * crop >= ref.dim(1) || 2 * crop >= ref.dim(2))
    throw ContractViolation("border crop leaves no pixels");
  if (max_shift < 0 || static_cast<std::size_t>(max_shift) > crop)
    throw ContractViolation("alignment search must stay within the border crop");
}

template <class T>
double aligned_sse(const Tensor<T>& est, const Tensor<T>& ref, Shift s, std::size_t crop) {
  double sse = 0;
  for_each_aligned(est, ref, s, crop, [&](double e, double r) { sse += (e - r) * (e - r); });
  return sse;
}

}  // namespace detail

// Integer shift in [-max_shift, max_shift]^2 that maximizes the normalized
// cross-correlation of the shifted estimate with the reference, measured on
// the reference interior (border of width max_shift removed).
template <class T>
Shift align_shift(const Tensor<T>& est, const Tensor<T>& ref, int max_shift) {
  detail::require_same_shape(est, ref, "align_shift");
  detail::check_crop(ref, static_cast<std::size_t>(std::max(max_shift, 0)), max_shift);
  const auto crop = static_cast<std::size_t>(max_shift);
  Shift best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Shift s : shift_candidates(max_shift)) {
    double se = 0, sr = 0, see = 0, srr = 0, ser = 0, n = 0;
    detail::for_each_aligned(est, ref, s, crop, [&](double e, double r) {
      se += e;
      sr += r;
      see += e * e;
      srr += r * r;
      ser += e * r;
      n += 1;
    });
    const double cov = ser - se * sr / n;
    const double ve = see - se * se / n, vr = srr - sr * sr / n;
    const double score = cov / std::sqrt(std::max(ve * vr, 1e-30));
    if (score > best_score) {
      best_score = score;
      best = s;
    }
  }
  return best;
}

// Shift minimizing the squared error on the cropped region.
template <class T>
Shift best_mse_shift(const Tensor<T>& est, const Tensor<T>& ref, std::size_t crop) {
  Shift best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (Shift s : shift_candidates(static_cast<int>(crop))) {
    const double sse = detail::aligned_sse(est, ref, s, crop);
    if (sse < best_sse) {
      best_sse = sse;
      best = s;
    }
  }
  return best;
}

// Sum of squared differences after border crop and (optionally) the best
// integer shift within the crop width.
template <class T>
double ssd(const Tensor<T>& est, const Tensor<T>& ref, bool align, std::size_t border_crop) {
  detail::require_same_shape(est, ref, "ssd");
  detail::check_crop(ref, border_crop, 0);
  const Shift s = align ? best_mse_shift(est, ref, border_crop) : Shift{};
  return detail::aligned_sse(est, ref, s, border_crop);
}

// 10 log10(1 / MSE), peak 1, capped at kPsnrCeiling.
template <class T>
double psnr(const Tensor<T>& est, const Tensor<T>& ref, bool align = false,
            std::size_t border_crop = 0) {
  detail::require_same_shape(est, ref, "psnr");
  detail::check_crop(ref, border_crop, 0);
  const Shift s = align ? best_mse_shift(est, ref, border_crop) : Shift{};
  const double n = static_cast<double>(ref.dim(0) * (ref.dim(1) - 2 * border_crop) *
                                       (ref.dim(2) - 2 * border_crop));
  const double mse = detail::aligned_sse(est, ref, s, border_crop) / n;
  if (mse <= 0) return kPsnrCeiling;
  return std::min(kPsnrCeiling, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double s = 0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

// Separable valid-mode filtering of an H x W map.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t H, std::size_t W,
                                        const std::vector<double>& g) {
  const std::size_t n = g.size(), Ho = H - n + 1, Wo = W - n + 1;
  std::vector<double> tmp(H * Wo, 0.0), out(Ho * Wo, 0.0);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      double s = 0;
      for (std::size_t b = 0; b < n; ++b) s += g[b] * img[i * W + j + b];
      tmp[i * Wo + j] = s;
    }
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      double s = 0;
      for (std::size_t a = 0; a < n; ++a) s += g[a] * tmp[(i + a) * Wo + j];
      out[i * Wo + j] = s;
    }
  return out;
}

}  // namespace detail

// Mean SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1,
// evaluated at valid window positions. Multi-channel inputs average the
// per-channel scores.
template <class T>
double ssim(const Tensor<T>& est, const Tensor<T>& ref) {
  detail::require_same_shape(est, ref, "ssim");
  require_rank(ref, 3, "ssim");
  constexpr int kWin = 11;
  const std::size_t C = ref.dim(0), H = ref.dim(1), W = ref.dim(2);
  if (H < kWin || W < kWin) throw ContractViolation("ssim: image smaller than the 11x11 window");
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const auto g = detail::gaussian_window(kWin, 1.5);
  double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> a(H * W), b(H * W), aa(H * W), bb(H * W), ab(H * W);
    for (std::size_t k = 0; k < H * W; ++k) {
      a[k] = est[c * H * W + k];
      b[k] = ref[c * H * W + k];
      aa[k] = a[k] * a[k];
      bb[k] = b[k] * b[k];
      ab[k] = a[k] * b[k];
    }
    const auto ma = detail::filter_valid(a, H, W, g), mb = detail::filter_valid(b, H, W, g),
               maa = detail::filter_valid(aa, H, W, g), mbb = detail::filter_valid(bb, H, W, g),
               mab = detail::filter_valid(ab, H, W, g);
    double s = 0;
    for (std::size_t k = 0; k < ma.size(); ++k) {
      const double va = maa[k] - ma[k] * ma[k], vb = mbb[k] - mb[k] * mb[k],
                   cov = mab[k] - ma[k] * mb[k];
      s += ((2 * ma[k] * mb[k] + C1) * (2 * cov + C2)) /
           ((ma[k] * ma[k] + mb[k] * mb[k] + C1) * (va + vb + C2));
    }
    total += s / static_cast<double>(ma.size());
  }
  return total / static_cast<double>(C);
}

// Zero-pads a K x K kernel, centred, to n x n.
template <class T>
Tensor<T> pad_kernel(const Tensor<T>& k, std::size_t n) {
  require_rank(k, 2, "pad_kernel");
  if (k.dim(0) > n || k.dim(1) > n) throw DimensionError("pad_kernel: kernel larger than target");
  Tensor<T> out({n, n});
  const std::size_t oy = (n - k.dim(0)) / 2, ox = (n - k.dim(1)) / 2;
  for (std::size_t i = 0; i < k.dim(0); ++i)
    for (std::size_t j = 0; j < k.dim(1); ++j) out(oy + i, ox + j) = k(i, j);
  return out;
}

// MSE between kernels after shifting k_est (zeros rolled in) by the integer
// offset in [-K/2, K/2]^2 that maximizes its cross-correlation with k_gt.
template <class T>
double kernel_mse_aligned(const Tensor<T>& k_est, const Tensor<T>& k_gt, Shift* used = nullptr) {
  require_rank(k_est, 2, "kernel_mse_aligned");
  require_rank(k_gt, 2, "kernel_mse_aligned");
  const std::size_t n = std::max({k_est.dim(0), k_est.dim(1), k_gt.dim(0), k_gt.dim(1)});
  const Tensor<T> a = pad_kernel(k_est, n).reshaped({1, n, n});
  const Tensor<T> b = pad_kernel(k_gt, n).reshaped({1, n, n});
  Shift best;
  double best_corr = -std::numeric_limits<double>::infinity();
  for (Shift s : shift_candidates(static_cast<int>(n / 2))) {
    const Tensor<T> as = shift_image(a, s);
    double corr = 0;
    for (std::size_t i = 0; i < as.size(); ++i) corr += static_cast<double>(as[i]) * b[i];
    if (corr > best_corr + 1e-15) {
      best_corr = corr;
      best = s;
    }
  }
  if (used) *used = best;
  const Tensor<T> as = shift_image(a, best);
  double sse = 0;
  for (std::size_t i = 0; i < as.size(); ++i) {
    const double d = static_cast<double>(as[i]) - b[i];
    sse += d * d;
  }
  return sse / static_cast<double>(as.size());
}

// PSNR and SSIM of an estimate against ground truth under the benchmark
// protocol: border crop of ceil(K/2) and the best integer shift within it.
template <class T>
MetricsReport evaluate_image(const Tensor<T>& est, const Tensor<T>& ref, std::size_t kernel_size) {
  detail::require_same_shape(est, ref, "evaluate_image");
  const std::size_t crop = half_ceil(kernel_size);
  detail::check_crop(ref, crop, 0);
  MetricsReport r;
  r.shift = best_mse_shift(est, ref, crop);
  r.psnr = psnr(est, ref, true, crop);
  const std::size_t h = ref.dim(1) - 2 * crop, w = ref.dim(2) - 2 * crop;
  const Tensor<T> e = crop3(shift_image(est, r.shift), crop, crop, h, w);
  const Tensor<T> g = crop3(ref, crop, crop, h, w);
  r.ssim = ssim(e, g);
  return r;
}

// SSD of the fixed-kernel restoration under k_est divided by the SSD of the
// same restoration under k_gt. Both sides use the same configuration and
// seed, so k_est == k_gt yields exactly 1.
template <class T>
double error_ratio(const Tensor<T>& y, const Tensor<T>& k_est, const Tensor<T>& k_gt,
                   const Tensor<T>& x_gt, const RunConfig& cfg) {
  const std::size_t K = std::max({k_est.dim(0), k_est.dim(1), k_gt.dim(0), k_gt.dim(1)});
  const Tensor<T> ke = pad_kernel(k_est, K), kg = pad_kernel(k_gt, K);
  if (x_gt.dim(1) != y.dim(1) + K - 1 || x_gt.dim(2) != y.dim(2) + K - 1)
    throw DimensionError("error_ratio: ground truth must exceed the observation by K-1");
  RunConfig c = cfg;
  c.mode = Mode::fixed_kernel;
  c.gk.kernel_size = K;
  c.snapshot_iters.clear();
  const std::size_t crop = half_ceil(K);
  const auto restored_est = deblur<T>(y, c, ke);
  const auto restored_gt = deblur<T>(y, c, kg);
  const double num = ssd(restored_est.image, x_gt, true, crop);
  const double den = ssd(restored_gt.image, x_gt, true, crop);
  if (!(den > 0)) throw ContractViolation("error_ratio: zero SSD under the ground-truth kernel");
  return num / den;
}

}  // namespace selfdeblur
