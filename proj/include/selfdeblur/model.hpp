#pragma once

#include <string>

#include "selfdeblur/generators.hpp"
#include "selfdeblur/ops.hpp"

namespace selfdeblur {

inline constexpr double kTvEps = 1e-6;

struct LossBreakdown {
  double fidelity = 0;  // mean squared residual
  double tv = 0;        // smoothed TV divided by the latent pixel count
  double lambda = 0;
  double total = 0;     // fidelity + lambda * tv
};

inline double lambda_from_sigma(double sigma) {
  if (!(sigma >= 0)) throw ContractViolation("lambda_from_sigma: sigma must be >= 0");
  return 0.1 * sigma;
}

// y = k (*) x with a true (flipped) convolution, valid region only:
// a C x (H+K-1) x (W+K-1) latent image gives a C x H x W observation.
template <class T>
Var<T> blur_forward(Var<T> x, Var<T> k) {
  return depthwise_correlate(x, flip2d(k));
}

template <class T>
Tensor<T> blur(const Tensor<T>& x, const Tensor<T>& k) {
  Tape<T> tape(false);
  return blur_forward(tape.constant(x), tape.constant(k)).value();
}

template <class T>
double tv_value(const Tensor<T>& x, double eps = kTvEps) {
  Tape<T> tape(false);
  return total_variation(tape.constant(x), eps).value()[0];
}

template <class T>
struct Objective {
  Var<T> total;
  LossBreakdown parts;
};

// ||k (*) x - y||^2 / n + lambda * TV(x) / |x|
template <class T>
Objective<T> selfdeblur_loss(Var<T> x, Var<T> k, const Tensor<T>& y, double lambda,
                             double tv_eps = kTvEps) {
  if (!(lambda >= 0)) throw ContractViolation("lambda must be >= 0");
  const Shape& xs = x.shape();
  const Shape& ks = k.shape();
  if (xs.size() != 3 || y.rank() != 3 || ks.size() != 2 || xs[0] != y.dim(0) ||
      xs[1] != y.dim(1) + ks[0] - 1 || xs[2] != y.dim(2) + ks[1] - 1)
    throw DimensionError("latent image " + shape_str(xs) + " must exceed observation " +
                         shape_str(y.shape()) + " by K-1 for kernel " + shape_str(ks));
  Var<T> fidelity = mse(blur_forward(x, k), y);
  const double n = static_cast<double>(x.value().size());
  Var<T> tv = scale(total_variation(x, tv_eps), 1.0 / n);
  Var<T> total = add(fidelity, scale(tv, lambda));
  LossBreakdown parts;
  parts.fidelity = fidelity.value()[0];
  parts.tv = tv.value()[0];
  parts.lambda = lambda;
  parts.total = parts.fidelity + parts.lambda * parts.tv;
  return {total, parts};
}

}  // namespace selfdeblur
