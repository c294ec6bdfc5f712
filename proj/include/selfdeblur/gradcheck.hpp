#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "selfdeblur/autodiff.hpp"
#include "selfdeblur/rng.hpp"

namespace selfdeblur {

// Magnitudes below ~1e-6 are under the resolution of central differences at
// step 1e-5 (rounding noise is ~1e-11 for O(1) losses), so the denominator is
// floored there; structurally zero gradients are then compared absolutely.
inline constexpr double kGradFloor = 1e-6;

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kGradFloor});
}

// Largest relative error between the reverse-mode gradient of a scalar
// function and central differences, over every coordinate of `point`.
// `fn(Tape<double>&, Var<double>) -> Var<double>` must return a scalar.
template <class Fn>
double gradcheck(Fn&& fn, const Tensor<double>& point, double step = 1e-5) {
  if (!(step > 0)) throw ContractViolation("gradcheck: step must be positive");
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> x = tape.variable(point);
    Var<double> loss = fn(tape, x);
    tape.backward(loss);
    analytic = tape.grad(x).empty() ? Tensor<double>(point.shape()) : tape.grad(x);
  }
  auto eval = [&](const Tensor<double>& p) {
    Tape<double> tape(false);
    return fn(tape, tape.constant(p)).value()[0];
  };
  double worst = 0;
  Tensor<double> p = point;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + step;
    const double fp = eval(p);
    p[i] = orig - step;
    const double fm = eval(p);
    p[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2 * step)));
  }
  return worst;
}

// Same comparison for every parameter of a store. `fn(Tape<double>&,
// ParamStore<double>&) -> Var<double>` binds the parameters itself. With
// max_coords > 0 only that many coordinates per parameter are probed,
// chosen by `seed`.
template <class Fn>
double gradcheck_params(Fn&& fn, ParamStore<double>& store, double step = 1e-5,
                        std::size_t max_coords = 0, std::uint64_t seed = 0) {
  if (!(step > 0)) throw ContractViolation("gradcheck: step must be positive");
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(fn(tape, store));
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    return fn(tape, store).value()[0];
  };
  Rng rng(seed);
  double worst = 0;
  for (auto& [name, p] : store) {
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (max_coords > 0 && idx.size() > max_coords) {
      for (std::size_t i = 0; i < max_coords; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(idx.size() - i));
        std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
      }
      idx.resize(max_coords);
    }
    for (std::size_t i : idx) {
      const double orig = p.value[i];
      p.value[i] = orig + step;
      const double fp = eval();
      p.value[i] = orig - step;
      const double fm = eval();
      p.value[i] = orig;
      worst = std::max(worst, relative_error(p.grad[i], (fp - fm) / (2 * step)));
    }
  }
  return worst;
}

}  // namespace selfdeblur
