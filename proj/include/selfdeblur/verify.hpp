#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "selfdeblur/gradcheck.hpp"
#include "selfdeblur/solver.hpp"

// Property suites shared by the `verify` command and the test binaries:
// gradient soundness, constraint-by-construction, the brute-force
// convolution oracle, determinism and the learning-rate schedule.

namespace selfdeblur::verify {

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::string detail;
  double seconds = 0;
};

struct Options {
  std::uint64_t seed = 0;
  // Swaps sigmoid for a copy whose backward pass has the wrong sign, so the
  // gradient suite must fail (mutation check for the harness itself).
  bool inject_gradient_fault = false;
  std::size_t simplex_draws = 10000;
};

inline constexpr double kGradTol = 1e-4;
inline constexpr double kGradStep = 1e-5;
inline constexpr double kConvTol = 1e-10;
inline constexpr double kSimplexTol = 1e-6;

// Triple loop over outputs, input channels and taps; independent of the
// im2col/GEMM path used by conv2d.
inline Tensor<double> conv2d_bruteforce(const Tensor<double>& x, const Tensor<double>& w,
                                        std::size_t stride) {
  const std::size_t Cout = w.dim(0), Cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (x.dim(1) - kh) / stride + 1, Wo = (x.dim(2) - kw) / stride + 1;
  Tensor<double> out({Cout, Ho, Wo});
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double s = 0;
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b)
              s += w[((co * Cin + ci) * kh + a) * kw + b] * x(ci, oy * stride + a, ox * stride + b);
        out(co, oy, ox) = s;
      }
  return out;
}

// Sigmoid whose backward pass carries a sign error.
template <class T>
Var<T> faulty_sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  return x.tape->push("faulty_sigmoid", std::move(out), {x.id}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = *t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i] * y[i] * (T(1) - y[i]);
  });
}

inline Tensor<double> random_tensor(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

namespace detail {

using Builder = std::function<Var<double>(Tape<double>&, Var<double>)>;

struct OpCase {
  std::string name;
  Shape point_shape;
  Builder build;  // maps the probed input to the op output
};

// Projects an op output onto fixed random weights so every output entry
// contributes an O(1) term to the scalar being differentiated.
inline Builder projected(Builder op, const Shape& out_shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w = random_tensor(out_shape, rng);
  return [op = std::move(op), w](Tape<double>& t, Var<double> x) { return dot_const(op(t, x), w); };
}

inline Shape probe_shape(const Builder& op, const Shape& in) {
  Tape<double> t(false);
  Rng rng(0);
  return op(t, t.constant(random_tensor(in, rng))).shape();
}

inline std::vector<OpCase> op_cases(const Options& opt) {
  Rng rng(derive_seed(opt.seed, 77));
  auto fixed = [&](const Shape& s) { return random_tensor(s, rng); };
  const Tensor<double> w33 = fixed({3, 2, 3, 3}), w22 = fixed({2, 2, 3, 3}), w11 = fixed({3, 2, 1, 1});
  const Tensor<double> x255 = fixed({2, 5, 5});
  const Tensor<double> lw = fixed({4, 5}), lb = fixed({4}), lx = fixed({5});
  const Tensor<double> gain = fixed({3}), shift = fixed({3}), cn_x = fixed({3, 4, 5});
  const Tensor<double> ker = fixed({3, 3}), img = fixed({2, 6, 7});
  const Tensor<double> other = fixed({1, 3, 4}), target = fixed({2, 4, 5});
  const bool fault = opt.inject_gradient_fault;

  std::vector<OpCase> cases = {
      {"conv2d/input", {2, 5, 5}, [=](Tape<double>& t, Var<double> x) { return conv2d(x, t.constant(w33)); }},
      {"conv2d/weight", {3, 2, 3, 3}, [=](Tape<double>& t, Var<double> w) { return conv2d(t.constant(x255), w); }},
      {"conv2d/stride2-reflect", {2, 6, 6},
       [=](Tape<double>& t, Var<double> x) { return conv2d(x, t.constant(w22), 2, Padding::reflect_same); }},
      {"conv2d/pointwise", {2, 4, 3}, [=](Tape<double>& t, Var<double> x) { return conv2d(x, t.constant(w11)); }},
      {"reflect_pad", {2, 4, 5}, [](Tape<double>&, Var<double> x) { return reflect_pad(x, 2); }},
      {"upsample_bilinear2x", {2, 3, 4}, [](Tape<double>&, Var<double> x) { return upsample_bilinear2x(x); }},
      {"linear/input", {5}, [=](Tape<double>& t, Var<double> x) { return linear(x, t.constant(lw), t.constant(lb)); }},
      {"linear/weight", {4, 5}, [=](Tape<double>& t, Var<double> w) { return linear(t.constant(lx), w, t.constant(lb)); }},
      {"linear/bias", {4}, [=](Tape<double>& t, Var<double> b) { return linear(t.constant(lx), t.constant(lw), b); }},
      {"leaky_relu", {3, 4}, [](Tape<double>&, Var<double> x) { return leaky_relu(x, 0.2); }},
      {"sigmoid", {3, 4},
       [fault](Tape<double>&, Var<double> x) { return fault ? faulty_sigmoid(x) : sigmoid(x); }},
      {"softmax", {5}, [](Tape<double>&, Var<double> x) { return softmax(x); }},
      {"channel_norm/input", {3, 4, 5},
       [=](Tape<double>& t, Var<double> x) { return channel_norm(x, t.constant(gain), t.constant(shift)); }},
      {"channel_norm/gain", {3},
       [=](Tape<double>& t, Var<double> g) { return channel_norm(t.constant(cn_x), g, t.constant(shift)); }},
      {"channel_norm/shift", {3},
       [=](Tape<double>& t, Var<double> s) { return channel_norm(t.constant(cn_x), t.constant(gain), s); }},
      {"concat_channels", {2, 3, 4},
       [=](Tape<double>& t, Var<double> x) { return concat_channels(x, t.constant(other.reshaped({1, 3, 4}))); }},
      {"crop", {2, 5, 6}, [](Tape<double>&, Var<double> x) { return crop(x, 1, 2, 3, 3); }},
      {"add_channel_bias", {3}, [=](Tape<double>& t, Var<double> b) { return add_channel_bias(t.constant(cn_x), b); }},
      {"total_variation", {2, 4, 5}, [](Tape<double>&, Var<double> x) { return total_variation(x, kTvEps); }},
      {"flip2d", {3, 3}, [](Tape<double>&, Var<double> k) { return flip2d(k); }},
      {"depthwise_correlate/image", {2, 6, 7},
       [=](Tape<double>& t, Var<double> x) { return depthwise_correlate(x, t.constant(ker)); }},
      {"depthwise_correlate/kernel", {3, 3},
       [=](Tape<double>& t, Var<double> k) { return depthwise_correlate(t.constant(img), k); }},
      {"blur_forward/kernel", {3, 3}, [=](Tape<double>& t, Var<double> k) { return blur_forward(t.constant(img), k); }},
      {"mse", {2, 4, 5}, [=](Tape<double>&, Var<double> x) { return mse(x, target); }},
      {"square", {6}, [](Tape<double>&, Var<double> x) { return square(x); }},
      {"sum", {6}, [](Tape<double>&, Var<double> x) { return sum(x); }},
      {"scale", {6}, [](Tape<double>&, Var<double> x) { return scale(x, -1.7); }},
      {"reshape", {2, 3}, [](Tape<double>&, Var<double> x) { return reshape(x, {3, 2}); }},
      {"add/fan-out", {6}, [](Tape<double>&, Var<double> x) { return add(x, square(x)); }},
  };
  return cases;
}

// Small generators: same code paths, sizes that finite differences can sweep.
inline GkConfig tiny_gk(GkDepth depth) {
  GkConfig c;
  c.z_dim = 8;
  c.hidden_dim = 12;
  c.kernel_size = 3;
  c.depth = depth;
  return c;
}

inline GxConfig tiny_gx() {
  GxConfig c;
  c.levels = 2;
  c.channels_down = {3, 3};
  c.channels_up = {3, 3};
  c.channels_skip = {2, 2};
  c.input_channels = 2;
  c.output_channels = 1;
  return c;
}

// Perturbs every parameter away from its initial value so that gains and
// shifts are not all 1 and 0.
inline void jitter(ParamStore<double>& store, Rng& rng, double amount) {
  for (auto& [_, p] : store)
    for (auto& v : p.value.data()) v += rng.uniform(-amount, amount);
}

}  // namespace detail

inline SuiteResult gradcheck_suite(const Options& opt) {
  SuiteResult r;
  r.name = "gradcheck";
  std::ostringstream os;
  double worst_all = 0;
  auto note = [&](const std::string& name, double err) {
    worst_all = std::max(worst_all, err);
    if (!(err < kGradTol)) {
      r.passed = false;
      os << name << " rel.err " << err << "; ";
    }
  };
  for (const auto& c : detail::op_cases(opt)) {
    const Shape out = detail::probe_shape(c.build, c.point_shape);
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
      Rng rng(derive_seed(opt.seed, 1000 + static_cast<std::uint64_t>(trial)));
      const auto loss = detail::projected(c.build, out, derive_seed(opt.seed, 2000 + static_cast<std::uint64_t>(trial)));
      worst = std::max(worst, gradcheck(loss, random_tensor(c.point_shape, rng), kGradStep));
    }
    note(c.name, worst);
  }

  for (GkDepth depth : {GkDepth::no_hidden, GkDepth::one_hidden, GkDepth::two_hidden}) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto seed = derive_seed(opt.seed, 3000 + static_cast<std::uint64_t>(trial));
      KernelGenerator<double> gk(detail::tiny_gk(depth), seed);
      Rng rng(seed);
      const Tensor<double> z = sample_z<double>(gk.input_shape(), seed);
      const Tensor<double> w = random_tensor({3, 3}, rng);
      auto fn = [&](Tape<double>& t, ParamStore<double>&) {
        return dot_const(gk.forward(t, t.constant(z)), w);
      };
      note(std::string("G_k/") + to_string(depth), gradcheck_params(fn, gk.params(), kGradStep));
    }
  }

  for (int trial = 0; trial < 2; ++trial) {
    const auto seed = derive_seed(opt.seed, 4000 + static_cast<std::uint64_t>(trial));
    ImageGenerator<double> gx(detail::tiny_gx(), 7, 6, seed);
    Rng rng(seed);
    detail::jitter(gx.params(), rng, 0.3);
    const Tensor<double> z = sample_z<double>(gx.input_shape(), seed);
    const Tensor<double> w = random_tensor(gx.output_shape(), rng);
    auto fn = [&](Tape<double>& t, ParamStore<double>&) {
      return dot_const(gx.forward(t, t.constant(z)), w);
    };
    note("G_x", gradcheck_params(fn, gx.params(), kGradStep));
  }

  {
    // Full objective through both generators.
    const auto seed = derive_seed(opt.seed, 5000);
    ImageGenerator<double> gx(detail::tiny_gx(), 7, 6, seed);
    KernelGenerator<double> gk(detail::tiny_gk(GkDepth::one_hidden), seed + 1);
    Rng rng(seed);
    detail::jitter(gx.params(), rng, 0.3);
    const Tensor<double> zx = sample_z<double>(gx.input_shape(), seed);
    const Tensor<double> zk = sample_z<double>(gk.input_shape(), seed + 1);
    const Tensor<double> y = random_tensor({1, 5, 4}, rng, 0, 1);
    auto fn_x = [&](Tape<double>& t, ParamStore<double>&) {
      return selfdeblur_loss(gx.forward(t, t.constant(zx)), gk.forward(t, t.constant(zk), false), y, 0.01).total;
    };
    auto fn_k = [&](Tape<double>& t, ParamStore<double>&) {
      return selfdeblur_loss(gx.forward(t, t.constant(zx), false), gk.forward(t, t.constant(zk)), y, 0.01).total;
    };
    note("objective/G_x", gradcheck_params(fn_x, gx.params(), kGradStep));
    note("objective/G_k", gradcheck_params(fn_k, gk.params(), kGradStep, 0, seed));
  }
  std::ostringstream summary;
  summary << "worst rel.err " << worst_all << " (tol " << kGradTol << ")";
  if (!r.passed) summary << "; failures: " << os.str();
  r.detail = summary.str();
  return r;
}

// Draws parameters at a spread of scales (up to +-20 per weight) and checks
// the kernel simplex and image range hold without any projection.
inline SuiteResult constraint_suite(const Options& opt) {
  SuiteResult r;
  r.name = "constraints";
  GkConfig gkc;  // full-width G_k
  KernelGenerator<float> gk(gkc, derive_seed(opt.seed, 6000));
  Rng rng(derive_seed(opt.seed, 6001));
  double worst_sum = 0;
  float min_entry = 1;
  for (std::size_t d = 0; d < opt.simplex_draws; ++d) {
    const double scale = std::pow(10.0, rng.uniform(-2.0, 1.3));
    for (auto& [_, p] : gk.params())
      for (auto& v : p.value.data()) v = static_cast<float>(rng.uniform(-scale, scale));
    Tensor<float> z(gk.input_shape());
    for (auto& v : z.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor<float> k = gk.evaluate(z);
    worst_sum = std::max(worst_sum, std::abs(k.sum() - 1.0));
    min_entry = std::min(min_entry, k.min());
  }
  ImageGenerator<float> gx(GxConfig::desk(1), 16, 16, derive_seed(opt.seed, 6002));
  float lo = 1, hi = 0;
  for (int d = 0; d < 200; ++d) {
    const double scale = std::pow(10.0, rng.uniform(-2.0, 1.3));
    for (auto& [_, p] : gx.params())
      for (auto& v : p.value.data()) v = static_cast<float>(rng.uniform(-scale, scale));
    const Tensor<float> x = gx.evaluate(sample_z<float>(gx.input_shape(), static_cast<std::uint64_t>(d)));
    lo = std::min(lo, x.min());
    hi = std::max(hi, x.max());
  }
  r.passed = worst_sum <= kSimplexTol && min_entry >= 0 && lo >= 0 && hi <= 1;
  std::ostringstream os;
  os << opt.simplex_draws << " G_k draws: max |sum-1| " << worst_sum << ", min entry " << min_entry
     << "; 200 G_x draws: range [" << lo << ", " << hi << "]";
  r.detail = os.str();
  return r;
}

inline SuiteResult conv_oracle_suite(const Options& opt) {
  SuiteResult r;
  r.name = "conv-oracle";
  Rng rng(derive_seed(opt.seed, 7000));
  double worst = 0;
  std::size_t shapes = 0;
  for (std::size_t kh = 1; kh <= 3; ++kh)
    for (std::size_t kw = 1; kw <= 3; ++kw)
      for (std::size_t H = kh; H <= 8; ++H)
        for (std::size_t W = kw; W <= 8; ++W)
          for (std::size_t stride : {1u, 2u}) {
            const std::size_t cin = 1 + (H + W) % 3, cout = 1 + (H * W) % 3;
            const Tensor<double> x = random_tensor({cin, H, W}, rng);
            const Tensor<double> w = random_tensor({cout, cin, kh, kw}, rng);
            Tape<double> t(false);
            const Tensor<double> got = conv2d(t.constant(x), t.constant(w), stride).value();
            const Tensor<double> want = conv2d_bruteforce(x, w, stride);
            if (got.shape() != want.shape()) {
              r.passed = false;
              r.detail = "shape mismatch at " + shape_str(x.shape());
              return r;
            }
            for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
            ++shapes;
          }
  r.passed = worst <= kConvTol;
  std::ostringstream os;
  os << shapes << " shapes (H,W <= 8, k <= 3, stride 1/2): max |direct - oracle| " << worst;
  r.detail = os.str();
  return r;
}

inline SuiteResult determinism_suite(const Options& opt) {
  SuiteResult r;
  r.name = "determinism";
  Rng rng(derive_seed(opt.seed, 8000));
  Tensor<float> y({1, 14, 14});
  for (auto& v : y.data()) v = static_cast<float>(rng.uniform());
  RunConfig cfg = RunConfig::desk(1, 3);
  cfg.set_iters(15);
  cfg.gk.hidden_dim = 64;
  cfg.snapshot_iters = {1, 15};
  const auto a = deblur<float>(y, cfg);
  const auto b = deblur<float>(y, cfg);
  bool same = a.kernel == b.kernel && a.image == b.image && a.curve.size() == b.curve.size();
  for (std::size_t i = 0; same && i < a.curve.size(); ++i)
    same = a.curve[i].total == b.curve[i].total && a.curve[i].fidelity == b.curve[i].fidelity;
  r.passed = same;
  r.detail = same ? "two runs with identical seed/config: bitwise-identical curves and outputs"
                  : "runs diverged bitwise";
  return r;
}

inline SuiteResult schedule_suite(const Options&) {
  SuiteResult r;
  r.name = "schedule";
  const RunConfig cfg = RunConfig::paper(1, 7);
  const std::vector<std::pair<int, double>> expect = {
      {1, 0.01}, {1999, 0.01}, {2000, 0.005}, {2500, 0.005}, {3000, 0.0025}, {4000, 0.00125}, {4500, 0.00125}, {5000, 0.00125}};
  std::ostringstream os;
  for (auto [t, lr] : expect)
    if (std::abs(lr_at(t, cfg) - lr) > 1e-15) {
      r.passed = false;
      os << "lr_at(" << t << ")=" << lr_at(t, cfg) << " expected " << lr << "; ";
    }
  if (std::abs(lambda_from_sigma(1e-5) - 1e-6) > 1e-18) {
    r.passed = false;
    os << "lambda_from_sigma(1e-5) != 1e-6; ";
  }
  r.detail = r.passed ? "0.01/0.005/0.0025/0.00125 with inclusive milestones; lambda(1e-5)=1e-6" : os.str();
  return r;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"gradcheck", "constraints", "conv-oracle", "determinism",
                                                 "schedule"};
  return names;
}

inline SuiteResult run_suite(const std::string& name, const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  if (name == "gradcheck") r = gradcheck_suite(opt);
  else if (name == "constraints") r = constraint_suite(opt);
  else if (name == "conv-oracle") r = conv_oracle_suite(opt);
  else if (name == "determinism") r = determinism_suite(opt);
  else if (name == "schedule") r = schedule_suite(opt);
  else throw ConfigError("unknown verification suite: " + name);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace selfdeblur::verify
