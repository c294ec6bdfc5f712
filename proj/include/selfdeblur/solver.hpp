#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfdeblur/generators.hpp"
#include "selfdeblur/model.hpp"

namespace selfdeblur {

enum class Mode { joint, alternating, fixed_kernel };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::joint: return "joint";
    case Mode::alternating: return "alternating";
    case Mode::fixed_kernel: return "fixed-kernel";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "joint") return Mode::joint;
  if (s == "alternating") return Mode::alternating;
  if (s == "fixed-kernel" || s == "fixed_kernel") return Mode::fixed_kernel;
  throw ConfigError("unknown mode: " + s);
}

// Bias-corrected ADAM moments for one parameter set.
template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, Tensor<T>> m, v;
};

// One ADAM update of every parameter in `params` from the gradients stored
// alongside them. A non-finite gradient aborts before anything is modified.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& st, double lr) {
  for (const auto& [name, p] : params)
    if (!p.grad.all_finite()) throw DivergenceError("non-finite gradient in parameter " + name);
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (auto& [name, p] : params) {
    auto [mit, mnew] = st.m.try_emplace(name, p.value.shape());
    auto [vit, vnew] = st.v.try_emplace(name, p.value.shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    const std::size_t n = p.value.size();
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      const double vi = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + st.eps));
    }
  }
}

struct RunConfig {
  int iters = 5000;
  double lr0 = 0.01;
  std::vector<int> milestones{2000, 3000, 4000};
  double decay = 0.5;
  Mode mode = Mode::joint;
  std::uint64_t seed = 0;
  std::vector<int> snapshot_iters;
  double lambda = 0;
  double perturb_std = 0.001;
  double kernel_lr_scale = 0.01;  // G_k learning rate relative to G_x
  GxConfig gx = GxConfig::full(1);
  GkConfig gk;

  // Milestones at the same fractions (0.4, 0.6, 0.8) of a shorter or longer run.
  static std::vector<int> scaled_milestones(int iters) {
    std::vector<int> out;
    for (int m : {2000, 3000, 4000}) {
      const int s = static_cast<int>(std::lround(static_cast<double>(m) * iters / 5000.0));
      if (s >= 1 && s < iters && (out.empty() || s > out.back())) out.push_back(s);
    }
    return out;
  }

  static RunConfig paper(std::size_t channels, std::size_t kernel_size) {
    RunConfig c;
    c.gx = GxConfig::full(channels);
    c.gk.kernel_size = kernel_size;
    c.snapshot_iters = {1, 20, 100, 600, 2000, 5000};
    return c;
  }

  static RunConfig desk(std::size_t channels, std::size_t kernel_size) {
    RunConfig c;
    c.iters = 1500;
    c.milestones = scaled_milestones(c.iters);
    c.gx = GxConfig::desk(channels);
    c.gk.kernel_size = kernel_size;
    return c;
  }

  void set_iters(int t) {
    iters = t;
    milestones = scaled_milestones(t);
    std::erase_if(snapshot_iters, [t](int s) { return s > t; });
  }

  void validate() const {
    if (iters < 1) throw ConfigError("iters must be >= 1");
    if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
    if (!(decay > 0)) throw ConfigError("decay must be > 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] >= iters) throw ConfigError("milestones must be < iters");
      if (i && milestones[i] <= milestones[i - 1])
        throw ConfigError("milestones must be strictly increasing");
    }
    for (int s : snapshot_iters)
      if (s < 1 || s > iters) throw ConfigError("snapshot iteration out of range 1..iters");
    if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
    if (!(perturb_std >= 0)) throw ConfigError("perturb_std must be >= 0");
    gx.validate();
    gk.validate();
  }
};

// lr0 * decay^(number of milestones <= t); a milestone applies on the
// iteration it is reached.
inline double lr_at(int t, const RunConfig& cfg) {
  const auto drops = std::count_if(cfg.milestones.begin(), cfg.milestones.end(),
                                   [t](int m) { return m <= t; });
  return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(drops));
}

template <class T>
struct Snapshot {
  int iter = 0;
  Tensor<T> kernel;
  Tensor<T> image;
};

template <class T>
struct RunReport {
  Mode mode = Mode::joint;
  RunConfig config;
  std::vector<LossBreakdown> curve;  // one entry per iteration
  Tensor<T> kernel;                  // G_k(z_k) after the last update
  Tensor<T> image;                   // G_x(z_x0) after the last update
  std::vector<Snapshot<T>> snapshots;
  LossBreakdown final_loss;  // objective at the final outputs, unperturbed inputs
  int gradient_evaluations = 0;
  double wall_seconds = 0;
  bool diverged = false;
  std::string diagnostic;
};

using ProgressFn = std::function<void(int iter, const LossBreakdown&)>;

namespace detail {

template <class T>
bool finite(const LossBreakdown& l) {
  return std::isfinite(l.fidelity) && std::isfinite(l.tv) && std::isfinite(l.total);
}

template <class T>
class RunLoop {
 public:
  RunLoop(const Tensor<T>& y, const RunConfig& cfg, Mode mode, ImageGenerator<T>& gx)
      : y_(y), cfg_(cfg), gx_(gx), start_(std::chrono::steady_clock::now()) {
    cfg_.validate();
    require_rank(y, 3, "observation");
    report_.mode = mode;
    report_.config = cfg;
    report_.config.mode = mode;
    report_.curve.reserve(static_cast<std::size_t>(cfg.iters));
    noise_ = make_noise_inputs<T>(gx.input_shape(), {cfg.gk.z_dim}, cfg.seed, cfg.perturb_std);
    perturb_rng_.emplace(stream_seed(cfg.seed, SeedStream::perturb));
  }

  Tensor<T> next_zx() { return noise_.perturbed_zx(*perturb_rng_); }
  const NoiseInputs<T>& noise() const { return noise_; }

  bool snapshot_due(int t) const {
    return std::find(cfg_.snapshot_iters.begin(), cfg_.snapshot_iters.end(), t) !=
           cfg_.snapshot_iters.end();
  }

  void record(int t, const LossBreakdown& l, const ProgressFn& progress) {
    if (!finite<T>(l))
      throw DivergenceError("non-finite loss at iteration " + std::to_string(t));
    report_.curve.push_back(l);
    if (progress) progress(t, l);
  }

  void snapshot(int t, const Tensor<T>& kernel) {
    if (snapshot_due(t)) report_.snapshots.push_back({t, kernel, gx_.evaluate(noise_.z_x)});
  }

  RunReport<T> finish(const Tensor<T>& kernel) {
    report_.kernel = kernel;
    report_.image = gx_.evaluate(noise_.z_x);
    if (report_.image.shape()[1] == y_.dim(1) + kernel.dim(0) - 1) {
      Tape<T> tape(false);
      report_.final_loss =
          selfdeblur_loss(tape.constant(report_.image), tape.constant(kernel), y_, cfg_.lambda).parts;
    }
    report_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return std::move(report_);
  }

  RunReport<T> abort(const std::string& why, const Tensor<T>& kernel) {
    report_.diverged = true;
    report_.diagnostic = why;
    report_.kernel = kernel;
    report_.image = gx_.evaluate(noise_.z_x);
    report_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return std::move(report_);
  }

  RunReport<T>& report() { return report_; }

 private:
  const Tensor<T>& y_;
  const RunConfig& cfg_;
  ImageGenerator<T>& gx_;
  std::chrono::steady_clock::time_point start_;
  NoiseInputs<T> noise_;
  std::optional<Rng> perturb_rng_;
  RunReport<T> report_;
};

}  // namespace detail

// Both networks from one loss evaluation per iteration.
template <class T>
RunReport<T> run_joint(const Tensor<T>& y, const RunConfig& cfg, ImageGenerator<T>& gx,
                       KernelGenerator<T>& gk, const ProgressFn& progress = {}) {
  detail::RunLoop<T> loop(y, cfg, Mode::joint, gx);
  AdamState<T> adam_x, adam_k;
  const Tensor<T>& zk = loop.noise().z_k;
  try {
    for (int t = 1; t <= cfg.iters; ++t) {
      const double lr = lr_at(t, cfg);
      Tape<T> tape;
      Var<T> x = gx.forward(tape, tape.constant(loop.next_zx()));
      Var<T> k = gk.forward(tape, tape.constant(zk));
      auto obj = selfdeblur_loss(x, k, y, cfg.lambda);
      loop.record(t, obj.parts, progress);
      gx.params().zero_grad();
      gk.params().zero_grad();
      tape.backward(obj.total);
      ++loop.report().gradient_evaluations;
      adam_step(gx.params(), adam_x, lr);
      adam_step(gk.params(), adam_k, lr * cfg.kernel_lr_scale);
      if (loop.snapshot_due(t)) loop.snapshot(t, gk.evaluate(zk));
    }
  } catch (const DivergenceError& e) {
    return loop.abort(e.what(), gk.evaluate(zk));
  }
  return loop.finish(gk.evaluate(zk));
}

// G_k step with G_x frozen, then a fresh evaluation and a G_x step with G_k
// frozen: two loss evaluations per iteration.
template <class T>
RunReport<T> run_alternating(const Tensor<T>& y, const RunConfig& cfg, ImageGenerator<T>& gx,
                             KernelGenerator<T>& gk, const ProgressFn& progress = {}) {
  detail::RunLoop<T> loop(y, cfg, Mode::alternating, gx);
  AdamState<T> adam_x, adam_k;
  const Tensor<T>& zk = loop.noise().z_k;
  try {
    for (int t = 1; t <= cfg.iters; ++t) {
      const double lr = lr_at(t, cfg);
      const Tensor<T> zx = loop.next_zx();
      {
        Tape<T> tape;
        Var<T> x = gx.forward(tape, tape.constant(zx), false);
        Var<T> k = gk.forward(tape, tape.constant(zk), true);
        auto obj = selfdeblur_loss(x, k, y, cfg.lambda);
        if (!detail::finite<T>(obj.parts))
          throw DivergenceError("non-finite loss at iteration " + std::to_string(t));
        gk.params().zero_grad();
        tape.backward(obj.total);
        ++loop.report().gradient_evaluations;
        adam_step(gk.params(), adam_k, lr * cfg.kernel_lr_scale);
      }
      Tape<T> tape;
      Var<T> k = gk.forward(tape, tape.constant(zk), false);
      Var<T> x = gx.forward(tape, tape.constant(zx), true);
      auto obj = selfdeblur_loss(x, k, y, cfg.lambda);
      loop.record(t, obj.parts, progress);
      gx.params().zero_grad();
      tape.backward(obj.total);
      ++loop.report().gradient_evaluations;
      adam_step(gx.params(), adam_x, lr);
      if (loop.snapshot_due(t)) loop.snapshot(t, gk.evaluate(zk));
    }
  } catch (const DivergenceError& e) {
    return loop.abort(e.what(), gk.evaluate(zk));
  }
  return loop.finish(gk.evaluate(zk));
}

// Non-blind restoration: G_x alone against a frozen kernel.
template <class T>
RunReport<T> run_fixed_kernel(const Tensor<T>& y, const Tensor<T>& k_fixed, const RunConfig& cfg,
                              ImageGenerator<T>& gx, const ProgressFn& progress = {}) {
  require_rank(k_fixed, 2, "fixed kernel");
  bool simplex = std::abs(k_fixed.sum() - 1.0) <= 1e-5;
  for (T v : k_fixed.data()) simplex = simplex && v >= 0;
  if (!simplex) throw ContractViolation("fixed kernel must be non-negative and sum to 1");
  detail::RunLoop<T> loop(y, cfg, Mode::fixed_kernel, gx);
  AdamState<T> adam_x;
  try {
    for (int t = 1; t <= cfg.iters; ++t) {
      const double lr = lr_at(t, cfg);
      Tape<T> tape;
      Var<T> x = gx.forward(tape, tape.constant(loop.next_zx()));
      auto obj = selfdeblur_loss(x, tape.constant(k_fixed), y, cfg.lambda);
      loop.record(t, obj.parts, progress);
      gx.params().zero_grad();
      tape.backward(obj.total);
      ++loop.report().gradient_evaluations;
      adam_step(gx.params(), adam_x, lr);
      loop.snapshot(t, k_fixed);
    }
  } catch (const DivergenceError& e) {
    return loop.abort(e.what(), k_fixed);
  }
  return loop.finish(k_fixed);
}

// Builds both generators from cfg.seed and runs cfg.mode. Fixed-kernel mode
// needs `k_fixed`.
template <class T>
RunReport<T> deblur(const Tensor<T>& y, const RunConfig& cfg,
                    const std::optional<Tensor<T>>& k_fixed = std::nullopt,
                    const ProgressFn& progress = {}) {
  require_rank(y, 3, "observation");
  const std::size_t K = cfg.mode == Mode::fixed_kernel && k_fixed ? k_fixed->dim(0) : cfg.gk.kernel_size;
  RunConfig c = cfg;
  c.gk.kernel_size = K;
  c.gx.output_channels = y.dim(0);
  auto gx = build_gx<T>(c.gx, y.dim(1) + K - 1, y.dim(2) + K - 1,
                        stream_seed(c.seed, SeedStream::gx_params));
  if (c.mode == Mode::fixed_kernel) {
    if (!k_fixed) throw ConfigError("fixed-kernel mode requires a kernel");
    return run_fixed_kernel(y, *k_fixed, c, gx, progress);
  }
  auto gk = build_gk<T>(c.gk, stream_seed(c.seed, SeedStream::gk_params));
  return c.mode == Mode::joint ? run_joint(y, c, gx, gk, progress)
                               : run_alternating(y, c, gx, gk, progress);
}

}  // namespace selfdeblur
