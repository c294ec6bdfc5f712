#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "selfdeblur/autodiff.hpp"
#include "selfdeblur/ops.hpp"
#include "selfdeblur/rng.hpp"

namespace selfdeblur {

// Skip-connected encoder/decoder that emits the latent image.
struct GxConfig {
  std::size_t levels = 5;
  std::vector<std::size_t> channels_down{128, 128, 128, 128, 128};
  std::vector<std::size_t> channels_up{128, 128, 128, 128, 128};
  std::vector<std::size_t> channels_skip{16, 16, 16, 16, 16};
  std::size_t input_channels = 8;
  std::size_t output_channels = 1;
  std::size_t conv_kernel = 3;
  double leaky_slope = 0.2;

  static GxConfig full(std::size_t image_channels) {
    GxConfig c;
    c.output_channels = image_channels;
    return c;
  }

  // Minutes-scale CPU variant.
  static GxConfig desk(std::size_t image_channels) {
    GxConfig c;
    c.levels = 3;
    c.channels_down = {16, 16, 16};
    c.channels_up = {16, 16, 16};
    c.channels_skip = {4, 4, 4};
    c.output_channels = image_channels;
    return c;
  }

  void validate() const {
    if (levels < 1) throw ConfigError("GxConfig: levels must be >= 1");
    if (channels_down.size() != levels || channels_up.size() != levels ||
        channels_skip.size() != levels)
      throw ConfigError("GxConfig: per-level channel lists must have `levels` entries");
    for (const auto* v : {&channels_down, &channels_up, &channels_skip})
      for (std::size_t c : *v)
        if (c < 1) throw ConfigError("GxConfig: channel counts must be >= 1");
    if (input_channels < 1 || output_channels < 1)
      throw ConfigError("GxConfig: input/output channels must be >= 1");
    if (conv_kernel % 2 == 0) throw ConfigError("GxConfig: conv_kernel must be odd");
  }
};

enum class GkDepth { no_hidden, one_hidden, two_hidden };

inline const char* to_string(GkDepth d) {
  switch (d) {
    case GkDepth::no_hidden: return "no_hidden";
    case GkDepth::one_hidden: return "one_hidden";
    case GkDepth::two_hidden: return "two_hidden";
  }
  return "?";
}

inline GkDepth parse_gk_depth(const std::string& s) {
  if (s == "no_hidden") return GkDepth::no_hidden;
  if (s == "one_hidden") return GkDepth::one_hidden;
  if (s == "two_hidden") return GkDepth::two_hidden;
  throw ConfigError("unknown G_k depth variant: " + s);
}

// Fully-connected kernel generator with a terminal softmax.
struct GkConfig {
  std::size_t z_dim = 200;
  std::size_t hidden_dim = 1000;
  std::size_t kernel_size = 7;
  GkDepth depth = GkDepth::one_hidden;
  double leaky_slope = 0.2;

  void validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw ConfigError("GkConfig: kernel_size must be odd and >= 1");
    if (z_dim < 1 || hidden_dim < 1) throw ConfigError("GkConfig: dimensions must be >= 1");
  }
};

namespace detail {

// Uniform on [-b, b] with b = sqrt(1 / fan_in).
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double b = std::sqrt(1.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-b, b));
  return t;
}

}  // namespace detail

template <class T>
class ImageGenerator {
 public:
  ImageGenerator(GxConfig cfg, std::size_t out_h, std::size_t out_w, std::uint64_t seed)
      : cfg_(std::move(cfg)), out_h_(out_h), out_w_(out_w) {
    cfg_.validate();
    if (out_h < 1 || out_w < 1) throw ConfigError("ImageGenerator: empty output size");
    const std::size_t m = std::size_t{1} << cfg_.levels;
    in_h_ = (out_h + m - 1) / m * m;
    in_w_ = (out_w + m - 1) / m * m;
    if (in_h_ / m <= cfg_.conv_kernel / 2 || in_w_ / m <= cfg_.conv_kernel / 2)
      throw ConfigError("ImageGenerator: output " + std::to_string(out_h) + "x" +
                        std::to_string(out_w) + " is too small for " +
                        std::to_string(cfg_.levels) + " levels");
    Rng rng(seed);
    const std::size_t k = cfg_.conv_kernel;
    for (std::size_t i = 0; i < cfg_.levels; ++i) {
      const std::size_t in_ch = i == 0 ? cfg_.input_channels : cfg_.channels_down[i - 1];
      const std::size_t down = cfg_.channels_down[i], up = cfg_.channels_up[i],
                        skip = cfg_.channels_skip[i];
      const std::size_t deeper = i + 1 < cfg_.levels ? cfg_.channels_up[i + 1] : down;
      add_conv(level(i) + "skip", skip, in_ch, 1, rng);
      add_conv(level(i) + "down1", down, in_ch, k, rng);
      add_conv(level(i) + "down2", down, down, k, rng);
      add_norm(level(i) + "cat", skip + deeper);
      add_conv(level(i) + "up1", up, skip + deeper, k, rng);
      add_conv(level(i) + "up2", up, up, 1, rng);
    }
    const std::size_t c0 = cfg_.channels_up[0];
    params_.add("head.w", detail::fan_in_uniform<T>({cfg_.output_channels, c0, 1, 1}, c0, rng));
    params_.add("head.b", detail::fan_in_uniform<T>({cfg_.output_channels}, c0, rng));
  }

  const GxConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  Shape input_shape() const { return {cfg_.input_channels, in_h_, in_w_}; }
  Shape output_shape() const { return {cfg_.output_channels, out_h_, out_w_}; }

  // Output entries lie in [0, 1] for any finite parameters.
  Var<T> forward(Tape<T>& tape, Var<T> z, bool trainable = true) {
    if (z.shape() != input_shape())
      throw DimensionError("G_x input must be " + shape_str(input_shape()) + ", got " +
                           shape_str(z.shape()));
    Var<T> h = level_forward(tape, z, 0, trainable);
    h = conv2d(h, tape.param(params_, "head.w", trainable));
    h = add_channel_bias(h, tape.param(params_, "head.b", trainable));
    h = crop(h, (in_h_ - out_h_) / 2, (in_w_ - out_w_) / 2, out_h_, out_w_);
    return sigmoid(h);
  }

  Tensor<T> evaluate(const Tensor<T>& z) {
    Tape<T> tape(false);
    return forward(tape, tape.constant(z), false).value();
  }

 private:
  static std::string level(std::size_t i) { return "L" + std::to_string(i) + "."; }

  void add_conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
    params_.add(name + ".w", detail::fan_in_uniform<T>({cout, cin, k, k}, cin * k * k, rng));
    add_norm(name, cout);
  }

  void add_norm(const std::string& name, std::size_t c) {
    params_.add(name + ".gain", Tensor<T>({c}, T(1)));
    params_.add(name + ".shift", Tensor<T>({c}, T(0)));
  }

  Var<T> norm_act(Tape<T>& tape, Var<T> x, const std::string& name, bool trainable) {
    x = channel_norm(x, tape.param(params_, name + ".gain", trainable),
                     tape.param(params_, name + ".shift", trainable));
    return leaky_relu(x, cfg_.leaky_slope);
  }

  Var<T> conv_block(Tape<T>& tape, Var<T> x, const std::string& name, std::size_t stride,
                    bool trainable) {
    const Var<T> w = tape.param(params_, name + ".w", trainable);
    const Padding pad = w.value().dim(2) > 1 ? Padding::reflect_same : Padding::valid;
    return norm_act(tape, conv2d(x, w, stride, pad), name, trainable);
  }

  Var<T> level_forward(Tape<T>& tape, Var<T> x, std::size_t i, bool trainable) {
    const std::string L = level(i);
    Var<T> skip = conv_block(tape, x, L + "skip", 1, trainable);
    Var<T> deep = conv_block(tape, x, L + "down1", 2, trainable);
    deep = conv_block(tape, deep, L + "down2", 1, trainable);
    if (i + 1 < cfg_.levels) deep = level_forward(tape, deep, i + 1, trainable);
    Var<T> cat = concat_channels(skip, upsample_bilinear2x(deep));
    cat = channel_norm(cat, tape.param(params_, L + "cat.gain", trainable),
                       tape.param(params_, L + "cat.shift", trainable));
    Var<T> out = conv_block(tape, cat, L + "up1", 1, trainable);
    return conv_block(tape, out, L + "up2", 1, trainable);
  }

  GxConfig cfg_;
  std::size_t out_h_, out_w_, in_h_ = 0, in_w_ = 0;
  ParamStore<T> params_;
};

template <class T>
class KernelGenerator {
 public:
  KernelGenerator(GkConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    std::size_t width = cfg_.z_dim;
    std::size_t hidden_layers = cfg_.depth == GkDepth::no_hidden    ? 0
                                : cfg_.depth == GkDepth::one_hidden ? 1
                                                                    : 2;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      add_fc("fc" + std::to_string(l), cfg_.hidden_dim, width, rng);
      width = cfg_.hidden_dim;
      hidden_.push_back("fc" + std::to_string(l));
    }
    add_fc("out", cfg_.kernel_size * cfg_.kernel_size, width, rng);
  }

  const GkConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  Shape input_shape() const { return {cfg_.z_dim}; }

  // K x K, non-negative, sums to one.
  Var<T> forward(Tape<T>& tape, Var<T> z, bool trainable = true) {
    if (z.value().size() != cfg_.z_dim)
      throw DimensionError("G_k input must have " + std::to_string(cfg_.z_dim) + " entries");
    Var<T> h = z;
    for (const auto& name : hidden_)
      h = leaky_relu(fc(tape, h, name, trainable), cfg_.leaky_slope);
    h = softmax(fc(tape, h, "out", trainable));
    return reshape(h, {cfg_.kernel_size, cfg_.kernel_size});
  }

  Tensor<T> evaluate(const Tensor<T>& z) {
    Tape<T> tape(false);
    return forward(tape, tape.constant(z), false).value();
  }

 private:
  void add_fc(const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
    params_.add(name + ".w", detail::fan_in_uniform<T>({out, in}, in, rng));
    params_.add(name + ".b", detail::fan_in_uniform<T>({out}, in, rng));
  }

  Var<T> fc(Tape<T>& tape, Var<T> x, const std::string& name, bool trainable) {
    return linear(x, tape.param(params_, name + ".w", trainable),
                  tape.param(params_, name + ".b", trainable));
  }

  GkConfig cfg_;
  std::vector<std::string> hidden_;
  ParamStore<T> params_;
};

template <class T>
ImageGenerator<T> build_gx(const GxConfig& cfg, std::size_t out_h, std::size_t out_w,
                           std::uint64_t seed) {
  return ImageGenerator<T>(cfg, out_h, out_w, seed);
}

template <class T>
KernelGenerator<T> build_gk(const GkConfig& cfg, std::uint64_t seed) {
  return KernelGenerator<T>(cfg, seed);
}

// Seed streams of one run; each gets an independent generator.
enum class SeedStream : std::uint64_t { gx_params = 1, gk_params = 2, z_x = 3, z_k = 4, perturb = 5 };

inline std::uint64_t stream_seed(std::uint64_t seed, SeedStream s) {
  return derive_seed(seed, static_cast<std::uint64_t>(s));
}

// Fixed network inputs of one run plus the per-iteration perturbation of z_x.
template <class T>
struct NoiseInputs {
  Tensor<T> z_x;
  Tensor<T> z_k;
  std::uint64_t seed = 0;
  double perturb_std = 0.001;

  // z_x + eps, eps ~ N(0, perturb_std^2) i.i.d.
  Tensor<T> perturbed_zx(Rng& rng) const {
    Tensor<T> z = z_x;
    if (perturb_std > 0)
      for (auto& v : z.data()) v = static_cast<T>(v + rng.normal(0.0, perturb_std));
    return z;
  }
};

template <class T>
NoiseInputs<T> make_noise_inputs(const Shape& zx_shape, const Shape& zk_shape, std::uint64_t seed,
                                 double perturb_std) {
  if (perturb_std < 0) throw ContractViolation("perturb_std must be >= 0");
  return {sample_z<T>(zx_shape, stream_seed(seed, SeedStream::z_x)),
          sample_z<T>(zk_shape, stream_seed(seed, SeedStream::z_k)), seed, perturb_std};
}

}  // namespace selfdeblur
