#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "selfdeblur/selfdeblur.hpp"

using namespace selfdeblur;

namespace {

enum Status { kOk = 0, kVerifyFailed = 1, kUsage = 2, kDiverged = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverFlags {
  std::string preset = "paper";
  std::optional<int> iters;
  std::string mode = "joint";
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string snapshot_iters;
  std::optional<double> lambda;
  std::string sigma = "auto";
  double kernel_lr_scale = 0.01;
  std::size_t kernel_size = 7;

  void attach(CLI::App& app, bool with_snapshots) {
    app.add_option("--preset", preset, "paper (full G_x, T=5000) or desk (small G_x, T=1500)")
        ->check(CLI::IsMember({"paper", "desk"}));
    app.add_option("--iters", iters, "iterations; milestones rescale to 40/60/80%")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "master seed");
    app.add_flag("--deterministic", deterministic, "sequential per-run internals (always the case here)");
    app.add_option("--lambda", lambda, "TV weight; overrides --sigma")->check(CLI::NonNegativeNumber);
    app.add_option("--kernel-lr-scale", kernel_lr_scale, "G_k learning rate relative to G_x")
        ->check(CLI::PositiveNumber);
    if (with_snapshots)
      app.add_option("--snapshot-iters", snapshot_iters, "comma-separated iterations to snapshot");
  }

  RunConfig config(std::size_t channels, std::size_t K) const {
    RunConfig c = preset == "desk" ? RunConfig::desk(channels, K) : RunConfig::paper(channels, K);
    if (iters) c.set_iters(*iters);
    if (!snapshot_iters.empty()) {
      c.snapshot_iters.clear();
      std::string tok;
      std::istringstream in(snapshot_iters);
      while (std::getline(in, tok, ',')) {
        try {
          std::size_t used = 0;
          c.snapshot_iters.push_back(std::stoi(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw UsageError("--snapshot-iters: not an integer: '" + tok + "'");
        }
      }
    }
    c.seed = seed;
    c.kernel_lr_scale = kernel_lr_scale;
    return c;
  }
};

struct LambdaChoice {
  double lambda = 0;
  double sigma = std::numeric_limits<double>::quiet_NaN();
  LambdaSource source = LambdaSource::user;
};

LambdaChoice choose_lambda(const SolverFlags& f, const Tensor<float>& y) {
  LambdaChoice l;
  if (f.lambda) {
    l.lambda = *f.lambda;
    return l;
  }
  if (f.sigma == "auto") {
    l.sigma = estimate_sigma(y);
    l.source = LambdaSource::sigma_estimated;
  } else {
    try {
      std::size_t used = 0;
      l.sigma = std::stod(f.sigma, &used);
      if (used != f.sigma.size() || !(l.sigma >= 0)) throw std::invalid_argument(f.sigma);
    } catch (const std::exception&) {
      throw UsageError("--sigma must be 'auto' or a non-negative number, got '" + f.sigma + "'");
    }
    l.source = LambdaSource::sigma_user;
  }
  l.lambda = lambda_from_sigma(l.sigma);
  return l;
}

std::string image_ext(const Tensor<float>& img) { return img.dim(0) == 3 ? ".ppm" : ".pgm"; }

// Writes kernel, image (lossless and 8-bit), snapshots and manifest into dir.
Manifest write_run(const fs::path& dir, const RunReport<float>& r, Manifest m) {
  fs::create_directories(dir);
  m.config = r.config;
  m.curve = r.curve;
  m.final_loss = r.final_loss;
  m.gradient_evaluations = r.gradient_evaluations;
  m.wall_seconds = r.wall_seconds;
  m.kernel_file = "kernel.txt";
  m.image_file = "image.pfmx";
  write_kernel(dir / m.kernel_file, r.kernel);
  write_pfmx(dir / m.image_file, r.image);
  write_pnm(dir / ("image" + image_ext(r.image)), r.image);
  if (!r.snapshots.empty()) fs::create_directories(dir / "snapshots");
  for (const auto& s : r.snapshots) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "t%05d", s.iter);
    const std::string img = std::string("snapshots/") + stem + "_image.pfmx";
    const std::string ker = std::string("snapshots/") + stem + "_kernel.txt";
    write_pfmx(dir / img, s.image);
    write_kernel(dir / ker, s.kernel);
    m.snapshot_files.push_back(img);
    m.snapshot_files.push_back(ker);
  }
  if (r.diverged) {
    m.status = "diverged";
    m.exit_status = kDiverged;
    m.diagnostic = r.diagnostic;
  }
  detail::write_file(dir / "manifest.txt", format_manifest(m));
  return m;
}

ProgressFn progress_printer(bool quiet, int iters) {
  if (quiet) return {};
  return [iters](int t, const LossBreakdown& l) {
    if (t == 1 || t % 100 == 0 || t == iters)
      std::cerr << "iter " << t << "/" << iters << "  fidelity " << l.fidelity << "  tv " << l.tv
                << "  total " << l.total << "\n";
  };
}

int cmd_deblur(const SolverFlags& f, const std::string& input, const std::string& out_dir,
               const std::string& kernel_path, bool quiet) {
  const Tensor<float> y = read_image<float>(input);
  const Mode mode = parse_mode(f.mode);
  std::optional<Tensor<float>> k_fixed;
  std::size_t K = f.kernel_size;
  if (mode == Mode::fixed_kernel) {
    if (kernel_path.empty()) throw UsageError("--mode fixed-kernel needs --kernel");
    k_fixed = read_kernel<float>(kernel_path);
    K = k_fixed->dim(0);
  }
  RunConfig cfg = f.config(y.dim(0), K);
  cfg.mode = mode;
  const LambdaChoice lam = choose_lambda(f, y);
  cfg.lambda = lam.lambda;
  cfg.validate();

  Manifest m;
  m.input = input;
  m.preset = f.preset;
  m.sigma = lam.sigma;
  m.lambda_source = lam.source;
  const auto report = deblur<float>(y, cfg, k_fixed, progress_printer(quiet, cfg.iters));
  m = write_run(out_dir, report, m);
  if (report.diverged) {
    std::cerr << "error: diverged: " << report.diagnostic << "\n";
    return kDiverged;
  }
  std::cout << "final total " << report.final_loss.total << " (fidelity " << report.final_loss.fidelity
            << ", tv " << report.final_loss.tv << ", lambda " << cfg.lambda << ")\n";
  std::cout << "wrote " << (fs::path(out_dir) / "manifest.txt").string() << "\n";
  return kOk;
}

int cmd_synth(const std::string& input, std::size_t scene, std::size_t pairs, const std::string& out_dir,
              SynthSpec spec, bool eight_bit) {
  spec.validate();
  if (input.empty() == (scene == 0)) throw UsageError("give exactly one of --input or --scene");
  if (pairs > 1 && scene == 0) throw UsageError("--pairs needs --scene");
  for (std::size_t p = 0; p < std::max<std::size_t>(pairs, 1); ++p) {
    SynthSpec s = spec;
    s.seed = spec.seed + p;
    const Tensor<float> x = scene ? synthetic_scene<float>(scene, scene, s.seed) : read_image<float>(input);
    const auto k = gen_kernel_randomwalk<float>(s);
    const auto pair = synth_blur(x, k, s.sigma, s.seed);
    char name[32];
    std::snprintf(name, sizeof name, "pair_%03zu", p);
    const fs::path dir = pairs > 1 ? fs::path(out_dir) / name : fs::path(out_dir);
    save_pair(pair, dir, eight_bit);
    std::cout << "wrote " << dir.string() << "\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string image, gt, kernel, gt_kernel, blurred, out_dir;
  std::optional<std::size_t> kernel_size;
  bool error_ratio = false;
};

int cmd_eval(const EvalArgs& a, const SolverFlags& f) {
  const Tensor<float> est = read_image<float>(a.image), gt = read_image<float>(a.gt);
  std::optional<Tensor<float>> k_est, k_gt;
  if (!a.kernel.empty()) k_est = read_kernel<float>(a.kernel);
  if (!a.gt_kernel.empty()) k_gt = read_kernel<float>(a.gt_kernel);
  std::size_t K = 0;
  if (a.kernel_size) K = *a.kernel_size;
  else if (k_gt) K = k_gt->dim(0);
  else if (k_est) K = k_est->dim(0);
  else throw UsageError("give --kernel-size or a kernel to set the border crop");

  MetricsReport r = evaluate_image(est, gt, K);
  if (k_est && k_gt) r.kernel_mse_aligned = kernel_mse_aligned(*k_est, *k_gt);
  if (a.error_ratio) {
    if (!k_est || !k_gt || a.blurred.empty())
      throw UsageError("--error-ratio needs --kernel, --gt-kernel and --blurred");
    const Tensor<float> y = read_image<float>(a.blurred);
    RunConfig cfg = f.config(y.dim(0), k_gt->dim(0));
    cfg.lambda = f.lambda ? *f.lambda : 1e-6;
    r.error_ratio = error_ratio(y, *k_est, *k_gt, gt, cfg);
  }
  const std::string text = format_metrics(r);
  std::cout << text;
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    detail::write_file(fs::path(a.out_dir) / "metrics.txt", text);
  }
  return kOk;
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SELFDEBLUR_THREADS")) {
    try {
      n = std::max<std::size_t>(1, std::stoul(env));
    } catch (const std::exception&) {
      throw UsageError(std::string("SELFDEBLUR_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return std::min(n, jobs);
}

int cmd_bench(const SolverFlags& f, const std::string& input, const std::string& out_dir, bool skip_er,
              bool quiet) {
  std::vector<fs::path> dirs;
  if (fs::is_directory(input))
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_directory() && fs::exists(e.path() / "k_gt.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw UsageError(input + ": no dataset pairs (directories with k_gt.txt)");

  std::vector<Mode> modes;
  if (f.mode == "both") modes = {Mode::joint, Mode::alternating};
  else modes = {parse_mode(f.mode)};
  for (Mode m : modes)
    if (m == Mode::fixed_kernel) throw UsageError("bench runs joint, alternating or both");

  std::vector<DatasetPair<float>> pairs;
  for (const auto& d : dirs) pairs.push_back(load_pair<float>(d));

  BenchTable table;
  table.modes = modes;
  for (const auto& d : dirs) table.pairs.push_back(d.filename().string());
  table.rows.assign(pairs.size(), std::vector<BenchEntry>(modes.size()));

  const std::size_t jobs = pairs.size() * modes.size();
  std::atomic<std::size_t> next{0};
  std::atomic<bool> diverged{false};
  std::mutex io;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t j; (j = next++) < jobs;) {
      const std::size_t p = j / modes.size(), m = j % modes.size();
      try {
        const auto& pair = pairs[p];
        const std::size_t K = pair.k_gt.dim(0);
        RunConfig cfg = f.config(pair.y.dim(0), K);
        cfg.mode = modes[m];
        // Noise-free pairs fall back to the smallest weight used for noise-free inputs.
        cfg.lambda = f.lambda ? *f.lambda : (pair.sigma > 0 ? lambda_from_sigma(pair.sigma) : 1e-6);
        const auto report = deblur<float>(pair.y, cfg);
        Manifest man;
        man.input = dirs[p].string();
        man.preset = f.preset;
        man.sigma = pair.sigma;
        man.lambda_source = f.lambda ? LambdaSource::user : LambdaSource::sigma_user;
        write_run(fs::path(out_dir) / table.pairs[p] / to_string(modes[m]), report, man);
        BenchEntry& e = table.rows[p][m];
        e.seconds = report.wall_seconds;
        e.final_loss = report.final_loss.total;
        if (report.diverged) {
          diverged = true;
          e.metrics.psnr = e.metrics.ssim = e.final_loss = std::numeric_limits<double>::quiet_NaN();
        } else {
          e.metrics = evaluate_image(report.image, pair.x_gt, K);
          e.metrics.kernel_mse_aligned = kernel_mse_aligned(report.kernel, pair.k_gt);
          if (!skip_er) e.metrics.error_ratio = error_ratio(pair.y, report.kernel, pair.k_gt, pair.x_gt, cfg);
        }
        if (!quiet) {
          std::lock_guard lock(io);
          std::cerr << table.pairs[p] << " " << to_string(modes[m]) << ": psnr " << e.metrics.psnr << " ssim "
                    << e.metrics.ssim << " loss " << e.final_loss << " (" << e.seconds << " s)\n";
        }
      } catch (...) {
        std::lock_guard lock(io);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < worker_count(jobs); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  const std::string csv = table.to_csv();
  fs::create_directories(out_dir);
  detail::write_file(fs::path(out_dir) / "bench.csv", csv);
  std::cout << csv;
  return diverged ? kDiverged : kOk;
}

int cmd_verify(const std::vector<std::string>& suites, bool inject_fault, std::uint64_t seed) {
  verify::Options opt;
  opt.seed = seed;
  opt.inject_gradient_fault = inject_fault;
  const auto& names = suites.empty() ? verify::suite_names() : suites;
  bool ok = true;
  for (const auto& name : names) {
    const auto r = verify::run_suite(name, opt);
    ok = ok && r.passed;
    std::printf("%s %-12s %7.2f s  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    std::fflush(stdout);
  }
  return ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blind deconvolution with a pair of untrained generators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SolverFlags f;
  std::string input, out_dir, kernel_path;
  bool quiet = false;

  auto* deblur_cmd = app.add_subcommand("deblur", "estimate kernel and sharp image from one blurry image");
  f.attach(*deblur_cmd, true);
  deblur_cmd->add_option("--input", input, "blurry image (.pgm/.ppm/.pfmx)")->required();
  deblur_cmd->add_option("--out-dir", out_dir, "output directory")->required();
  deblur_cmd->add_option("--kernel-size", f.kernel_size, "odd kernel size K")->check(CLI::PositiveNumber);
  deblur_cmd->add_option("--sigma", f.sigma, "noise level: 'auto' or a number; lambda = 0.1 * sigma");
  deblur_cmd->add_option("--mode", f.mode, "joint, alternating or fixed-kernel")
      ->check(CLI::IsMember({"joint", "alternating", "fixed-kernel"}));
  deblur_cmd->add_option("--kernel", kernel_path, "known kernel for fixed-kernel mode");
  deblur_cmd->add_flag("--quiet", quiet, "no progress output");

  SynthSpec spec;
  std::size_t scene = 0, pairs = 1;
  bool eight_bit = false;
  auto* synth_cmd = app.add_subcommand("synth", "blur a sharp image with a random-walk kernel");
  synth_cmd->add_option("--input", input, "sharp image");
  synth_cmd->add_option("--scene", scene, "use a generated N x N scene instead of --input");
  synth_cmd->add_option("--pairs", pairs, "with --scene: number of pairs (seeds seed..seed+n-1)");
  synth_cmd->add_option("--out-dir", out_dir, "output directory")->required();
  synth_cmd->add_option("--kernel-size", spec.kernel_size, "odd kernel size K");
  synth_cmd->add_option("--walk-steps", spec.walk_steps, "random-walk steps (0 gives a delta)");
  synth_cmd->add_option("--step-std", spec.step_std, "step standard deviation in pixels");
  synth_cmd->add_option("--sigma", spec.sigma, "Gaussian noise level")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--seed", spec.seed, "seed");
  synth_cmd->add_flag("--eight-bit", eight_bit, "write .pgm/.ppm instead of .pfmx");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "score a restoration against ground truth");
  eval_cmd->add_option("--image", ea.image, "restored image")->required();
  eval_cmd->add_option("--gt", ea.gt, "ground-truth image")->required();
  eval_cmd->add_option("--kernel", ea.kernel, "estimated kernel");
  eval_cmd->add_option("--gt-kernel", ea.gt_kernel, "ground-truth kernel");
  eval_cmd->add_option("--blurred", ea.blurred, "blurry observation (for --error-ratio)");
  eval_cmd->add_option("--kernel-size", ea.kernel_size, "K for the border crop (default: from kernels)");
  eval_cmd->add_option("--out-dir", ea.out_dir, "also write metrics.txt here");
  eval_cmd->add_flag("--error-ratio", ea.error_ratio, "run the two fixed-kernel restorations");
  f.attach(*eval_cmd, false);

  bool skip_er = false;
  auto* bench_cmd = app.add_subcommand("bench", "run every pair of a dataset directory");
  bench_cmd->add_option("--input", input, "dataset directory of pair directories")->required();
  bench_cmd->add_option("--out-dir", out_dir, "output directory")->required();
  bench_cmd->add_option("--mode", f.mode, "joint, alternating or both")
      ->check(CLI::IsMember({"joint", "alternating", "both"}));
  bench_cmd->add_flag("--skip-error-ratio", skip_er, "leave the error_ratio column as nan");
  bench_cmd->add_flag("--quiet", quiet, "no progress output");
  f.attach(*bench_cmd, false);

  std::vector<std::string> suites;
  bool inject = false;
  std::uint64_t verify_seed = 0;
  auto* verify_cmd = app.add_subcommand("verify", "run the property suites");
  verify_cmd->add_option("--suite", suites, "suite to run (repeatable)")
      ->check(CLI::IsMember(verify::suite_names()));
  verify_cmd->add_flag("--inject-fault", inject, "flip the sign of one gradient (must fail)");
  verify_cmd->add_option("--seed", verify_seed, "seed for random test points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*deblur_cmd) return cmd_deblur(f, input, out_dir, kernel_path, quiet);
    if (*synth_cmd) return cmd_synth(input, scene, pairs, out_dir, spec, eight_bit);
    if (*eval_cmd) return cmd_eval(ea, f);
    if (*bench_cmd) return cmd_bench(f, input, out_dir, skip_er, quiet);
    if (*verify_cmd) return cmd_verify(suites, inject, verify_seed);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
