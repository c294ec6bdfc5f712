#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "selfdeblur/image_io.hpp"
#include "selfdeblur/metrics.hpp"

// Structured text outputs. Header blocks are key=value lines ('#' starts a
// comment); tables follow a "[name]" line as CSV with a header row.
//
//   manifest.txt   run settings, seeds, lambda provenance, outputs, then
//                  [loss] iter,fidelity,tv,total with one row per iteration
//   metrics.txt    psnr, ssim, kernel_mse_aligned, error_ratio, shift_dy, shift_dx
//   bench.csv      one row per pair plus a final "mean" row

namespace selfdeblur {

inline constexpr const char* kToolVersion = "0.3.0";

enum class LambdaSource { user, sigma_user, sigma_estimated };

inline const char* to_string(LambdaSource s) {
  switch (s) {
    case LambdaSource::user: return "user";
    case LambdaSource::sigma_user: return "sigma-user";
    case LambdaSource::sigma_estimated: return "sigma-estimated";
  }
  return "?";
}

struct Manifest {
  std::string tool_version = kToolVersion;
  int exit_status = 0;
  std::string status = "ok";
  std::string diagnostic;
  std::string input;
  RunConfig config;
  std::string preset;
  double sigma = std::numeric_limits<double>::quiet_NaN();
  LambdaSource lambda_source = LambdaSource::user;
  std::vector<LossBreakdown> curve;
  LossBreakdown final_loss;
  std::vector<std::string> snapshot_files;
  std::string kernel_file;
  std::string image_file;
  int gradient_evaluations = 0;
  double wall_seconds = 0;
};

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string fmt_metric(double v) {
  if (std::isnan(v)) return "nan";
  return fmt_exact(v);
}

}  // namespace detail

inline std::string format_manifest(const Manifest& m) {
  using detail::fmt_exact;
  const RunConfig& c = m.config;
  std::ostringstream os;
  os << "# selfdeblur run manifest\n";
  os << "tool_version=" << m.tool_version << "\n";
  os << "status=" << m.status << "\n";
  os << "exit_status=" << m.exit_status << "\n";
  if (!m.diagnostic.empty()) os << "diagnostic=" << m.diagnostic << "\n";
  os << "input=" << m.input << "\n";
  os << "preset=" << m.preset << "\n";
  os << "mode=" << to_string(c.mode) << "\n";
  os << "iters=" << c.iters << "\n";
  os << "lr0=" << fmt_exact(c.lr0) << "\n";
  os << "milestones=" << detail::join_ints(c.milestones) << "\n";
  os << "decay=" << fmt_exact(c.decay) << "\n";
  os << "kernel_lr_scale=" << fmt_exact(c.kernel_lr_scale) << "\n";
  os << "perturb_std=" << fmt_exact(c.perturb_std) << "\n";
  os << "snapshot_iters=" << detail::join_ints(c.snapshot_iters) << "\n";
  os << "lambda=" << fmt_exact(c.lambda) << "\n";
  os << "lambda_source=" << to_string(m.lambda_source) << "\n";
  os << "sigma=" << detail::fmt_metric(m.sigma) << "\n";
  os << "kernel_size=" << c.gk.kernel_size << "\n";
  os << "gx.levels=" << c.gx.levels << "\n";
  os << "gx.channels_down=" << detail::join_sizes(c.gx.channels_down) << "\n";
  os << "gx.channels_up=" << detail::join_sizes(c.gx.channels_up) << "\n";
  os << "gx.channels_skip=" << detail::join_sizes(c.gx.channels_skip) << "\n";
  os << "gx.input_channels=" << c.gx.input_channels << "\n";
  os << "gx.output_channels=" << c.gx.output_channels << "\n";
  os << "gx.conv_kernel=" << c.gx.conv_kernel << "\n";
  os << "gx.leaky_slope=" << fmt_exact(c.gx.leaky_slope) << "\n";
  os << "gk.z_dim=" << c.gk.z_dim << "\n";
  os << "gk.hidden_dim=" << c.gk.hidden_dim << "\n";
  os << "gk.depth=" << to_string(c.gk.depth) << "\n";
  os << "gk.leaky_slope=" << fmt_exact(c.gk.leaky_slope) << "\n";
  os << "seed=" << c.seed << "\n";
  os << "seed.gx_params=" << stream_seed(c.seed, SeedStream::gx_params) << "\n";
  os << "seed.gk_params=" << stream_seed(c.seed, SeedStream::gk_params) << "\n";
  os << "seed.z_x=" << stream_seed(c.seed, SeedStream::z_x) << "\n";
  os << "seed.z_k=" << stream_seed(c.seed, SeedStream::z_k) << "\n";
  os << "seed.perturb=" << stream_seed(c.seed, SeedStream::perturb) << "\n";
  os << "kernel_file=" << m.kernel_file << "\n";
  os << "image_file=" << m.image_file << "\n";
  os << "snapshot_files=";
  for (std::size_t i = 0; i < m.snapshot_files.size(); ++i) os << (i ? "," : "") << m.snapshot_files[i];
  os << "\n";
  os << "final.fidelity=" << fmt_exact(m.final_loss.fidelity) << "\n";
  os << "final.tv=" << fmt_exact(m.final_loss.tv) << "\n";
  os << "final.total=" << fmt_exact(m.final_loss.total) << "\n";
  os << "gradient_evaluations=" << m.gradient_evaluations << "\n";
  os << "wall_seconds=" << fmt_exact(m.wall_seconds) << "\n";
  os << "[loss]\niter,fidelity,tv,total\n";
  for (std::size_t i = 0; i < m.curve.size(); ++i)
    os << i + 1 << "," << fmt_exact(m.curve[i].fidelity) << "," << fmt_exact(m.curve[i].tv) << ","
       << fmt_exact(m.curve[i].total) << "\n";
  return os.str();
}

struct ParsedManifest {
  std::map<std::string, std::string> fields;
  std::vector<LossBreakdown> loss;  // lambda filled from the header
};

inline ParsedManifest parse_manifest(const std::string& text, const std::string& source) {
  ParsedManifest p;
  p.fields = parse_key_values(text, source);
  double lambda = 0;
  if (auto it = p.fields.find("lambda"); it != p.fields.end()) {
    try {
      lambda = std::stod(it->second);
    } catch (const std::exception&) {
      throw ParseError(source + ": lambda: not a number");
    }
  }
  std::istringstream in(text);
  std::string line;
  int n = 0;
  bool in_loss = false, header = false;
  while (std::getline(in, line)) {
    ++n;
    if (line == "[loss]") {
      in_loss = true;
      continue;
    }
    if (!in_loss || line.empty()) continue;
    if (!header) {
      if (line != "iter,fidelity,tv,total")
        throw ParseError(source + ":" + std::to_string(n) + ": loss header: unexpected columns");
      header = true;
      continue;
    }
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(source + ":" + std::to_string(n) + ": loss row: not a number");
      }
    }
    if (v.size() != 4 || static_cast<std::size_t>(v[0]) != p.loss.size() + 1)
      throw ParseError(source + ":" + std::to_string(n) + ": loss row: malformed");
    p.loss.push_back({v[1], v[2], lambda, v[3]});
  }
  return p;
}

inline std::string format_metrics(const MetricsReport& r) {
  std::ostringstream os;
  os << "# selfdeblur metrics\n";
  os << "psnr=" << detail::fmt_metric(r.psnr) << "\n";
  os << "ssim=" << detail::fmt_metric(r.ssim) << "\n";
  os << "kernel_mse_aligned=" << detail::fmt_metric(r.kernel_mse_aligned) << "\n";
  os << "error_ratio=" << detail::fmt_metric(r.error_ratio) << "\n";
  os << "shift_dy=" << r.shift.dy << "\n";
  os << "shift_dx=" << r.shift.dx << "\n";
  return os.str();
}

inline MetricsReport parse_metrics(const std::string& text, const std::string& source) {
  const auto kv = parse_key_values(text, source);
  auto num = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(source + ": " + key + ": missing");
    if (it->second == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw ParseError(source + ": " + key + ": not a number");
    }
  };
  MetricsReport r;
  r.psnr = num("psnr");
  r.ssim = num("ssim");
  r.kernel_mse_aligned = num("kernel_mse_aligned");
  r.error_ratio = num("error_ratio");
  r.shift = {static_cast<int>(num("shift_dy")), static_cast<int>(num("shift_dx"))};
  return r;
}

struct BenchEntry {
  MetricsReport metrics;
  double final_loss = 0;
  double seconds = 0;
};

// Rows are pairs, column groups are modes (one group, or joint and
// alternating side by side).
struct BenchTable {
  std::vector<Mode> modes;
  std::vector<std::string> pairs;
  std::vector<std::vector<BenchEntry>> rows;  // rows[pair][mode]

  static constexpr const char* kColumns[] = {"psnr", "ssim", "error_ratio", "kernel_mse", "final_loss",
                                             "seconds"};

  static std::vector<double> values(const BenchEntry& e) {
    return {e.metrics.psnr, e.metrics.ssim, e.metrics.error_ratio, e.metrics.kernel_mse_aligned,
            e.final_loss, e.seconds};
  }

  // Arithmetic mean per column; NaN when any row is NaN.
  std::vector<double> means() const {
    const std::size_t width = modes.size() * std::size(kColumns);
    std::vector<double> acc(width, 0.0);
    for (const auto& row : rows)
      for (std::size_t m = 0; m < modes.size(); ++m) {
        const auto v = values(row[m]);
        for (std::size_t c = 0; c < v.size(); ++c) acc[m * v.size() + c] += v[c];
      }
    for (double& a : acc) a /= static_cast<double>(rows.size());
    return acc;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "pair";
    for (Mode m : modes)
      for (const char* col : kColumns) os << "," << (modes.size() > 1 ? std::string(to_string(m)) + "_" : "") << col;
    os << "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      os << pairs[r];
      for (const auto& e : rows[r])
        for (double v : values(e)) os << "," << detail::fmt_metric(v);
      os << "\n";
    }
    os << "mean";
    for (double v : means()) os << "," << detail::fmt_metric(v);
    os << "\n";
    return os.str();
  }
};

}  // namespace selfdeblur
