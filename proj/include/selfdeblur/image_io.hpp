#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "selfdeblur/data.hpp"

// File formats:
//   images   binary PGM (P5, 1 channel) / PPM (P6, 3 channels), 8-bit, maxval 255;
//            or the lossless text container "PFMX C H W" followed by C*H*W
//            whitespace-separated decimals in row-major order.
//   kernels  text; line 1 "K K", then K rows of K decimals.

namespace selfdeblur {

namespace fs = std::filesystem;

namespace detail {

inline std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Whitespace tokenizer that tracks line numbers for error messages.
class Tokens {
 public:
  Tokens(const std::string& text, std::string source, bool hash_comments)
      : text_(text), source_(std::move(source)), comments_(hash_comments) {}

  std::string next(const char* field) {
    skip();
    if (pos_ >= text_.size()) fail(field, "unexpected end of file");
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  double number(const char* field) {
    const std::string tok = next(field);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(v)) fail(field, "not a finite number: '" + tok + "'");
    return v;
  }

  std::size_t positive(const char* field) {
    const double v = number(field);
    if (v < 1 || v != std::floor(v) || v > 1e8) fail(field, "expected a positive integer");
    return static_cast<std::size_t>(v);
  }

  bool at_end() {
    skip();
    return pos_ >= text_.size();
  }

  // Consumes exactly one whitespace byte (binary PNM payload separator).
  std::size_t binary_start(const char* field) {
    if (pos_ >= text_.size() || !std::isspace(static_cast<unsigned char>(text_[pos_])))
      fail(field, "missing separator before pixel data");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    const auto line = 1 + std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(std::min(pos_, text_.size())), '\n');
    throw ParseError(source_ + ":" + std::to_string(line) + ": " + field + ": " + why);
  }

 private:
  void skip() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (comments_ && c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& text_;
  std::string source_;
  bool comments_;
  std::size_t pos_ = 0;
};

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << bytes;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

inline std::string fmt_exact(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace detail

template <class T>
Tensor<T> parse_pnm(const std::string& bytes, const std::string& source) {
  detail::Tokens tok(bytes, source, true);
  const std::string magic = tok.next("magic");
  std::size_t C = 0;
  if (magic == "P5") C = 1;
  else if (magic == "P6") C = 3;
  else tok.fail("magic", "expected P5 or P6, got '" + magic + "'");
  const std::size_t W = tok.positive("width");
  const std::size_t H = tok.positive("height");
  const std::size_t maxval = tok.positive("maxval");
  if (maxval != 255) tok.fail("maxval", "only 8-bit images (maxval 255) are supported");
  const std::size_t start = tok.binary_start("header");
  if (bytes.size() < start + C * H * W) tok.fail("pixels", "truncated pixel data");
  Tensor<T> img({C, H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c)
        img(c, i, j) = static_cast<T>(
            static_cast<unsigned char>(bytes[start + (i * W + j) * C + c]) / 255.0);
  return img;
}

template <class T>
Tensor<T> parse_pfmx(const std::string& text, const std::string& source) {
  detail::Tokens tok(text, source, false);
  if (tok.next("magic") != "PFMX") tok.fail("magic", "expected PFMX");
  const std::size_t C = tok.positive("channels");
  const std::size_t H = tok.positive("height");
  const std::size_t W = tok.positive("width");
  Tensor<T> img({C, H, W});
  for (std::size_t k = 0; k < img.size(); ++k)
    img[k] = static_cast<T>(tok.number(("value " + std::to_string(k)).c_str()));
  if (!tok.at_end()) tok.fail("trailer", "extra data after " + std::to_string(img.size()) + " values");
  return img;
}

template <class T>
Tensor<T> read_image(const fs::path& path) {
  const std::string bytes = detail::read_all(path);
  if (bytes.rfind("PFMX", 0) == 0) return parse_pfmx<T>(bytes, path.string());
  return parse_pnm<T>(bytes, path.string());
}

// 8-bit PGM/PPM; values are clipped to [0, 1] and rounded to the nearest level.
template <class T>
void write_pnm(const fs::path& path, const Tensor<T>& img) {
  require_rank(img, 3, "write_pnm");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (C != 1 && C != 3) throw DimensionError("PGM/PPM output needs 1 or 3 channels");
  std::string out = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + C * H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = std::clamp(static_cast<double>(img(c, i, j)), 0.0, 1.0);
        out[header + (i * W + j) * C + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  detail::write_file(path, out);
}

template <class T>
std::string format_pfmx(const Tensor<T>& img) {
  require_rank(img, 3, "format_pfmx");
  std::ostringstream os;
  os << "PFMX " << img.dim(0) << ' ' << img.dim(1) << ' ' << img.dim(2) << '\n';
  const std::size_t W = img.dim(2);
  for (std::size_t k = 0; k < img.size(); ++k)
    os << detail::fmt_exact(static_cast<double>(img[k])) << ((k + 1) % W == 0 ? '\n' : ' ');
  return os.str();
}

template <class T>
void write_pfmx(const fs::path& path, const Tensor<T>& img) {
  detail::write_file(path, format_pfmx(img));
}

// Chooses the format from the extension: .pfmx is lossless, .pgm/.ppm 8-bit.
template <class T>
void write_image(const fs::path& path, const Tensor<T>& img) {
  if (path.extension() == ".pfmx") write_pfmx(path, img);
  else write_pnm(path, img);
}

template <class T>
std::string format_kernel(const Tensor<T>& k) {
  require_rank(k, 2, "format_kernel");
  std::ostringstream os;
  os << k.dim(0) << ' ' << k.dim(1) << '\n';
  for (std::size_t i = 0; i < k.dim(0); ++i)
    for (std::size_t j = 0; j < k.dim(1); ++j)
      os << detail::fmt_exact(static_cast<double>(k(i, j))) << (j + 1 == k.dim(1) ? '\n' : ' ');
  return os.str();
}

template <class T>
void write_kernel(const fs::path& path, const Tensor<T>& k) {
  detail::write_file(path, format_kernel(k));
}

template <class T>
Tensor<T> parse_kernel(const std::string& text, const std::string& source) {
  detail::Tokens tok(text, source, false);
  const std::size_t rows = tok.positive("kernel rows");
  const std::size_t cols = tok.positive("kernel cols");
  if (rows != cols) tok.fail("kernel size", "kernel must be square");
  Tensor<T> k({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      k(i, j) = static_cast<T>(tok.number(("kernel[" + std::to_string(i) + "][" + std::to_string(j) + "]").c_str()));
  if (!tok.at_end()) tok.fail("trailer", "extra data after kernel entries");
  return k;
}

template <class T>
Tensor<T> read_kernel(const fs::path& path) {
  if (!fs::exists(path)) throw ParseError(path.string() + ": kernel file not found");
  return parse_kernel<T>(detail::read_all(path), path.string());
}

template <class T>
bool on_simplex(const Tensor<T>& k, double tol = 1e-6) {
  for (T v : k.data())
    if (!(v >= 0)) return false;
  return std::abs(k.sum() - 1.0) <= tol;
}

// key=value lines, '#' comments.
inline std::map<std::string, std::string> parse_key_values(const std::string& text,
                                                           const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '[') break;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(source + ":" + std::to_string(n) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// A dataset pair directory holds x_gt.<ext>, y.<ext>, k_gt.txt and pair.txt
// (sigma and seed); <ext> is pfmx, pgm or ppm.
template <class T>
void save_pair(const DatasetPair<T>& pair, const fs::path& dir, bool eight_bit = false) {
  fs::create_directories(dir);
  const std::string ext = eight_bit ? (pair.y.dim(0) == 3 ? ".ppm" : ".pgm") : ".pfmx";
  write_image(dir / ("x_gt" + ext), pair.x_gt);
  write_image(dir / ("y" + ext), pair.y);
  write_kernel(dir / "k_gt.txt", pair.k_gt);
  detail::write_file(dir / "pair.txt", "sigma=" + detail::fmt_exact(pair.sigma) +
                                          "\nseed=" + std::to_string(pair.seed) + "\n");
}

inline fs::path find_image(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".pfmx", ".pgm", ".ppm"})
    if (fs::exists(dir / (stem + ext))) return dir / (stem + ext);
  throw ParseError((dir / stem).string() + ": no .pfmx/.pgm/.ppm image found");
}

template <class T>
DatasetPair<T> load_pair(const fs::path& dir) {
  DatasetPair<T> p;
  p.x_gt = read_image<T>(find_image(dir, "x_gt"));
  p.y = read_image<T>(find_image(dir, "y"));
  p.k_gt = read_kernel<T>(dir / "k_gt.txt");
  if (!on_simplex(p.k_gt, 1e-5)) throw ParseError((dir / "k_gt.txt").string() + ": kernel is not on the simplex");
  if (fs::exists(dir / "pair.txt")) {
    const auto kv = parse_key_values(detail::read_all(dir / "pair.txt"), (dir / "pair.txt").string());
    try {
      if (kv.count("sigma")) p.sigma = std::stod(kv.at("sigma"));
      if (kv.count("seed")) p.seed = std::stoull(kv.at("seed"));
    } catch (const std::exception&) {
      throw ParseError((dir / "pair.txt").string() + ": malformed sigma or seed");
    }
  }
  const std::size_t K = p.k_gt.dim(0);
  if (p.x_gt.dim(0) != p.y.dim(0) || p.x_gt.dim(1) != p.y.dim(1) + K - 1 ||
      p.x_gt.dim(2) != p.y.dim(2) + K - 1)
    throw DimensionError(dir.string() + ": y must be x_gt shrunk by K-1 per axis");
  return p;
}

}  // namespace selfdeblur
