#pragma once

#include <bdry/errors.hpp>
#include <bdry/metrics.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace bdry {

struct RenderOptions {
  /// Gaussian blur sigma in pixels. Unset means 10 * side / 224 with side
  /// the longer image edge; 0 disables blurring.
  std::optional<double> blur_radius;
  /// Nearest-neighbour upscaling factor of the written image.
  std::size_t scale = 1;
};

/// Float RGB image, channel values in [0, 255], row-major and interleaved.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> rgb;
};

inline double default_blur_radius(std::size_t height, std::size_t width) {
  return 10.0 * static_cast<double>(std::max(height, width)) / 224.0;
}

/// Divides by the largest absolute value; an all-zero map stays zero.
inline std::vector<double> signed_max_normalize(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  std::vector<double> out(v);
  if (m > 0.0) {
    for (double& x : out) x /= m;
  }
  return out;
}

/// Separable Gaussian blur truncated at 3 sigma. Each source pixel spreads
/// its value over the in-bounds part of its kernel, renormalised, so the
/// total is preserved at the borders too.
inline std::vector<double> gaussian_blur(const std::vector<double>& v, std::size_t height, std::size_t width,
                                         double sigma) {
  if (sigma < 0.0) throw PreconditionError("blur radius must be >= 0");
  if (sigma == 0.0) return v;
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  for (std::ptrdiff_t k = -half; k <= half; ++k) {
    kernel[static_cast<std::size_t>(k + half)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  auto pass = [&](const std::vector<double>& src, std::size_t n_lines, std::size_t len, std::size_t line_stride,
                  std::size_t step) {
    std::vector<double> dst(src.size(), 0.0);
    for (std::size_t line = 0; line < n_lines; ++line) {
      for (std::size_t i = 0; i < len; ++i) {
        const double value = src[line * line_stride + i * step];
        if (value == 0.0) continue;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - half);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len) - 1, static_cast<std::ptrdiff_t>(i) + half);
        double total = 0.0;
        for (std::ptrdiff_t j = lo; j <= hi; ++j) total += kernel[static_cast<std::size_t>(j - static_cast<std::ptrdiff_t>(i) + half)];
        for (std::ptrdiff_t j = lo; j <= hi; ++j) {
          const double w = kernel[static_cast<std::size_t>(j - static_cast<std::ptrdiff_t>(i) + half)] / total;
          dst[line * line_stride + static_cast<std::size_t>(j) * step] += w * value;
        }
      }
    }
    return dst;
  };
  const std::vector<double> rows = pass(v, height, width, width, 1);
  return pass(rows, width, height, 1, width);
}

/// Diverging red-blue map on [-1, 1]; 0 is mid grey (128,128,128), +1 is
/// (255,0,0) and -1 is (0,0,255).
inline void diverging_color(double v, double rgb[3]) {
  v = std::clamp(v, -1.0, 1.0);
  if (v >= 0.0) {
    rgb[0] = 128.0 + 127.0 * v;
    rgb[1] = 128.0 * (1.0 - v);
    rgb[2] = 128.0 * (1.0 - v);
  } else {
    rgb[0] = 128.0 * (1.0 + v);
    rgb[1] = 128.0 * (1.0 + v);
    rgb[2] = 128.0 - 127.0 * v;
  }
}

/// Normalise, blur, then colour a pixel attribution.
inline RgbImage render_heatmap(const PixelAttribution& a, const RenderOptions& opt = {}) {
  const double radius = opt.blur_radius.value_or(default_blur_radius(a.height(), a.width()));
  const std::vector<double> v = gaussian_blur(signed_max_normalize(a.values()), a.height(), a.width(), radius);
  RgbImage img{a.height(), a.width(), std::vector<double>(v.size() * 3)};
  for (std::size_t i = 0; i < v.size(); ++i) diverging_color(v[i], &img.rgb[3 * i]);
  return img;
}

/// Binary PPM (P6) bytes, channels rounded to the nearest integer.
inline std::vector<char> encode_ppm(const RgbImage& img, std::size_t scale = 1) {
  if (scale == 0) throw PreconditionError("image scale must be >= 1");
  const std::size_t w = img.width * scale;
  const std::size_t h = img.height * scale;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  out.reserve(out.size() + w * h * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = ((y / scale) * img.width + x / scale) * 3;
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(std::round(img.rgb[src + c]), 0.0, 255.0);
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
      }
    }
  }
  return out;
}

inline void write_ppm(const RgbImage& img, const std::filesystem::path& path, std::size_t scale = 1) {
  const std::vector<char> bytes = encode_ppm(img, scale);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace bdry
