#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smokeseg/errors.hpp"
#include "smokeseg/tensor.hpp"

// 8-bit raster types and their tensor conversions. Pixel data is interleaved
// row-major; tensor ingestion divides by 255 so network inputs live on [0,1].

namespace smokeseg {

namespace detail {

inline void check_dims(int width, int height, const char* what) {
  if (width < 1 || height < 1) {
    throw ShapeError(std::string(what) + ": dimensions must be >= 1, got " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
}

// round half up, the single quantization rule used across the pipeline
inline std::uint8_t quantize8(double v) {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

}  // namespace detail

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // RGB interleaved

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h) {
    detail::check_dims(w, h, "RgbImage");
    data.assign(static_cast<std::size_t>(w) * h * 3, 0);
  }

  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // RGBA interleaved; alpha means value/255

  RgbaImage() = default;
  RgbaImage(int w, int h) : width(w), height(h) {
    detail::check_dims(w, h, "RgbaImage");
    data.assign(static_cast<std::size_t>(w) * h * 4, 0);
  }

  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 4 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 4 + c];
  }
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // strictly 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h) {
    detail::check_dims(w, h, "BinaryMask");
    data.assign(static_cast<std::size_t>(w) * h, 0);
  }

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// ---- tensor conversions ----

template <typename F>
inline Tensor<F> to_tensor(const RgbImage& img) {
  Tensor<F> t(Shape(1, 3, img.height, img.width));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        t.at(0, c, y, x) = static_cast<F>(img.at(x, y, c) / 255.0);
      }
    }
  }
  return t;
}

template <typename F>
inline Tensor<F> to_tensor(const BinaryMask& m) {
  Tensor<F> t(Shape(1, 1, m.height, m.width));
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) t.at(0, 0, y, x) = static_cast<F>(m.at(x, y));
  }
  return t;
}

/// One (1,h,w)-channel slice of a prediction tensor as an 8-bit grayscale
/// buffer (probabilities scaled by 255, round half up).
template <typename F>
inline std::vector<std::uint8_t> tensor_to_gray8(const Tensor<F>& t, int n = 0, int c = 0) {
  const int h = t.shape.h(), w = t.shape.w();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out[static_cast<std::size_t>(y) * w + x] =
          detail::quantize8(255.0 * static_cast<double>(t.at(n, c, y, x)));
    }
  }
  return out;
}

// ---- geometry ----

/// Largest centered sub-rectangle of `img` with the aspect ratio of
/// target_w:target_h.
inline RgbImage center_crop_to_aspect(const RgbImage& img, int target_w, int target_h) {
  detail::check_dims(target_w, target_h, "center_crop_to_aspect");
  long long cw = img.width, ch = img.height;
  if (static_cast<long long>(img.width) * target_h > static_cast<long long>(img.height) * target_w) {
    cw = std::max(1LL, static_cast<long long>(img.height) * target_w / target_h);
  } else {
    ch = std::max(1LL, static_cast<long long>(img.width) * target_h / target_w);
  }
  const int x0 = static_cast<int>((img.width - cw) / 2);
  const int y0 = static_cast<int>((img.height - ch) / 2);
  RgbImage out(static_cast<int>(cw), static_cast<int>(ch));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
    }
  }
  return out;
}

/// Bilinear resampling (half-pixel centers), computed in double and quantized
/// once.
inline RgbImage resize_bilinear(const RgbImage& img, int new_w, int new_h) {
  detail::check_dims(new_w, new_h, "resize_bilinear");
  if (new_w == img.width && new_h == img.height) return img;
  RgbImage out(new_w, new_h);
  const double sx = static_cast<double>(img.width) / new_w;
  const double sy = static_cast<double>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
        const double bot = (1.0 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
        out.at(x, y, c) = detail::quantize8((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

/// Crop-then-resize used to fit arbitrary backgrounds to a smoke image's
/// dimensions without distorting aspect.
inline RgbImage fit_to(const RgbImage& img, int target_w, int target_h) {
  return resize_bilinear(center_crop_to_aspect(img, target_w, target_h), target_w, target_h);
}

}  // namespace smokeseg
