#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace rgbid {

/// Dense row-major image, origin top-left, pixel centers at integer
/// coordinates. Holes (invalid pixels) are encoded as NaN for float types.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  T& operator()(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  const T& operator()(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }

  bool in_bounds(int x, int y) const { return x >= 0 && x < width_ && y >= 0 && y < height_; }
  bool in_bounds(double x, double y) const {
    return x >= 0.0 && x <= width_ - 1.0 && y >= 0.0 && y <= height_ - 1.0;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using IntensityImage = Image<double>;
using InverseDepthMap = Image<double>;

inline constexpr double kHole = std::numeric_limits<double>::quiet_NaN();

inline bool is_valid(double v) { return std::isfinite(v); }

/// Bilinear sample with hole propagation: any of the 4 taps invalid or out
/// of bounds yields a hole.
inline double bilinear(const Image<double>& img, double x, double y) {
  if (!img.in_bounds(x, y)) return kHole;
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = img(x0, y0), v10 = img(x1, y0), v01 = img(x0, y1), v11 = img(x1, y1);
  if (!is_valid(v00) || !is_valid(v10) || !is_valid(v01) || !is_valid(v11)) return kHole;
  return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

inline double nearest(const Image<double>& img, double x, double y) {
  const int xi = static_cast<int>(std::lround(x));
  const int yi = static_cast<int>(std::lround(y));
  if (!img.in_bounds(xi, yi)) return kHole;
  return img(xi, yi);
}

/// 2x2 box downsample. For maps with holes, averages the valid taps and
/// produces a hole only if all four are invalid.
inline Image<double> downsample2(const Image<double>& img) {
  Image<double> out(img.width() / 2, img.height() / 2);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      double sum = 0.0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double v = img(2 * x + dx, 2 * y + dy);
          if (is_valid(v)) {
            sum += v;
            ++n;
          }
        }
      out(x, y) = n > 0 ? sum / n : kHole;
    }
  }
  return out;
}

}  // namespace rgbid
