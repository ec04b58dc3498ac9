#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gslight/errors.hpp"

namespace gslight {

/// Row-major, channel-interleaved raster. Row 0 is the top row.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0) fail(ErrorKind::shape, "negative raster dimensions");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::span<T> pixel(int x, int y) { return {data_.data() + index(x, y, 0), static_cast<std::size_t>(channels_)}; }
  std::span<const T> pixel(int x, int y) const {
    return {data_.data() + index(x, y, 0), static_cast<std::size_t>(channels_)};
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool same_shape(const Raster& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }
  bool same_extent(int w, int h) const noexcept { return width_ == w && height_ == h; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// Linear RGB in [0,1].
using RgbImage = Raster<double>;

inline void require_same_shape(const RgbImage& a, const RgbImage& b, const std::string& what) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::shape, what + ": " + std::to_string(a.width()) + "x" + std::to_string(a.height()) + "x" +
                               std::to_string(a.channels()) + " vs " + std::to_string(b.width()) + "x" +
                               std::to_string(b.height()) + "x" + std::to_string(b.channels()));
  }
}

inline double mean_value(const RgbImage& img) {
  double s = 0.0;
  for (double v : img.values()) s += v;
  return img.empty() ? 0.0 : s / static_cast<double>(img.size());
}

inline RgbImage scaled(const RgbImage& img, double factor) {
  RgbImage out = img;
  for (double& v : out.values()) v = std::clamp(v * factor, 0.0, 1.0);
  return out;
}

}  // namespace gslight
