#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dqomap/errors.hpp"
#include "dqomap/geometry.hpp"

namespace dqo {

// Row-major interleaved image.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels = 1, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  T& operator()(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& operator()(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(int w, int h) const { return width_ == w && height_ == h; }
  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  int width_ = 0, height_ = 0, channels_ = 0;
  std::vector<T> data_;
};

struct Detection2D {
  BBox2D bbox;
  int class_id = 0;
  double score = 1.0;
  std::optional<int> instance_id;  // simulator ground truth only

  bool operator==(const Detection2D&) const = default;
};

struct FrameBundle {
  int index = 0;
  Image<std::uint8_t> rgb;        // 3 channels
  Image<float> depth;             // meters, 0 = invalid
  Image<std::uint16_t> instance;  // 0 = background
  CameraModel camera;
  std::vector<Detection2D> detections;

  void validate() const {
    camera.validate();
    const int w = camera.width, h = camera.height;
    if (!rgb.same_shape(w, h) || rgb.channels() != 3 || !depth.same_shape(w, h) ||
        !instance.same_shape(w, h))
      throw InvalidArgument("frame channel dimensions disagree with the camera");
  }

  Vector3d color(int x, int y) const {
    return Vector3d(rgb(x, y, 0), rgb(x, y, 1), rgb(x, y, 2)) / 255.0;
  }
};

// Integer pixel range whose centers fall inside the box, clamped to the image.
struct PixelRange {
  int x0, y0, x1, y1;  // inclusive
  bool empty() const { return x1 < x0 || y1 < y0; }
};

inline PixelRange pixel_range(const BBox2D& b, int width, int height) {
  PixelRange r{static_cast<int>(std::ceil(b.x_min)), static_cast<int>(std::ceil(b.y_min)),
               static_cast<int>(std::floor(b.x_max)), static_cast<int>(std::floor(b.y_max))};
  r.x0 = std::max(r.x0, 0);
  r.y0 = std::max(r.y0, 0);
  r.x1 = std::min(r.x1, width - 1);
  r.y1 = std::min(r.y1, height - 1);
  return r;
}

}  // namespace dqo
