#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmag {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major float64 tensor used for model parameters.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> dims, double fill = 0.0);

  std::size_t numel() const { return data.size(); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_string() const;
};

std::size_t numel_of(const std::vector<std::int64_t>& shape);

/// Named parameter (or gradient) tensors, ordered by name.
using TensorMap = std::map<std::string, Tensor>;

/// Zero tensors with the same names and shapes.
TensorMap zeros_like(const TensorMap& tensors);
std::size_t count_elements(const TensorMap& tensors);
bool all_finite(const TensorMap& tensors);

/// A spatio-temporal activation volume laid out as T x C x H x W, so that one
/// frame of all channels is a contiguous C x (H*W) block.
struct Volume {
  int t = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Volume() = default;
  Volume(int frames, int channels, int height, int width, double fill = 0.0);

  std::size_t frame_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  double* frame(int ti) { return data.data() + static_cast<std::size_t>(ti) * frame_size(); }
  const double* frame(int ti) const {
    return data.data() + static_cast<std::size_t>(ti) * frame_size();
  }
  double* plane(int ti, int ci) { return frame(ti) + static_cast<std::size_t>(ci) * plane_size(); }
  const double* plane(int ti, int ci) const {
    return frame(ti) + static_cast<std::size_t>(ci) * plane_size();
  }
  double& at(int ti, int ci, int y, int x) {
    return plane(ti, ci)[static_cast<std::size_t>(y) * w + x];
  }
  double at(int ti, int ci, int y, int x) const {
    return plane(ti, ci)[static_cast<std::size_t>(y) * w + x];
  }
  bool same_shape(const Volume& o) const { return t == o.t && c == o.c && h == o.h && w == o.w; }
  std::string shape_string() const;
};

}  // namespace pmag
