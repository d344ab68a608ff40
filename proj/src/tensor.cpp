#include "pmag/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pmag {

std::size_t numel_of(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<std::int64_t> dims, double fill)
    : shape(std::move(dims)), data(numel_of(shape), fill) {}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

TensorMap zeros_like(const TensorMap& tensors) {
  TensorMap out;
  for (const auto& [name, t] : tensors) out.emplace(name, Tensor(t.shape, 0.0));
  return out;
}

std::size_t count_elements(const TensorMap& tensors) {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

bool all_finite(const TensorMap& tensors) {
  for (const auto& [name, t] : tensors) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

Volume::Volume(int frames, int channels, int height, int width, double fill)
    : t(frames), c(channels), h(height), w(width) {
  if (frames < 0 || channels < 0 || height < 0 || width < 0) {
    throw ShapeError("Volume: negative dimension");
  }
  data.assign(static_cast<std::size_t>(frames) * channels * height * width, fill);
}

std::string Volume::shape_string() const {
  std::ostringstream os;
  os << '(' << t << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

}  // namespace pmag
