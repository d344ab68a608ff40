#include "pmag/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

namespace pmag::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  int t = 0;
  int h = 0;
  int w = 0;
  int cin = 0;
  int cout = 0;
  std::size_t k = 0;   // rows of one im2col block: cin * 9
  std::size_t hw = 0;  // columns
};

ConvGeometry conv_geometry(const Conv3dParams& p, std::span<const ConvSource> sources) {
  if (sources.empty()) throw ShapeError("conv3d: no input");
  if (p.weight == nullptr || p.bias == nullptr) throw ShapeError("conv3d: missing parameters");
  ConvGeometry g;
  const auto& first = *sources.front().volume;
  g.t = first.t;
  g.h = first.h * sources.front().upsample;
  g.w = first.w * sources.front().upsample;
  for (const auto& s : sources) {
    const auto& v = *s.volume;
    if (s.upsample < 1 || v.t != g.t || v.h * s.upsample != g.h || v.w * s.upsample != g.w) {
      throw ShapeError("conv3d: concatenated inputs disagree in shape: " + v.shape_string());
    }
    g.cin += v.c;
  }
  const auto& ws = p.weight->shape;
  if (ws.size() != 5 || ws[0] != 3 || ws[3] != 3 || ws[4] != 3 || ws[2] != g.cin) {
    throw ShapeError("conv3d: weight " + p.weight->shape_string() + " does not accept " +
                     std::to_string(g.cin) + " input channels");
  }
  g.cout = static_cast<int>(ws[1]);
  if (p.bias->numel() != static_cast<std::size_t>(g.cout)) {
    throw ShapeError("conv3d: bias size mismatch");
  }
  g.k = static_cast<std::size_t>(g.cin) * 9;
  g.hw = static_cast<std::size_t>(g.h) * g.w;
  return g;
}

int source_frame(int t, int kt, int frames, TemporalPad pad) {
  const int s = t + kt - 1;
  if (s >= 0 && s < frames) return s;
  if (pad == TemporalPad::kZero) return -1;
  return std::clamp(s, 0, frames - 1);
}

void im2col(std::span<const ConvSource> sources, const ConvGeometry& g, int frame, double* col) {
  std::size_t row = 0;
  for (const auto& src : sources) {
    const Volume& v = *src.volume;
    const int up = src.upsample;
    for (int ci = 0; ci < v.c; ++ci) {
      const double* plane = v.plane(frame, ci);
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx, ++row) {
          double* out = col + row * g.hw;
          for (int y = 0; y < g.h; ++y) {
            double* orow = out + static_cast<std::size_t>(y) * g.w;
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= g.h) {
              std::fill(orow, orow + g.w, 0.0);
              continue;
            }
            const double* srow = plane + static_cast<std::size_t>(sy / up) * v.w;
            if (up == 1) {
              const int dx = kx - 1;
              const int x0 = std::max(0, -dx);
              const int x1 = std::min(g.w, g.w - dx);
              std::fill(orow, orow + x0, 0.0);
              std::memcpy(orow + x0, srow + x0 + dx, sizeof(double) * static_cast<std::size_t>(x1 - x0));
              std::fill(orow + x1, orow + g.w, 0.0);
            } else {
              for (int x = 0; x < g.w; ++x) {
                const int sx = x + kx - 1;
                orow[x] = (sx < 0 || sx >= g.w) ? 0.0 : srow[sx / up];
              }
            }
          }
        }
      }
    }
  }
}

void col2im_add(std::span<const ConvSource> sources, const ConvGeometry& g, int frame,
                const double* col, std::span<Volume* const> d_sources) {
  std::size_t row = 0;
  for (std::size_t si = 0; si < sources.size(); ++si) {
    const Volume& v = *sources[si].volume;
    const int up = sources[si].upsample;
    Volume* dv = d_sources.size() > si ? d_sources[si] : nullptr;
    if (dv == nullptr) {
      row += static_cast<std::size_t>(v.c) * 9;
      continue;
    }
    for (int ci = 0; ci < v.c; ++ci) {
      double* plane = dv->plane(frame, ci);
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx, ++row) {
          const double* in = col + row * g.hw;
          for (int y = 0; y < g.h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= g.h) continue;
            const double* irow = in + static_cast<std::size_t>(y) * g.w;
            double* drow = plane + static_cast<std::size_t>(sy / up) * v.w;
            if (up == 1) {
              const int dx = kx - 1;
              const int x0 = std::max(0, -dx);
              const int x1 = std::min(g.w, g.w - dx);
              for (int x = x0; x < x1; ++x) drow[x + dx] += irow[x];
            } else {
              for (int x = 0; x < g.w; ++x) {
                const int sx = x + kx - 1;
                if (sx >= 0 && sx < g.w) drow[sx / up] += irow[x];
              }
            }
          }
        }
      }
    }
  }
}

// Three im2col buffers keyed by source frame (slot = frame mod 3); any three
// consecutive frames map to distinct slots.
class ColumnRing {
 public:
  explicit ColumnRing(std::size_t block) {
    for (auto& b : buf_) b.assign(block, 0.0);
    key_.fill(-1);
  }
  double* slot(int frame) { return buf_[static_cast<std::size_t>(frame % 3)].data(); }
  int& key(int frame) { return key_[static_cast<std::size_t>(frame % 3)]; }
  std::array<int, 3>& keys() { return key_; }
  double* slot_index(std::size_t i) { return buf_[i].data(); }

 private:
  std::array<std::vector<double>, 3> buf_;
  std::array<int, 3> key_{};
};

}  // namespace

int conv_out_channels(const Conv3dParams& p) { return static_cast<int>(p.weight->shape[1]); }

Volume conv3d_forward(const Conv3dParams& p, std::span<const ConvSource> sources,
                      TemporalPad pad) {
  const auto g = conv_geometry(p, sources);
  Volume out(g.t, g.cout, g.h, g.w);
  for (int t = 0; t < g.t; ++t) {
    for (int o = 0; o < g.cout; ++o) {
      std::fill(out.plane(t, o), out.plane(t, o) + g.hw, p.bias->data[static_cast<std::size_t>(o)]);
    }
  }
  ColumnRing cols(g.k * g.hw);
  for (int t = 0; t < g.t; ++t) {
    MapMat y(out.frame(t), g.cout, static_cast<Eigen::Index>(g.hw));
    for (int kt = 0; kt < 3; ++kt) {
      const int s = source_frame(t, kt, g.t, pad);
      if (s < 0) continue;
      if (cols.key(s) != s) {
        im2col(sources, g, s, cols.slot(s));
        cols.key(s) = s;
      }
      ConstMapMat wk(p.weight->data.data() + static_cast<std::size_t>(kt) * g.cout * g.k, g.cout,
                     static_cast<Eigen::Index>(g.k));
      ConstMapMat x(cols.slot(s), static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(g.hw));
      y.noalias() += wk * x;
    }
  }
  return out;
}

void conv3d_backward(const Conv3dParams& p, std::span<const ConvSource> sources,
                     TemporalPad pad, const Volume& d_out, const Conv3dGrads& grads,
                     std::span<Volume* const> d_sources) {
  const auto g = conv_geometry(p, sources);
  if (d_out.t != g.t || d_out.c != g.cout || d_out.h != g.h || d_out.w != g.w) {
    throw ShapeError("conv3d_backward: gradient shape " + d_out.shape_string());
  }
  const bool need_input =
      std::any_of(d_sources.begin(), d_sources.end(), [](Volume* v) { return v != nullptr; });
  const bool need_weight = grads.weight != nullptr;

  if (grads.bias != nullptr) {
    for (int t = 0; t < g.t; ++t) {
      for (int o = 0; o < g.cout; ++o) {
        const double* gp = d_out.plane(t, o);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.hw; ++i) acc += gp[i];
        grads.bias->data[static_cast<std::size_t>(o)] += acc;
      }
    }
  }
  if (!need_input && !need_weight) return;

  ColumnRing cols(need_weight ? g.k * g.hw : 0);
  ColumnRing dcols(need_input ? g.k * g.hw : 0);
  auto flush = [&](std::size_t slot) {
    int& key = dcols.keys()[slot];
    if (key >= 0) {
      col2im_add(sources, g, key, dcols.slot_index(slot), d_sources);
      key = -1;
    }
  };

  for (int t = 0; t < g.t; ++t) {
    ConstMapMat gy(d_out.frame(t), g.cout, static_cast<Eigen::Index>(g.hw));
    for (int kt = 0; kt < 3; ++kt) {
      const int s = source_frame(t, kt, g.t, pad);
      if (s < 0) continue;
      const double* wptr = p.weight->data.data() + static_cast<std::size_t>(kt) * g.cout * g.k;
      if (need_weight) {
        if (cols.key(s) != s) {
          im2col(sources, g, s, cols.slot(s));
          cols.key(s) = s;
        }
        ConstMapMat x(cols.slot(s), static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(g.hw));
        MapMat dw(grads.weight->data.data() + static_cast<std::size_t>(kt) * g.cout * g.k, g.cout,
                  static_cast<Eigen::Index>(g.k));
        dw.noalias() += gy * x.transpose();
      }
      if (need_input) {
        if (dcols.key(s) != s) {
          flush(static_cast<std::size_t>(s % 3));
          std::fill(dcols.slot(s), dcols.slot(s) + g.k * g.hw, 0.0);
          dcols.key(s) = s;
        }
        ConstMapMat wk(wptr, g.cout, static_cast<Eigen::Index>(g.k));
        MapMat dx(dcols.slot(s), static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(g.hw));
        dx.noalias() += wk.transpose() * gy;
      }
    }
  }
  if (need_input) {
    // Flush in frame order for a fixed summation order.
    std::array<std::size_t, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return dcols.keys()[a] < dcols.keys()[b]; });
    for (std::size_t slot : order) flush(slot);
  }
}

void relu_forward(Volume& v, std::vector<std::uint8_t>& mask) {
  mask.resize(v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const bool on = v.data[i] > 0.0;
    mask[i] = on ? 1 : 0;
    if (!on) v.data[i] = 0.0;
  }
}

void relu_backward(Volume& d, const std::vector<std::uint8_t>& mask) {
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (mask[i] == 0) d.data[i] = 0.0;
  }
}

void instance_norm_forward(Volume& v, std::vector<double>& inv_std) {
  inv_std.assign(static_cast<std::size_t>(v.c), 0.0);
  const double n = static_cast<double>(v.t) * static_cast<double>(v.plane_size());
  for (int c = 0; c < v.c; ++c) {
    double sum = 0.0;
    for (int t = 0; t < v.t; ++t) {
      const double* p = v.plane(t, c);
      for (std::size_t i = 0; i < v.plane_size(); ++i) sum += p[i];
    }
    const double mu = sum / n;
    double var = 0.0;
    for (int t = 0; t < v.t; ++t) {
      const double* p = v.plane(t, c);
      for (std::size_t i = 0; i < v.plane_size(); ++i) var += (p[i] - mu) * (p[i] - mu);
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + kInstanceNormEps);
    inv_std[static_cast<std::size_t>(c)] = is;
    for (int t = 0; t < v.t; ++t) {
      double* p = v.plane(t, c);
      for (std::size_t i = 0; i < v.plane_size(); ++i) p[i] = (p[i] - mu) * is;
    }
  }
}

void instance_norm_backward(Volume& d, const Volume& y, const std::vector<double>& inv_std) {
  const double n = static_cast<double>(d.t) * static_cast<double>(d.plane_size());
  for (int c = 0; c < d.c; ++c) {
    double sg = 0.0;
    double sgy = 0.0;
    for (int t = 0; t < d.t; ++t) {
      const double* g = d.plane(t, c);
      const double* yy = y.plane(t, c);
      for (std::size_t i = 0; i < d.plane_size(); ++i) {
        sg += g[i];
        sgy += g[i] * yy[i];
      }
    }
    const double mg = sg / n;
    const double mgy = sgy / n;
    const double is = inv_std[static_cast<std::size_t>(c)];
    for (int t = 0; t < d.t; ++t) {
      double* g = d.plane(t, c);
      const double* yy = y.plane(t, c);
      for (std::size_t i = 0; i < d.plane_size(); ++i) g[i] = is * (g[i] - mg - yy[i] * mgy);
    }
  }
}

Volume avg_pool_spatial(const Volume& x, int factor) {
  if (factor < 1 || x.h % factor != 0 || x.w % factor != 0) {
    throw ShapeError("avg_pool_spatial: " + x.shape_string() + " is not divisible by " +
                     std::to_string(factor));
  }
  if (factor == 1) return x;
  Volume out(x.t, x.c, x.h / factor, x.w / factor);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (int t = 0; t < x.t; ++t) {
    for (int c = 0; c < x.c; ++c) {
      const double* in = x.plane(t, c);
      double* o = out.plane(t, c);
      for (int y = 0; y < out.h; ++y) {
        for (int xx = 0; xx < out.w; ++xx) {
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy) {
            const double* row = in + static_cast<std::size_t>(y * factor + dy) * x.w + xx * factor;
            for (int dx = 0; dx < factor; ++dx) acc += row[dx];
          }
          o[static_cast<std::size_t>(y) * out.w + xx] = acc * inv;
        }
      }
    }
  }
  return out;
}

void avg_pool_spatial_backward(const Volume& d_out, int factor, Volume& d_in) {
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (int t = 0; t < d_out.t; ++t) {
    for (int c = 0; c < d_out.c; ++c) {
      const double* g = d_out.plane(t, c);
      double* o = d_in.plane(t, c);
      for (int y = 0; y < d_in.h; ++y) {
        const double* grow = g + static_cast<std::size_t>(y / factor) * d_out.w;
        double* orow = o + static_cast<std::size_t>(y) * d_in.w;
        for (int x = 0; x < d_in.w; ++x) orow[x] += grow[x / factor] * inv;
      }
    }
  }
}

void upsample_backward(const Volume& d_high, int factor, Volume& d_low) {
  for (int t = 0; t < d_high.t; ++t) {
    for (int c = 0; c < d_high.c; ++c) {
      const double* g = d_high.plane(t, c);
      double* o = d_low.plane(t, c);
      for (int y = 0; y < d_high.h; ++y) {
        const double* grow = g + static_cast<std::size_t>(y) * d_high.w;
        double* orow = o + static_cast<std::size_t>(y / factor) * d_low.w;
        for (int x = 0; x < d_high.w; ++x) orow[x / factor] += grow[x];
      }
    }
  }
}

namespace {

std::vector<double> difference_coefficients(int order) {
  // Coefficients of x[t+i] in the order-th forward difference.
  std::vector<double> c{1.0};
  for (int k = 0; k < order; ++k) {
    std::vector<double> next(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] -= c[i];
      next[i + 1] += c[i];
    }
    c = std::move(next);
  }
  return c;
}

}  // namespace

Volume temporal_difference(const Volume& x, int order) {
  if (order < 0) throw ShapeError("temporal_difference: negative order");
  if (order == 0) return x;
  const auto coef = difference_coefficients(order);
  Volume out(x.t, x.c, x.h, x.w);
  const std::size_t fs = x.frame_size();
  for (int t = 0; t + order < x.t; ++t) {
    double* o = out.frame(t);
    for (int i = 0; i <= order; ++i) {
      const double* in = x.frame(t + i);
      const double ci = coef[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < fs; ++j) o[j] += ci * in[j];
    }
  }
  return out;
}

void temporal_difference_backward(const Volume& d_out, int order, Volume& d_in) {
  if (order == 0) {
    for (std::size_t j = 0; j < d_in.data.size(); ++j) d_in.data[j] += d_out.data[j];
    return;
  }
  const auto coef = difference_coefficients(order);
  const std::size_t fs = d_out.frame_size();
  for (int t = 0; t + order < d_out.t; ++t) {
    const double* g = d_out.frame(t);
    for (int i = 0; i <= order; ++i) {
      double* o = d_in.frame(t + i);
      const double ci = coef[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < fs; ++j) o[j] += ci * g[j];
    }
  }
}

std::vector<double> global_avg_pool(const Volume& x) {
  std::vector<double> out(static_cast<std::size_t>(x.t) * x.c);
  const double inv = 1.0 / static_cast<double>(x.plane_size());
  for (int t = 0; t < x.t; ++t) {
    for (int c = 0; c < x.c; ++c) {
      const double* p = x.plane(t, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < x.plane_size(); ++i) acc += p[i];
      out[static_cast<std::size_t>(t) * x.c + c] = acc * inv;
    }
  }
  return out;
}

void global_avg_pool_backward(std::span<const double> d_out, Volume& d_in) {
  const double inv = 1.0 / static_cast<double>(d_in.plane_size());
  for (int t = 0; t < d_in.t; ++t) {
    for (int c = 0; c < d_in.c; ++c) {
      const double g = d_out[static_cast<std::size_t>(t) * d_in.c + c] * inv;
      double* p = d_in.plane(t, c);
      for (std::size_t i = 0; i < d_in.plane_size(); ++i) p[i] += g;
    }
  }
}

std::vector<double> temporal_head_forward(std::span<const double> features, int frames,
                                          int channels, const Tensor& weight, const Tensor& bias) {
  const int k = static_cast<int>(weight.shape.at(1));
  if (weight.shape.at(0) != channels || k % 2 == 0) {
    throw ShapeError("temporal_head: weight " + weight.shape_string() + " does not match " +
                     std::to_string(channels) + " channels");
  }
  const int half = k / 2;
  std::vector<double> out(static_cast<std::size_t>(frames), bias.data.at(0));
  for (int t = 0; t < frames; ++t) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      for (int j = 0; j < k; ++j) {
        const int s = std::clamp(t + j - half, 0, frames - 1);
        acc += weight.data[static_cast<std::size_t>(c) * k + j] *
               features[static_cast<std::size_t>(s) * channels + c];
      }
    }
    out[static_cast<std::size_t>(t)] += acc;
  }
  return out;
}

void temporal_head_backward(std::span<const double> features, int frames, int channels,
                            const Tensor& weight, std::span<const double> d_out, Tensor* d_weight,
                            Tensor* d_bias, std::span<double> d_features) {
  const int k = static_cast<int>(weight.shape.at(1));
  const int half = k / 2;
  for (int t = 0; t < frames; ++t) {
    const double g = d_out[static_cast<std::size_t>(t)];
    if (d_bias != nullptr) d_bias->data[0] += g;
    for (int c = 0; c < channels; ++c) {
      for (int j = 0; j < k; ++j) {
        const int s = std::clamp(t + j - half, 0, frames - 1);
        const std::size_t fi = static_cast<std::size_t>(s) * channels + c;
        const std::size_t wi = static_cast<std::size_t>(c) * k + j;
        if (d_weight != nullptr) d_weight->data[wi] += g * features[fi];
        if (!d_features.empty()) d_features[fi] += g * weight.data[wi];
      }
    }
  }
}

}  // namespace pmag::nn
