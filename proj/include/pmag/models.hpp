#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pmag/layers.hpp"
#include "pmag/signal.hpp"
#include "pmag/tensor.hpp"

namespace pmag {

/// T x H x W x 3 RGB frames in [0, 1], interleaved per pixel.
struct VideoClip {
  int t = 0;
  int h = 0;
  int w = 0;
  double fps = 30.0;
  std::vector<float> rgb;

  VideoClip() = default;
  VideoClip(int frames, int height, int width, double rate, float fill = 0.0f);

  std::size_t pixel_index(int ti, int y, int x) const {
    return ((static_cast<std::size_t>(ti) * h + y) * w + x) * 3;
  }
  float& at(int ti, int y, int x, int ch) { return rgb[pixel_index(ti, y, x) + ch]; }
  float at(int ti, int y, int x, int ch) const { return rgb[pixel_index(ti, y, x) + ch]; }
  /// Throws ShapeError unless T >= 1, H, W >= 8 and all values are finite.
  void validate() const;
  /// Frames [first, first + count) as a new clip.
  VideoClip slice(int first, int count) const;
};

Volume to_volume(const VideoClip& clip);
/// Inverse of to_volume; `clamp` limits values to [0, 1] (visualisation export).
VideoClip to_clip(const Volume& v, double fps, bool clamp = false);

/// Output of the magnification network: same shape as its input, unclamped.
struct MagnifiedClip {
  Volume volume;
  double fps = 30.0;
};

enum class ModelKind { kTdm, kPsmn };
const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Temporal-derivative estimator: difference orders 0..max_order each feed a
/// two-layer 3D conv stack; the branches are mixed by learnable scalars,
/// spatially averaged and turned into one value per frame by a temporal conv.
struct TdmConfig {
  int input_size = 96;   // H = W expected at the input
  int pool = 4;          // spatial average-pool factor applied first
  int width1 = 8;
  int width2 = 16;
  int max_order = 2;
  int head_kernel = 5;
  bool input_norm = true;  // remove per-pixel temporal mean, divide by clip RMS
};

/// 3D U-Net magnifier with three spatial pooling levels and a global residual.
struct PsmnConfig {
  std::array<int, 3> widths{16, 32, 64};
  int bottleneck = 64;
};

struct ModelParams {
  ModelKind kind = ModelKind::kTdm;
  TdmConfig tdm;
  PsmnConfig psmn;
  std::uint64_t seed = 0;
  TensorMap tensors;
  bool frozen = false;

  /// Canonical JSON of the architecture (kind + config); stable across runs.
  std::string config_json() const;
  /// SHA-256 of config_json().
  std::string config_hash() const;
  std::size_t parameter_count() const { return count_elements(tensors); }
  const Tensor& get(const std::string& name) const;
};

/// SHA-256 over the names, shapes and raw bytes of every tensor.
std::string hash_params(const TensorMap& tensors);

ModelParams init_tdm(std::uint64_t seed, const TdmConfig& cfg = {});
/// The final residual-producing convolution is zero, so the fresh network is
/// the identity map.
ModelParams init_psmn(std::uint64_t seed, const PsmnConfig& cfg = {});

struct TdmTape;
struct PsmnTape;
struct TapeDeleter {
  void operator()(TdmTape* p) const;
  void operator()(PsmnTape* p) const;
};
using TdmTapePtr = std::unique_ptr<TdmTape, TapeDeleter>;
using PsmnTapePtr = std::unique_ptr<PsmnTape, TapeDeleter>;

PulseSignal tdm_forward(const ModelParams& theta, const VideoClip& clip);
/// Forward on a raw T x 3 x H x W volume. When `tape` is given it receives
/// everything tdm_backward needs.
PulseSignal tdm_forward(const ModelParams& theta, const Volume& input, double fps,
                        TdmTapePtr* tape = nullptr);
/// Accumulates parameter gradients into `d_params` (skipped when null) and the
/// input gradient into `d_input` (skipped when null).
void tdm_backward(const ModelParams& theta, const TdmTape& tape, std::span<const double> d_out,
                  TensorMap* d_params, Volume* d_input);

MagnifiedClip psmn_forward(const ModelParams& psi, const VideoClip& clip);
/// `input` must outlive `tape`.
MagnifiedClip psmn_forward(const ModelParams& psi, const Volume& input, double fps,
                           PsmnTapePtr* tape = nullptr);
void psmn_backward(const ModelParams& psi, const PsmnTape& tape, const Volume& d_out,
                   TensorMap* d_params, Volume* d_input);

/// f_theta(m_psi(clip)).
PulseSignal pipeline_forward(const ModelParams& theta, const ModelParams& psi,
                             const VideoClip& clip);

}  // namespace pmag
