#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pmag/tensor.hpp"

namespace pmag::nn {

// Forward/backward building blocks for the two video networks. Every backward
// *accumulates* into its output gradients.

enum class TemporalPad { kZero, kReplicate };

/// One input of a (possibly channel-concatenated) 3x3x3 convolution. The
/// convolution sees the volume nearest-neighbour upsampled by `upsample` in
/// both spatial axes, without materialising the upsampled copy.
struct ConvSource {
  const Volume* volume = nullptr;
  int upsample = 1;
};

/// Weight tensor shape {3, Cout, Cin, 3, 3} (temporal tap first); bias {Cout}.
struct Conv3dParams {
  const Tensor* weight = nullptr;
  const Tensor* bias = nullptr;
};

struct Conv3dGrads {
  Tensor* weight = nullptr;  // may be null when parameter gradients are not needed
  Tensor* bias = nullptr;
};

int conv_out_channels(const Conv3dParams& p);

/// 3x3x3 convolution, spatial zero padding 1, temporal padding per `pad`.
Volume conv3d_forward(const Conv3dParams& p, std::span<const ConvSource> sources,
                      TemporalPad pad);

/// `d_sources[i]` (same shape as sources[i].volume, may be null) receives dL/dinput.
void conv3d_backward(const Conv3dParams& p, std::span<const ConvSource> sources,
                     TemporalPad pad, const Volume& d_out, const Conv3dGrads& grads,
                     std::span<Volume* const> d_sources);

/// In-place ReLU; `mask` receives 1 where the input was positive.
void relu_forward(Volume& v, std::vector<std::uint8_t>& mask);
void relu_backward(Volume& d, const std::vector<std::uint8_t>& mask);

/// In-place instance normalisation over (T, H, W) per channel, no affine.
/// `inv_std` receives one value per channel; `v` holds the normalised output.
inline constexpr double kInstanceNormEps = 1e-5;
void instance_norm_forward(Volume& v, std::vector<double>& inv_std);
/// `y` is the normalised forward output; `d` is transformed in place.
void instance_norm_backward(Volume& d, const Volume& y, const std::vector<double>& inv_std);

/// Spatial average pooling with a square window and equal stride.
Volume avg_pool_spatial(const Volume& x, int factor);
void avg_pool_spatial_backward(const Volume& d_out, int factor, Volume& d_in);

/// Accumulates the nearest-neighbour upsampling adjoint: d_low += sum over each block.
void upsample_backward(const Volume& d_high, int factor, Volume& d_low);

/// k-th order forward difference along time, zero for the last k frames.
Volume temporal_difference(const Volume& x, int order);
void temporal_difference_backward(const Volume& d_out, int order, Volume& d_in);

/// Spatial mean of every (t, c) plane: returns T x C row-major.
std::vector<double> global_avg_pool(const Volume& x);
void global_avg_pool_backward(std::span<const double> d_out, Volume& d_in);

/// Single-output temporal convolution over T x C features, odd kernel, replicate
/// padding. Weight shape {C, K}; bias {1}.
std::vector<double> temporal_head_forward(std::span<const double> features, int frames,
                                          int channels, const Tensor& weight, const Tensor& bias);
void temporal_head_backward(std::span<const double> features, int frames, int channels,
                            const Tensor& weight, std::span<const double> d_out, Tensor* d_weight,
                            Tensor* d_bias, std::span<double> d_features);

}  // namespace pmag::nn
