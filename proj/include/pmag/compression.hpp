#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "pmag/data.hpp"

namespace pmag {

class CompressionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The external encoder cannot be found or run.
class EncoderMissingError : public CompressionError {
 public:
  using CompressionError::CompressionError;
};

inline constexpr int kMaxCrf = 51;

/// Throws CompressionError unless 0 <= crf <= 51.
void validate_crf(int crf);

/// $PMAG_FFMPEG if set, else the first `ffmpeg` on PATH.
std::filesystem::path find_encoder();
/// First line of `ffmpeg -version`.
std::string encoder_version();

struct EncodeOptions {
  double target_kbps = 0.0;  // > 0: constant bitrate instead of CRF
  std::string pixel_format = "yuv420p";
};

struct EncodeResult {
  std::filesystem::path output;  // video file, or frame directory for crf 0
  CompressionProfile profile;
  int frames = 0;
};

/// crf 0 copies the PNG frames unchanged into out_dir/frames; otherwise the
/// frames are encoded to out_dir/video.mp4 with libx264.
EncodeResult encode_crf(const std::filesystem::path& frames_dir, double fps, int crf,
                        const std::filesystem::path& out_dir, const EncodeOptions& opts = {});
EncodeResult encode_crf(const VideoClip& clip, int crf, const std::filesystem::path& out_dir,
                        const EncodeOptions& opts = {});

/// A video file (decoded through the encoder binary) or a PNG frame directory.
VideoClip decode(const std::filesystem::path& path, double fps = 30.0);

/// Average container bitrate in kbps; for a PNG directory, the raw 24-bit rate.
double probe_bitrate(const std::filesystem::path& path, double fps = 30.0);

/// Re-encodes every record at `crf` under out_root and writes out_root/manifest.json.
/// Ground-truth CSVs and masks are copied byte for byte.
DatasetManifest compress_dataset(const DatasetManifest& manifest, int crf,
                                 const std::filesystem::path& out_root,
                                 const EncodeOptions& opts = {});

}  // namespace pmag
