#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmag/models.hpp"
#include "pmag/signal.hpp"

namespace pmag {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear HR ramp from start_bpm to end_bpm over the clip; constant when equal.
struct HrTrajectory {
  double start_bpm = 72.0;
  double end_bpm = 72.0;

  double at(double t_sec, double duration_sec) const;
};

/// Ellipse in fractions of the frame size.
struct EllipseMask {
  double cx = 0.5;
  double cy = 0.5;
  double rx = 0.32;
  double ry = 0.42;
};

struct SynthConfig {
  int t = 300;
  int h = 96;
  int w = 96;
  double fps = 30.0;
  HrTrajectory hr;
  double phase = 0.0;  // initial pulse phase in cycles
  double pulse_amplitude = 0.004;
  std::array<double, 3> channel_weights{0.35, 1.0, 0.55};
  std::array<double, 3> skin_rgb{0.78, 0.57, 0.48};
  double shading = 0.08;  // vertical illumination falloff across the ellipse
  double noise_std = 0.01;
  EllipseMask mask;
  double motion_amp = 0.0;  // pixels
  double motion_hz = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Everything the codec step records about one encoded sample.
struct CompressionProfile {
  std::string codec = "h264";
  int crf = 0;
  std::string pixel_format = "yuv420p";
  std::string encoder_version;
  double bitrate_kbps = 0.0;
  double target_kbps = 0.0;  // > 0 selects constant-bitrate mode
  bool bypass = false;       // crf 0: frames copied, never encoded
};

struct Sample {
  std::string id;
  std::string subject;
  VideoClip clip;
  PulseSignal ppg_raw;              // as recorded (written to gt.csv)
  PulseSignal ppg_gt;               // denoised training / evaluation target
  std::vector<HRValue> hr_gt;       // one per evaluation window
  std::vector<std::uint8_t> mask;   // H x W, 1 = skin
  int window_start = 0;             // first frame within the source sample
  std::optional<CompressionProfile> compression;
};

struct SampleRecord {
  std::string id;
  std::string subject;
  std::string frames;  // directory of %06d.png, relative to the manifest root
  std::string video;   // alternatively a single encoded file
  std::string gt;      // t_sec,ppg CSV
  std::string mask;    // optional PNG
  int num_frames = 0;
  double hr_bpm = 0.0;  // nominal mean HR when known (synthetic data), else 0
  std::optional<CompressionProfile> compression;
};

struct DatasetManifest {
  std::filesystem::path root;
  double fps = 30.0;
  int size = 96;
  std::vector<SampleRecord> records;

  /// CRF values recorded across records; empty set entries mean "uncompressed".
  std::vector<int> crf_values() const;
};

// -- synthesis ---------------------------------------------------------------

/// s(t) = sin(2 pi phi) + 0.3 sin(4 pi phi + 0.7), phi the integral of hr/60.
PulseSignal synth_ppg_waveform(const SynthConfig& cfg);

/// Renders a skin ellipse on black whose colour follows `ppg`.
Sample render_video(const SynthConfig& cfg, const PulseSignal& ppg);

struct DatasetOptions {
  int n = 8;
  std::uint64_t seed = 0;
  double hr_lo = 55.0;
  double hr_hi = 95.0;
  std::string id_prefix = "s";
};

/// The per-sample configs make_dataset would render, in order.
std::vector<SynthConfig> dataset_configs(const SynthConfig& tmpl, const DatasetOptions& opts);

/// Renders every sample of dataset_configs in memory.
std::vector<Sample> synth_samples(const SynthConfig& tmpl, const DatasetOptions& opts);

/// Renders the dataset under `root` and writes root/manifest.json.
DatasetManifest make_dataset(const SynthConfig& tmpl, const DatasetOptions& opts,
                             const std::filesystem::path& root);

// -- windows -----------------------------------------------------------------

/// Window starts for a clip of `frames`: stride win - overlap, partial tail dropped.
std::vector<int> window_starts(int frames, int win, int overlap);

/// Each window carries its own single-entry hr_gt.
std::vector<Sample> window_clip(const Sample& sample, int win = 300, int overlap = 10,
                                const FrequencyGrid& grid = {});

/// HR per non-overlapping window of `win` frames (whole signal when shorter).
std::vector<HRValue> window_hr(const PulseSignal& ppg, int win, const FrequencyGrid& grid = {});

// -- disk ------------------------------------------------------------------

void write_frames(const VideoClip& clip, const std::filesystem::path& dir);
VideoClip read_frames(const std::filesystem::path& dir, double fps);
void write_mask(const std::vector<std::uint8_t>& mask, int h, int w,
                const std::filesystem::path& path);
std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, int h, int w);

/// Writes frames/, gt.csv and mask.png under root/id and returns the record.
SampleRecord write_sample(const Sample& sample, const std::filesystem::path& root,
                          double hr_bpm = 0.0);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct LoadOptions {
  int size = 96;
  int window = 300;
  FrequencyGrid grid{};
};

/// Resizes frames to size x size (area interpolation), resamples the PPG to the
/// clip rate and denoises it.
Sample load_sample(const DatasetManifest& manifest, const SampleRecord& record,
                   const LoadOptions& opts = {});
std::vector<Sample> load_all(const DatasetManifest& manifest, const LoadOptions& opts = {});

/// Mean of one channel over the mask, per frame.
PulseSignal masked_channel_mean(const VideoClip& clip, const std::vector<std::uint8_t>& mask,
                                int channel = 1);

}  // namespace pmag
