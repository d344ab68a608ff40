#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pmag {

// Spectral and temporal primitives shared by the losses, the data pipeline and
// the evaluation code. Everything here is a pure function.

class SignalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A uniformly sampled real signal (rPPG prediction or PPG ground truth).
struct PulseSignal {
  std::vector<double> samples;
  double fs = 30.0;

  PulseSignal() = default;
  PulseSignal(std::vector<double> s, double rate);

  std::size_t size() const { return samples.size(); }
  double duration_sec() const { return static_cast<double>(samples.size()) / fs; }

  /// Throws SignalError unless T >= 2, fs > 0 and all samples are finite.
  void validate() const;
};

/// Heart rate in beats per minute.
struct HRValue {
  double bpm = 0.0;
};

/// Band-limited BPM grid on which spectra are evaluated.
///
/// Bins are the multiples of `bin_bpm` lying in [60*lo, 60*hi]; with the
/// defaults that is 40, 41, ..., 180 BPM (141 bins).
struct FrequencyGrid {
  double lo = 0.66;
  double hi = 3.0;
  double bin_bpm = 1.0;

  void validate() const;
  std::vector<double> bins_bpm() const;
  std::vector<double> bins_hz() const;
  std::size_t size() const { return bins_bpm().size(); }
  double lo_bpm() const { return 60.0 * lo; }
  double hi_bpm() const { return 60.0 * hi; }
  bool contains_bpm(double bpm) const { return bpm >= lo_bpm() && bpm <= hi_bpm(); }
  /// Index of the grid bin nearest to `bpm`. Throws if bpm is outside the band.
  std::size_t bin_index(double bpm) const;
};

struct Spectrum {
  std::vector<double> freqs;  // Hz, strictly increasing
  std::vector<double> power;  // >= 0
};

// Zero-phase Butterworth band-pass (forward-backward, odd-extension padding).
inline constexpr int kBandpassOrder = 6;
inline constexpr std::size_t kMinBandpassLength = 30;

PulseSignal bandpass(const PulseSignal& sig, const FrequencyGrid& grid = {});

/// Second-order sections (b0 b1 b2 a0 a1 a2) of the digital band-pass.
std::vector<std::array<double, 6>> butter_bandpass_sos(int order, double lo_hz, double hi_hz,
                                                       double fs);

/// Hann-windowed, mean-removed DFT power evaluated exactly on the grid bins.
Spectrum power_spectrum(const PulseSignal& sig, const FrequencyGrid& grid = {});

/// Vector-Jacobian product of power_spectrum: given dL/dpower returns dL/dsamples.
std::vector<double> power_spectrum_backward(const PulseSignal& sig, const FrequencyGrid& grid,
                                            std::span<const double> d_power);

/// 60 x the frequency of the band-limited spectral peak (ties go to the lower bin).
HRValue estimate_hr(const PulseSignal& sig, const FrequencyGrid& grid = {});

struct SnrValue {
  double db = 0.0;
  bool unbounded = false;  // no out-of-window power; db is +inf
};

/// Power within +-0.1 Hz of the fundamental and first harmonic against the
/// remaining in-band power.
SnrValue snr_db(const PulseSignal& sig, HRValue hr_gt, const FrequencyGrid& grid = {});

struct DenoisedPulse {
  PulseSignal signal;
  bool zero_variance = false;
};

/// Moving-average detrend (2 s), band-pass, z-score.
DenoisedPulse denoise_ppg(const PulseSignal& raw, const FrequencyGrid& grid = {});

/// Centered moving average over an odd window; edges use odd (point-symmetric)
/// extension so that linear trends pass through unchanged.
std::vector<double> moving_average(std::span<const double> x, std::size_t window);

/// Zero mean, unit (population) variance. A constant input maps to zeros.
PulseSignal normalize(const PulseSignal& sig);

/// y[t] = x[t - k] on the valid region, zero elsewhere.
PulseSignal shift(const PulseSignal& sig, int k);

/// Half-open index range [first, second) on which shift(., k) is defined.
std::pair<std::size_t, std::size_t> valid_region(std::size_t n, int k);

double mse(std::span<const double> a, std::span<const double> b);
double mse(const PulseSignal& a, const PulseSignal& b);

/// Mean of (pred[t] - gt[t-k])^2 over the valid region of the shift.
double shifted_mse(std::span<const double> pred, std::span<const double> gt, int k);

double mean(std::span<const double> x);
double stddev(std::span<const double> x);  // population
/// Pearson product-moment correlation; NaN when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// CSV with a `t_sec,<name>` header. Reading accepts any second column name.
void write_pulse_csv(const std::filesystem::path& path, const PulseSignal& sig,
                     const std::string& value_column = "value");
PulseSignal read_pulse_csv(const std::filesystem::path& path);

/// Linear-interpolation resampling onto a new rate, keeping the same duration.
PulseSignal resample_linear(const PulseSignal& sig, double fs_out, std::size_t n_out);

}  // namespace pmag
