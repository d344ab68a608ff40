#include "pmag/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace pmag {

namespace {

constexpr double kPi = std::numbers::pi;

using Sos = std::array<double, 6>;

// Transposed direct-form II, one section at a time, in place.
void sosfilt_inplace(const std::vector<Sos>& sos, std::vector<double>& x,
                     const std::vector<std::array<double, 2>>& zi) {
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto& c = sos[s];
    double z1 = zi[s][0];
    double z2 = zi[s][1];
    for (double& v : x) {
      const double in = v;
      const double out = c[0] * in + z1;
      z1 = c[1] * in - c[4] * out + z2;
      z2 = c[2] * in - c[5] * out;
      v = out;
    }
  }
}

// Steady-state section states for a unit step, scaled by the DC gain of the
// preceding sections.
std::vector<std::array<double, 2>> sosfilt_zi(const std::vector<Sos>& sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double scale = 1.0;
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto& c = sos[s];
    const double gain = (c[0] + c[1] + c[2]) / (1.0 + c[4] + c[5]);
    zi[s][0] = scale * (gain - c[0]);
    zi[s][1] = scale * (c[2] - c[5] * gain);
    scale *= gain;
  }
  return zi;
}

std::vector<double> sosfiltfilt(const std::vector<Sos>& sos, std::span<const double> x,
                                std::size_t padlen) {
  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) {
    ext[i] = 2.0 * x[0] - x[padlen - i];
    ext[n + padlen + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(padlen));

  const auto zi = sosfilt_zi(sos);
  auto scaled = [&](double x0) {
    auto z = zi;
    for (auto& s : z) {
      s[0] *= x0;
      s[1] *= x0;
    }
    return z;
  };
  sosfilt_inplace(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  sosfilt_inplace(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen),
          ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

struct GridBasis {
  std::vector<double> window;
  std::vector<double> omega;  // rad/sample per bin
  double window_energy = 0.0;
};

GridBasis make_basis(std::size_t n, double fs, const FrequencyGrid& grid) {
  grid.validate();
  if (!(fs > 2.0 * grid.hi)) {
    throw SignalError("power_spectrum: sampling rate " + std::to_string(fs) +
                      " Hz is too low for a band reaching " + std::to_string(grid.hi) + " Hz");
  }
  GridBasis b;
  b.window.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    b.window[t] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(t) /
                                       static_cast<double>(n - 1));
    b.window_energy += b.window[t] * b.window[t];
  }
  for (double hz : grid.bins_hz()) b.omega.push_back(2.0 * kPi * hz / fs);
  if (b.omega.empty()) throw SignalError("power_spectrum: frequency grid is empty");
  return b;
}

std::vector<double> windowed_centered(std::span<const double> x, const GridBasis& b) {
  const double mu = mean(x);
  std::vector<double> z(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) z[t] = b.window[t] * (x[t] - mu);
  return z;
}

}  // namespace

PulseSignal::PulseSignal(std::vector<double> s, double rate) : samples(std::move(s)), fs(rate) {}

void PulseSignal::validate() const {
  if (samples.size() < 2) throw SignalError("PulseSignal: need at least 2 samples");
  if (!(fs > 0.0) || !std::isfinite(fs)) throw SignalError("PulseSignal: fs must be positive");
  for (double v : samples) {
    if (!std::isfinite(v)) throw SignalError("PulseSignal: non-finite sample");
  }
}

void FrequencyGrid::validate() const {
  if (!(lo > 0.0) || !(hi > lo)) throw SignalError("FrequencyGrid: need 0 < lo < hi");
  if (!(bin_bpm > 0.0)) throw SignalError("FrequencyGrid: bin_bpm must be positive");
}

std::vector<double> FrequencyGrid::bins_bpm() const {
  validate();
  std::vector<double> out;
  const double eps = 1e-9 * bin_bpm;
  const auto first = static_cast<long>(std::ceil((lo_bpm() - eps) / bin_bpm));
  for (long i = first;; ++i) {
    const double bpm = static_cast<double>(i) * bin_bpm;
    if (bpm > hi_bpm() + eps) break;
    out.push_back(bpm);
  }
  return out;
}

std::vector<double> FrequencyGrid::bins_hz() const {
  auto v = bins_bpm();
  for (double& x : v) x /= 60.0;
  return v;
}

std::size_t FrequencyGrid::bin_index(double bpm) const {
  if (!contains_bpm(bpm)) {
    throw SignalError("FrequencyGrid: " + std::to_string(bpm) + " BPM is outside the band [" +
                      std::to_string(lo_bpm()) + ", " + std::to_string(hi_bpm()) + "]");
  }
  const auto bins = bins_bpm();
  std::size_t best = 0;
  for (std::size_t i = 1; i < bins.size(); ++i) {
    if (std::abs(bins[i] - bpm) < std::abs(bins[best] - bpm)) best = i;
  }
  return best;
}

std::vector<Sos> butter_bandpass_sos(int order, double lo_hz, double hi_hz, double fs) {
  using C = std::complex<double>;
  if (order < 1) throw SignalError("butter_bandpass_sos: order must be >= 1");
  if (!(lo_hz > 0.0 && hi_hz > lo_hz && hi_hz < fs / 2.0)) {
    throw SignalError("butter_bandpass_sos: need 0 < lo < hi < fs/2");
  }
  // Analog prototype, prewarped band edges, low-pass to band-pass, bilinear.
  const double w1 = 2.0 * fs * std::tan(kPi * lo_hz / fs);
  const double w2 = 2.0 * fs * std::tan(kPi * hi_hz / fs);
  const double bw = w2 - w1;
  const double w0 = std::sqrt(w1 * w2);

  std::vector<C> poles;
  for (int k = 0; k < order; ++k) {
    const C p = std::polar(1.0, kPi * (2.0 * k + order + 1) / (2.0 * order));
    const C pl = p * (bw / 2.0);
    const C root = std::sqrt(pl * pl - C(w0 * w0, 0.0));
    poles.push_back(pl + root);
    poles.push_back(pl - root);
  }
  double gain = std::pow(bw, order);
  const double fs2 = 2.0 * fs;
  C num(1.0, 0.0);
  C den(1.0, 0.0);
  for (int k = 0; k < order; ++k) num *= C(fs2, 0.0);  // analog zeros at s = 0
  for (const C& p : poles) den *= (C(fs2, 0.0) - p);
  gain *= (num / den).real();

  std::vector<C> dpoles;
  for (const C& p : poles) dpoles.push_back((C(fs2, 0.0) + p) / (C(fs2, 0.0) - p));

  // Keep one pole of each conjugate pair (upper half plane).
  std::vector<C> upper;
  for (const C& p : dpoles) {
    if (p.imag() > 0.0) upper.push_back(p);
  }
  if (upper.size() != static_cast<std::size_t>(order)) {
    throw SignalError("butter_bandpass_sos: unexpected real poles");
  }
  std::sort(upper.begin(), upper.end(),
            [](const C& a, const C& b) { return std::abs(a) < std::abs(b); });

  std::vector<Sos> sos;
  for (const C& p : upper) {
    // Each section carries one zero at z = 1 and one at z = -1.
    sos.push_back({1.0, 0.0, -1.0, 1.0, -2.0 * p.real(), std::norm(p)});
  }
  for (int i = 0; i < 3; ++i) sos.front()[i] *= gain;
  return sos;
}

PulseSignal bandpass(const PulseSignal& sig, const FrequencyGrid& grid) {
  sig.validate();
  grid.validate();
  if (sig.size() < kMinBandpassLength) {
    throw SignalError("bandpass: signal of length " + std::to_string(sig.size()) +
                      " is too short for an order-" + std::to_string(kBandpassOrder) +
                      " filter (need >= " + std::to_string(kMinBandpassLength) + ")");
  }
  if (!(sig.fs > 2.0 * grid.hi)) throw SignalError("bandpass: fs must exceed 2*hi");
  const auto sos = butter_bandpass_sos(kBandpassOrder, grid.lo, grid.hi, sig.fs);
  return {sosfiltfilt(sos, sig.samples, sig.size() - 1), sig.fs};
}

Spectrum power_spectrum(const PulseSignal& sig, const FrequencyGrid& grid) {
  sig.validate();
  const auto basis = make_basis(sig.size(), sig.fs, grid);
  const auto z = windowed_centered(sig.samples, basis);
  Spectrum out;
  out.freqs = grid.bins_hz();
  out.power.resize(basis.omega.size());
  for (std::size_t j = 0; j < basis.omega.size(); ++j) {
    double re = 0.0;
    double im = 0.0;
    for (std::size_t t = 0; t < z.size(); ++t) {
      const double a = basis.omega[j] * static_cast<double>(t);
      re += z[t] * std::cos(a);
      im -= z[t] * std::sin(a);
    }
    out.power[j] = (re * re + im * im) / basis.window_energy;
  }
  return out;
}

std::vector<double> power_spectrum_backward(const PulseSignal& sig, const FrequencyGrid& grid,
                                            std::span<const double> d_power) {
  const auto basis = make_basis(sig.size(), sig.fs, grid);
  if (d_power.size() != basis.omega.size()) {
    throw SignalError("power_spectrum_backward: gradient size does not match the grid");
  }
  const auto z = windowed_centered(sig.samples, basis);
  const std::size_t n = z.size();
  std::vector<double> dz(n, 0.0);
  for (std::size_t j = 0; j < basis.omega.size(); ++j) {
    if (d_power[j] == 0.0) continue;
    double re = 0.0;
    double im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = basis.omega[j] * static_cast<double>(t);
      re += z[t] * std::cos(a);
      im -= z[t] * std::sin(a);
    }
    const double s = 2.0 * d_power[j] / basis.window_energy;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = basis.omega[j] * static_cast<double>(t);
      dz[t] += s * (re * std::cos(a) - im * std::sin(a));
    }
  }
  // z_t = w_t (x_t - mean(x))
  double wdz = 0.0;
  for (std::size_t t = 0; t < n; ++t) wdz += basis.window[t] * dz[t];
  wdz /= static_cast<double>(n);
  std::vector<double> dx(n);
  for (std::size_t t = 0; t < n; ++t) dx[t] = basis.window[t] * dz[t] - wdz;
  return dx;
}

HRValue estimate_hr(const PulseSignal& sig, const FrequencyGrid& grid) {
  const auto spec = power_spectrum(sig, grid);
  std::size_t best = 0;
  for (std::size_t j = 1; j < spec.power.size(); ++j) {
    if (spec.power[j] > spec.power[best]) best = j;
  }
  if (!(spec.power[best] > 0.0)) throw SignalError("estimate_hr: no dominant frequency");
  return {60.0 * spec.freqs[best]};
}

SnrValue snr_db(const PulseSignal& sig, HRValue hr_gt, const FrequencyGrid& grid) {
  if (!grid.contains_bpm(hr_gt.bpm)) {
    throw SignalError("snr_db: ground-truth HR " + std::to_string(hr_gt.bpm) +
                      " BPM is outside the band");
  }
  const auto spec = power_spectrum(sig, grid);
  const double f0 = hr_gt.bpm / 60.0;
  const double half = 0.1;
  double p_in = 0.0;
  double p_out = 0.0;
  for (std::size_t j = 0; j < spec.freqs.size(); ++j) {
    const double f = spec.freqs[j];
    // The harmonic window is implicitly clipped to the band because only
    // in-band bins exist.
    const bool in_window =
        std::abs(f - f0) <= half + 1e-12 || std::abs(f - 2.0 * f0) <= half + 1e-12;
    (in_window ? p_in : p_out) += spec.power[j];
  }
  if (p_out == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(p_in / p_out), false};
}

std::vector<double> moving_average(std::span<const double> x, std::size_t window) {
  if (window % 2 == 0) ++window;
  const std::size_t n = x.size();
  if (n < 2) return {x.begin(), x.end()};
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  auto at = [&](std::ptrdiff_t i) -> double {
    // Odd extension about the end points; reflect repeatedly if needed.
    if (i < 0) {
      const std::ptrdiff_t j = std::min(-i, sn - 1);
      return 2.0 * x[0] - x[static_cast<std::size_t>(j)];
    }
    if (i >= sn) {
      const std::ptrdiff_t j = std::max<std::ptrdiff_t>(2 * (sn - 1) - i, 0);
      return 2.0 * x[n - 1] - x[static_cast<std::size_t>(j)];
    }
    return x[static_cast<std::size_t>(i)];
  };
  std::vector<double> out(n);
  for (std::ptrdiff_t t = 0; t < sn; ++t) {
    double acc = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) acc += at(t + k);
    out[static_cast<std::size_t>(t)] = acc / static_cast<double>(2 * half + 1);
  }
  return out;
}

DenoisedPulse denoise_ppg(const PulseSignal& raw, const FrequencyGrid& grid) {
  raw.validate();
  if (raw.size() < 60) throw SignalError("denoise_ppg: need at least 60 samples");
  DenoisedPulse out;
  out.signal.fs = raw.fs;
  const double scale = std::max(1.0, std::abs(mean(raw.samples)));
  if (stddev(raw.samples) <= 1e-12 * scale) {
    out.signal.samples.assign(raw.size(), 0.0);
    out.zero_variance = true;
    return out;
  }
  const auto window = static_cast<std::size_t>(2.0 * std::round(raw.fs)) + 1;
  const auto trend = moving_average(raw.samples, window);
  PulseSignal detrended{raw.samples, raw.fs};
  for (std::size_t t = 0; t < raw.size(); ++t) detrended.samples[t] -= trend[t];
  const auto filtered = bandpass(detrended, grid);
  if (stddev(filtered.samples) <= 1e-12 * scale) {
    out.signal.samples.assign(raw.size(), 0.0);
    out.zero_variance = true;
    return out;
  }
  out.signal = normalize(filtered);
  return out;
}

PulseSignal normalize(const PulseSignal& sig) {
  const double mu = mean(sig.samples);
  const double sd = stddev(sig.samples);
  PulseSignal out{sig.samples, sig.fs};
  for (double& v : out.samples) v = sd > 0.0 ? (v - mu) / sd : 0.0;
  return out;
}

std::pair<std::size_t, std::size_t> valid_region(std::size_t n, int k) {
  const auto sn = static_cast<long>(n);
  if (std::abs(static_cast<long>(k)) >= sn) {
    throw SignalError("shift: |k| must be smaller than the signal length");
  }
  const long first = std::max(0L, static_cast<long>(k));
  const long last = std::min(sn, sn + k);
  return {static_cast<std::size_t>(first), static_cast<std::size_t>(last)};
}

PulseSignal shift(const PulseSignal& sig, int k) {
  const auto [first, last] = valid_region(sig.size(), k);
  PulseSignal out{std::vector<double>(sig.size(), 0.0), sig.fs};
  for (std::size_t t = first; t < last; ++t) {
    out.samples[t] = sig.samples[static_cast<std::size_t>(static_cast<long>(t) - k)];
  }
  return out;
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw SignalError("mse: length mismatch");
  if (a.empty()) throw SignalError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double mse(const PulseSignal& a, const PulseSignal& b) { return mse(a.samples, b.samples); }

double shifted_mse(std::span<const double> pred, std::span<const double> gt, int k) {
  if (pred.size() != gt.size()) throw SignalError("shifted_mse: length mismatch");
  const auto [first, last] = valid_region(pred.size(), k);
  return mse(pred.subspan(first, last - first),
             gt.subspan(static_cast<std::size_t>(static_cast<long>(first) - k), last - first));
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double mu = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - mu) * (v - mu);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw SignalError("pearson: length mismatch");
  const double ma = mean(a);
  const double mb = mean(b);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

void write_pulse_csv(const std::filesystem::path& path, const PulseSignal& sig,
                     const std::string& value_column) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw SignalError("cannot write " + path.string());
  os << "t_sec," << value_column << '\n';
  os << std::setprecision(17);
  for (std::size_t t = 0; t < sig.size(); ++t) {
    os << static_cast<double>(t) / sig.fs << ',' << sig.samples[t] << '\n';
  }
  if (!os) throw SignalError("write failed: " + path.string());
}

PulseSignal read_pulse_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw SignalError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("t_sec,", 0) != 0) {
    throw SignalError(path.string() + ": expected a `t_sec,<value>` header");
  }
  std::vector<double> t;
  std::vector<double> v;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw SignalError(path.string() + ": malformed row");
    try {
      t.push_back(std::stod(line.substr(0, comma)));
      v.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw SignalError(path.string() + ": malformed number in row `" + line + "`");
    }
  }
  if (v.size() < 2) throw SignalError(path.string() + ": need at least two samples");
  const double span = t.back() - t.front();
  if (!(span > 0.0)) throw SignalError(path.string() + ": timestamps must increase");
  PulseSignal out{std::move(v), static_cast<double>(t.size() - 1) / span};
  out.validate();
  return out;
}

PulseSignal resample_linear(const PulseSignal& sig, double fs_out, std::size_t n_out) {
  sig.validate();
  std::vector<double> out(n_out);
  const double last = static_cast<double>(sig.size() - 1);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = std::min(static_cast<double>(i) / fs_out * sig.fs, last);
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const std::size_t i1 = std::min(i0 + 1, sig.size() - 1);
    const double frac = pos - static_cast<double>(i0);
    out[i] = sig.samples[i0] * (1.0 - frac) + sig.samples[i1] * frac;
  }
  return {std::move(out), fs_out};
}

}  // namespace pmag
