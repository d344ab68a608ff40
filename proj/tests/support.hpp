#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pmag/models.hpp"
#include "pmag/signal.hpp"

namespace pmag::test {

inline std::vector<double> tone(std::size_t n, double fs, double hz, double amp = 1.0,
                                double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / fs + phase);
  }
  return x;
}

inline std::vector<double> gaussian(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> x(n);
  for (auto& v : x) v = nd(rng);
  return x;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max(floor, std::max(std::abs(a), std::abs(b)));
}

/// Smallest relative error between `analytic` and central differences of f()
/// over a ladder of steps (x is restored). The networks are piecewise smooth
/// with many ReLU kinks and steep instance-norm curvature, so a step that is
/// fine for one entry straddles a kink for another.
template <class F>
double fd_rel_err(F&& f, double& x, double analytic, double floor = 1e-6) {
  const double x0 = x;
  auto at = [&](double d) {
    x = x0 + d;
    return f();
  };
  double best = std::numeric_limits<double>::infinity();
  for (double h : {1e-6, 1e-7, 1e-8, 1e-5}) {
    const double fp = at(h), fm = at(-h);
    best = std::min(best, rel_err((fp - fm) / (2.0 * h), analytic, floor));
    if (h == 1e-6) {
      const double five = (8.0 * (fp - fm) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      best = std::min(best, rel_err(five, analytic, floor));
    }
    if (best <= 1e-6) break;
  }
  x = x0;
  return best;
}

/// Random clip with values in [lo, hi].
inline VideoClip random_clip(int t, int h, int w, std::uint64_t seed, float lo = 0.2f,
                             float hi = 0.8f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  VideoClip c(t, h, w, 30.0);
  for (auto& v : c.rgb) v = u(rng);
  return c;
}

/// Fresh scratch directory below the working directory, emptied first.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::current_path() / "test_scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace pmag::test
