#include "pmag/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace pmag {

namespace {

cv::Scalar bgr(const std::array<std::uint8_t, 3>& rgb) { return {double(rgb[2]), double(rgb[1]), double(rgb[0])}; }

std::string tick_label(double v) {
  char buf[32];
  const double a = std::abs(v);
  if (a != 0.0 && (a < 1e-2 || a >= 1e5)) {
    std::snprintf(buf, sizeof buf, "%.1e", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.4g", v);
  }
  return buf;
}

// Roughly five "nice" tick positions covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(t);
  return out;
}

}  // namespace

std::array<std::uint8_t, 3> palette(std::size_t i) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 6> kColours{{{31, 119, 180},
                                                                         {214, 39, 40},
                                                                         {44, 160, 44},
                                                                         {148, 103, 189},
                                                                         {255, 127, 14},
                                                                         {23, 190, 207}}};
  return kColours[i % kColours.size()];
}

void plot_lines(const std::vector<Series>& series, const PlotSpec& spec,
                const std::filesystem::path& png) {
  double x0 = std::numeric_limits<double>::infinity();
  double x1 = -x0;
  double y0 = x0;
  double y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot_lines: x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0.0;
    x1 = 1.0;
    y0 = 0.0;
    y1 = 1.0;
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  cv::Mat img(spec.height, spec.width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 80;
  const int right = 20;
  const int top = 40;
  const int bottom = 60;
  const int pw = spec.width - left - right;
  const int ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  auto py = [&](double y) { return top + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)); };
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar black(0, 0, 0);
  const cv::Scalar grid(225, 225, 225);

  for (double t : ticks(x0, x1)) {
    cv::line(img, {px(t), top}, {px(t), top + ph}, grid, 1);
    cv::putText(img, tick_label(t), {px(t) - 15, top + ph + 18}, font, 0.4, black, 1, cv::LINE_AA);
  }
  for (double t : ticks(y0, y1)) {
    cv::line(img, {left, py(t)}, {left + pw, py(t)}, grid, 1);
    cv::putText(img, tick_label(t), {5, py(t) + 4}, font, 0.4, black, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, black, 1);
  cv::putText(img, spec.title, {left, 25}, font, 0.6, black, 1, cv::LINE_AA);
  cv::putText(img, spec.xlabel, {left + pw / 2 - 40, spec.height - 15}, font, 0.5, black, 1,
              cv::LINE_AA);
  cv::putText(img, spec.ylabel, {5, top - 8}, font, 0.45, black, 1, cv::LINE_AA);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar c = bgr(s.rgb);
    bool have_prev = false;
    cv::Point prev;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const cv::Point p(px(s.x[i]), py(s.y[i]));
      if (have_prev) cv::line(img, prev, p, c, 2, cv::LINE_AA);
      if (s.markers) cv::circle(img, p, 4, c, cv::FILLED, cv::LINE_AA);
      prev = p;
      have_prev = true;
    }
    const int ly = top + 18 + 18 * static_cast<int>(k);
    cv::line(img, {left + pw - 170, ly - 4}, {left + pw - 145, ly - 4}, c, 2, cv::LINE_AA);
    cv::putText(img, s.label, {left + pw - 140, ly}, font, 0.45, black, 1, cv::LINE_AA);
  }
  if (!png.parent_path().empty()) std::filesystem::create_directories(png.parent_path());
  if (!cv::imwrite(png.string(), img)) throw std::runtime_error("cannot write plot " + png.string());
}

}  // namespace pmag
