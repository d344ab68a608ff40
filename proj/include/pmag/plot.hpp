#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pmag {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::array<std::uint8_t, 3> rgb{31, 119, 180};
  bool markers = false;
};

struct PlotSpec {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  int width = 800;
  int height = 480;
};

/// Static line chart written as PNG. Non-finite points are skipped.
void plot_lines(const std::vector<Series>& series, const PlotSpec& spec,
                const std::filesystem::path& png);

/// A small fixed palette for consecutive series.
std::array<std::uint8_t, 3> palette(std::size_t i);

}  // namespace pmag
