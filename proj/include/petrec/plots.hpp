#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "petrec/suvr.hpp"
#include "petrec/volume.hpp"

namespace petrec {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster, row-major.
struct RgbImage {
  Index width = 0;
  Index height = 0;
  std::vector<Rgb> pixels;

  RgbImage(Index w, Index h, Rgb fill = {255, 255, 255}) : width(w), height(h), pixels(static_cast<std::size_t>(w * h), fill) {}
  Rgb& at(Index x, Index y) { return pixels[static_cast<std::size_t>(y * width + x)]; }
  const Rgb& at(Index x, Index y) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
};

/// Binary PPM (P6).
void write_ppm(const RgbImage& img, const std::filesystem::path& path);

/// Blue (0) through cyan, green and yellow to red (1); input is clamped.
Rgb blue_to_red(double t);

/// |a - b| mapped through blue_to_red with `vmax` as the red end, each pixel
/// repeated `zoom` times per axis. Identical inputs give a uniformly blue map.
RgbImage difference_map(const Image& a, const Image& b, double vmax, Index zoom = 4);

struct ScatterSeries {
  std::vector<ScatterPoint> points;
  AgreementStats stats;
  Rgb color{0, 0, 0};
};

/// Bland-Altman plot: x = pair mean, y = difference, with horizontal lines at
/// the mean difference (solid) and the limits of agreement (dashed) per series.
RgbImage bland_altman_plot(const std::vector<ScatterSeries>& series, Index width = 480, Index height = 360);

}  // namespace petrec
