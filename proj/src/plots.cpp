#include "petrec/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace petrec {

void write_ppm(const RgbImage& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (const auto& p : img.pixels) out.write(reinterpret_cast<const char*>(p.data()), 3);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Rgb blue_to_red(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
  if (!(t > 0.0)) return {0, 0, 255};
  t = std::min(t, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  Rgb c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
  return c;
}

RgbImage difference_map(const Image& a, const Image& b, double vmax, Index zoom) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("difference_map: shape mismatch");
  if (!(vmax > 0.0)) throw std::invalid_argument("difference_map: vmax must be > 0");
  zoom = std::max<Index>(zoom, 1);
  RgbImage img(a.cols() * zoom, a.rows() * zoom);
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x)
      img.at(x, y) = blue_to_red(std::abs(static_cast<double>(a(y / zoom, x / zoom)) - b(y / zoom, x / zoom)) / vmax);
  return img;
}

namespace {

void hline(RgbImage& img, Index y, Index x0, Index x1, Rgb c, bool dashed) {
  if (y < 0 || y >= img.height) return;
  for (Index x = std::max<Index>(x0, 0); x <= std::min(x1, img.width - 1); ++x)
    if (!dashed || (x / 6) % 2 == 0) img.at(x, y) = c;
}

void vline(RgbImage& img, Index x, Index y0, Index y1, Rgb c) {
  if (x < 0 || x >= img.width) return;
  for (Index y = std::max<Index>(y0, 0); y <= std::min(y1, img.height - 1); ++y) img.at(x, y) = c;
}

void marker(RgbImage& img, Index cx, Index cy, Rgb c) {
  for (Index dy = -2; dy <= 2; ++dy)
    for (Index dx = -2; dx <= 2; ++dx) {
      const Index x = cx + dx, y = cy + dy;
      if (std::abs(dx) + std::abs(dy) <= 2 && x >= 0 && y >= 0 && x < img.width && y < img.height) img.at(x, y) = c;
    }
}

}  // namespace

RgbImage bland_altman_plot(const std::vector<ScatterSeries>& series, Index width, Index height) {
  RgbImage img(width, height);
  double xmin = 1e300, xmax = -1e300, ymax = 0.0;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      xmin = std::min(xmin, p.mean);
      xmax = std::max(xmax, p.mean);
      ymax = std::max(ymax, std::abs(p.diff));
    }
    ymax = std::max({ymax, std::abs(s.stats.loa_low), std::abs(s.stats.loa_high)});
  }
  if (xmin > xmax) xmin = 0.0, xmax = 1.0;
  if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
  if (ymax < 1e-12) ymax = 1.0;
  ymax *= 1.1;
  const double xpad = 0.05 * (xmax - xmin);
  xmin -= xpad;
  xmax += xpad;

  const Index left = 40, right = width - 10, top = 10, bottom = height - 30;
  const auto px = [&](double v) { return left + static_cast<Index>(std::lround((v - xmin) / (xmax - xmin) * (right - left))); };
  const auto py = [&](double v) { return top + static_cast<Index>(std::lround((ymax - v) / (2 * ymax) * (bottom - top))); };

  const Rgb axis{0, 0, 0}, grid{200, 200, 200};
  hline(img, py(0.0), left, right, grid, false);
  vline(img, left, top, bottom, axis);
  hline(img, bottom, left, right, axis, false);
  for (const auto& s : series) {
    hline(img, py(s.stats.mean_diff), left, right, s.color, false);
    hline(img, py(s.stats.loa_low), left, right, s.color, true);
    hline(img, py(s.stats.loa_high), left, right, s.color, true);
    for (const auto& p : s.points) marker(img, px(p.mean), py(p.diff), s.color);
  }
  return img;
}

}  // namespace petrec
