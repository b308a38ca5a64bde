/* Copyright 2026 The RC2L Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "rc2l/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace rc2l {
namespace {

constexpr double kPalette[][3] = {{0.12, 0.47, 0.71}, {1.0, 0.5, 0.05}, {0.17, 0.63, 0.17},
                                  {0.84, 0.15, 0.16}, {0.58, 0.4, 0.74}, {0.55, 0.34, 0.29}};

Image blank(int h, int w) {
  Image img;
  img.channels = 3;
  img.height = h;
  img.width = w;
  img.pixels = Matrix::Ones(3, static_cast<Eigen::Index>(h) * w);
  return img;
}

void put(Image& img, int y, int x, const double* rgb) {
  if (y < 0 || x < 0 || y >= img.height || x >= img.width) return;
  for (int c = 0; c < 3; ++c) img.pixels(c, y * img.width + x) = rgb[c];
}

void line(Image& img, int x0, int y0, int x1, int y1, const double* rgb) {
  const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    put(img, static_cast<int>(std::lround(y0 + t * (y1 - y0))), static_cast<int>(std::lround(x0 + t * (x1 - x0))), rgb);
  }
}

}  // namespace

std::vector<Series> loss_series(const std::vector<StepMetrics>& metrics) {
  std::vector<Series> s = {{"L_label", {}, {}}, {"L_RCC", {}, {}}, {"L_SMC", {}, {}},
                           {"L_RMC", {}, {}},   {"L_RFC", {}, {}}, {"total", {}, {}}};
  for (const StepMetrics& m : metrics) {
    const double v[] = {m.label, m.parts.rcc, m.parts.smc, m.parts.rmc, m.parts.rfc, m.total};
    for (int k = 0; k < 6; ++k) {
      s[k].x.push_back(m.step);
      s[k].y.push_back(v[k]);
    }
  }
  return s;
}

std::vector<double> moving_average(const std::vector<double>& y, int window) {
  require(window >= 1, "moving_average: window must be >= 1");
  std::vector<double> out(y.size());
  double sum = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum += y[i];
    if (i >= static_cast<std::size_t>(window)) sum -= y[i - window];
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

Image render_panels(const std::vector<Series>& series, int panel_width, int panel_height) {
  require(panel_width >= 16 && panel_height >= 16, "render_panels: panel too small");
  const int cols = 3;
  const int rows = std::max(1, static_cast<int>((series.size() + cols - 1) / cols));
  Image img = blank(rows * panel_height, cols * panel_width);
  const double axis[3] = {0.3, 0.3, 0.3};
  const int pad = 8;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const int ox = static_cast<int>(k % cols) * panel_width, oy = static_cast<int>(k / cols) * panel_height;
    const int x0 = ox + pad, x1 = ox + panel_width - pad, y0 = oy + pad, y1 = oy + panel_height - pad;
    line(img, x0, y1, x1, y1, axis);
    line(img, x0, y0, x0, y1, axis);
    if (s.y.size() < 2) continue;
    const auto [ymin_it, ymax_it] = std::minmax_element(s.y.begin(), s.y.end());
    double lo = *ymin_it, hi = *ymax_it;
    if (!(hi > lo)) hi = lo + 1;
    const double xlo = s.x.front(), xhi = s.x.back() > xlo ? s.x.back() : xlo + 1;
    const double* rgb = kPalette[k % 6];
    auto px = [&](std::size_t i) { return x0 + static_cast<int>(std::lround((s.x[i] - xlo) / (xhi - xlo) * (x1 - x0))); };
    auto py = [&](std::size_t i) { return y1 - static_cast<int>(std::lround((s.y[i] - lo) / (hi - lo) * (y1 - y0))); };
    for (std::size_t i = 1; i < s.y.size(); ++i)
      if (std::isfinite(s.y[i]) && std::isfinite(s.y[i - 1])) line(img, px(i - 1), py(i - 1), px(i), py(i), rgb);
  }
  return img;
}

Image render_bars(const std::vector<double>& values, int width, int height) {
  require(!values.empty(), "render_bars: no values");
  Image img = blank(height, width);
  double hi = *std::max_element(values.begin(), values.end());
  if (!(hi > 0)) hi = 1;
  const int slot = width / static_cast<int>(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    const int bar = static_cast<int>(std::lround(std::max(0.0, values[k]) / hi * (height - 10)));
    for (int x = static_cast<int>(k) * slot + slot / 6; x < static_cast<int>(k + 1) * slot - slot / 6; ++x)
      for (int y = height - bar; y < height; ++y) put(img, y, x, kPalette[k % 6]);
  }
  return img;
}

std::string format_series_summary(const std::vector<Series>& series, int window) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-8s %12s %12s\n", "series", "first", "last");
  os << buf;
  for (const Series& s : series) {
    const int n = static_cast<int>(s.y.size());
    const int w = std::min(window, n);
    double first = 0, last = 0;
    for (int i = 0; i < w; ++i) {
      first += s.y[i];
      last += s.y[n - w + i];
    }
    if (w > 0) {
      first /= w;
      last /= w;
    }
    std::snprintf(buf, sizeof(buf), "%-8s %12.6f %12.6f\n", s.name.c_str(), first, last);
    os << buf;
  }
  return os.str();
}

}  // namespace rc2l
