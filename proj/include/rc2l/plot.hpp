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
#ifndef RC2L_PLOT_HPP_
#define RC2L_PLOT_HPP_

#include <string>
#include <vector>

#include "rc2l/trainer.hpp"

namespace rc2l {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// The six logged loss series: L_label, L_RCC, L_SMC, L_RMC, L_RFC, total.
std::vector<Series> loss_series(const std::vector<StepMetrics>& metrics);

// Trailing moving average; the first window-1 points average what is available.
std::vector<double> moving_average(const std::vector<double>& y, int window);

// One panel per series on a 3-column grid, each with its own y range.
Image render_panels(const std::vector<Series>& series, int panel_width = 240, int panel_height = 140);

// Vertical bars in [0, max]; bar k uses palette colour k.
Image render_bars(const std::vector<double>& values, int width = 360, int height = 200);

// Per-series mean over the first and last `window` points.
std::string format_series_summary(const std::vector<Series>& series, int window = 50);

}  // namespace rc2l

#endif  // RC2L_PLOT_HPP_
