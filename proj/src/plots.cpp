// Copyright 2026 The CMSS Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cmss/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "cmss/errors.hpp"

namespace cmss {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kMargin = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::ofstream open_svg(const std::filesystem::path& path, const std::string& title) {
  std::ofstream out(path);
  if (!out) throw ArtifactError(fmt::format("cannot write {}", path.string()));
  out << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
      kWidth, kHeight, kWidth / 2, escape(title));
  return out;
}

}  // namespace

void write_bar_chart_svg(const std::vector<Bar>& bars, const std::string& title,
                         const std::filesystem::path& path) {
  std::ofstream out = open_svg(path, title);
  double top = 0.0;
  for (const auto& b : bars) top = std::max(top, b.value);
  if (top <= 0.0) top = 1.0;
  const double plot_w = kWidth - 2 * kMargin;
  const double plot_h = kHeight - 2 * kMargin;
  const double slot = bars.empty() ? plot_w : plot_w / static_cast<double>(bars.size());
  out << fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", kMargin,
                     kHeight - kMargin, kWidth - kMargin);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = plot_h * bars[i].value / top;
    const double x = kMargin + slot * static_cast<double>(i) + slot * 0.15;
    out << fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n", x,
                       kHeight - kMargin - h, slot * 0.7, h, kPalette[i % 8]);
    out << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", x + slot * 0.35,
                       kHeight - kMargin + 16, escape(bars[i].label));
    out << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", x + slot * 0.35,
                       kHeight - kMargin - h - 4, bars[i].value);
  }
  out << "</svg>\n";
}

void write_line_plot_svg(const std::vector<Series>& series, const std::string& title,
                         const std::filesystem::path& path) {
  std::ofstream out = open_svg(path, title);
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double plot_w = kWidth - 2 * kMargin;
  const double plot_h = kHeight - 2 * kMargin;
  auto px = [&](double x) { return kMargin + plot_w * (x - x0) / (x1 - x0); };
  auto py = [&](double y) { return kHeight - kMargin - plot_h * (y - y0) / (y1 - y0); };
  out << fmt::format(
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", kMargin,
      kMargin, plot_w, plot_h);
  out << fmt::format("<text x=\"{}\" y=\"{}\">{:.4g}</text>\n", 4, kHeight - kMargin, y0);
  out << fmt::format("<text x=\"{}\" y=\"{}\">{:.4g}</text>\n", 4, kMargin + 4, y1);
  out << fmt::format("<text x=\"{}\" y=\"{}\">{:.4g}</text>\n", kMargin, kHeight - kMargin + 16, x0);
  out << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.4g}</text>\n", kWidth - kMargin,
                     kHeight - kMargin + 16, x1);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string points;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
    }
    out << fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       kPalette[k % 8], points);
    out << fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", kWidth - kMargin + 4,
                       kMargin + 14 * static_cast<double>(k + 1), kPalette[k % 8], escape(s.name));
  }
  out << "</svg>\n";
}

}  // namespace cmss
