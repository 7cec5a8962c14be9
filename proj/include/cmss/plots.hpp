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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace cmss {

// Minimal SVG charts. Every chart the CLI draws also has a CSV twin; these
// exist only for eyeballing.

struct Bar {
  std::string label;
  double value;
};

void write_bar_chart_svg(const std::vector<Bar>& bars, const std::string& title,
                         const std::filesystem::path& path);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

void write_line_plot_svg(const std::vector<Series>& series, const std::string& title,
                         const std::filesystem::path& path);

}  // namespace cmss
