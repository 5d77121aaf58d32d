// Copyright 2026 The fedshield Authors
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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fedshield/errors.hpp"
#include "fedshield/experiment/runner.hpp"

namespace fedshield::experiment {
namespace {

constexpr double kWidth = 640.0, kHeight = 480.0;
constexpr double kLeft = 70.0, kRight = 150.0, kTop = 30.0, kBottom = 60.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

struct Point {
  double x;
  double y;
};

std::string fmt(double v, const char* spec = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

double parse_number(const std::string& s) {
  if (s == "nan") return std::nan("");
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw Error("plot: '" + s + "' is not a number");
  }
}

std::pair<double, double> padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

void cmd_plot(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out) {
  if (csvs.empty()) throw Error("plot: no input CSV files");
  std::map<std::string, std::vector<Point>> series;
  std::size_t rows = 0;
  for (const auto& path : csvs) {
    const auto table = io::read_csv(path);
    for (const auto& name : metrics_columns()) {
      if (std::find(table.header.begin(), table.header.end(), name) == table.header.end()) {
        throw Error("plot: " + path.string() + " lacks column '" + name + "'");
      }
    }
    const auto cd = table.column("defense"), cx = table.column("client_acc"),
               cy = table.column("recon_mse_norm");
    for (const auto& row : table.rows) {
      ++rows;
      const double x = parse_number(row.at(cx)), y = parse_number(row.at(cy));
      if (std::isfinite(x) && std::isfinite(y)) series[row.at(cd)].push_back({x, y});
      else series[row.at(cd)];
    }
  }
  if (rows == 0) throw Error("plot: input CSV files hold no rows");

  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& [_, pts] : series) {
    for (const auto& p : pts) {
      xlo = std::min(xlo, p.x);
      xhi = std::max(xhi, p.x);
      ylo = std::min(ylo, p.y);
      yhi = std::max(yhi, p.y);
    }
  }
  if (!std::isfinite(xlo)) xlo = xhi = ylo = yhi = 0.0;
  std::tie(xlo, xhi) = padded_range(xlo, xhi);
  std::tie(ylo, yhi) = padded_range(ylo, yhi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xlo) / (xhi - xlo) * pw; };
  auto sy = [&](double y) { return kTop + (yhi - y) / (yhi - ylo) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xlo + (xhi - xlo) * i / 4.0, yv = ylo + (yhi - ylo) * i / 4.0;
    svg << "<text x=\"" << fmt(sx(xv)) << "\" y=\"" << fmt(kTop + ph + 18)
        << "\" text-anchor=\"middle\">" << fmt(xv, "%.3g") << "</text>\n";
    svg << "<text x=\"" << fmt(kLeft - 6) << "\" y=\"" << fmt(sy(yv) + 4)
        << "\" text-anchor=\"end\">" << fmt(yv, "%.3g") << "</text>\n";
  }
  svg << "<text class=\"xlabel\" x=\"" << fmt(kLeft + pw / 2) << "\" y=\"" << fmt(kHeight - 15)
      << "\" text-anchor=\"middle\">client accuracy</text>\n";
  svg << "<text class=\"ylabel\" x=\"18\" y=\"" << fmt(kTop + ph / 2)
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << fmt(kTop + ph / 2)
      << ")\">MSE</text>\n";

  std::size_t k = 0;
  for (const auto& [name, pts] : series) {
    const char* color = kPalette[k % std::size(kPalette)];
    svg << "<g class=\"series\" data-defense=\"" << name << "\">\n";
    for (const auto& p : pts) {
      svg << "<circle cx=\"" << fmt(sx(p.x)) << "\" cy=\"" << fmt(sy(p.y))
          << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    }
    svg << "</g>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    svg << "<g class=\"legend\"><circle cx=\"" << fmt(kWidth - kRight + 15) << "\" cy=\""
        << fmt(ly) << "\" r=\"4\" fill=\"" << color << "\"/><text x=\""
        << fmt(kWidth - kRight + 25) << "\" y=\"" << fmt(ly + 4) << "\">" << name
        << "</text></g>\n";
    ++k;
  }
  svg << "</svg>\n";

  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream file(out, std::ios::binary);
  if (!file) throw Error(out.string() + ": cannot write");
  file << svg.str();
}

}  // namespace fedshield::experiment
