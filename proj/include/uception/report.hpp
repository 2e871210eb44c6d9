#pragma once

// Text reports: one flat key=value record per volume and a summary table
// with rows Dice, Sensitivity, Avg. Hausdorff Dist.[mm] (mean ± sample std).

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "uception/metrics.hpp"

namespace uception {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for fewer than two values
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return r;
}

inline std::string format_real(double v, int digits = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string format_record(const std::string& name, const SegReport& r) {
  return "volume=" + name + " dice=" + format_real(r.dice) +
         " sensitivity=" + format_real(r.sensitivity) +
         " avg_hausdorff_mm=" + format_real(r.avg_hausdorff_mm) + " spacing_mm=" +
         format_real(r.voxel_spacing.d, 4) + "x" + format_real(r.voxel_spacing.h, 4) + "x" +
         format_real(r.voxel_spacing.w, 4);
}

struct ReportColumn {
  std::string title;
  std::vector<SegReport> reports;
};

inline std::string format_mean_std(const MeanStd& m) {
  return format_real(m.mean, 2) + " ± " + format_real(m.std, 2);
}

// Tab-separated; one column per method, rows Dice, Sensitivity, AHD.
inline std::string format_summary(const std::vector<ReportColumn>& columns) {
  std::string out = "metric";
  for (const auto& c : columns) out += "\t" + c.title;
  out += "\n";
  const std::pair<const char*, double SegReport::*> rows[] = {
      {"Dice", &SegReport::dice},
      {"Sensitivity", &SegReport::sensitivity},
      {"Avg. Hausdorff Dist.[mm]", &SegReport::avg_hausdorff_mm},
  };
  for (const auto& [label, member] : rows) {
    out += label;
    for (const auto& c : columns) {
      std::vector<double> v;
      for (const auto& r : c.reports) v.push_back(r.*member);
      out += "\t" + format_mean_std(mean_std(v));
    }
    out += "\n";
  }
  return out;
}

}  // namespace uception
