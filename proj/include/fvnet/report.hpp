#pragma once

// Plot-ready CSV outputs. Doubles are written with 17 significant digits so
// two runs compare equal as text exactly when they are bitwise equal.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fvnet/error.hpp"
#include "fvnet/train.hpp"

namespace fvnet {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::ostringstream out;
  out << "epoch,split,loss,accuracy\n";
  for (const auto& r : rows) {
    out << r.epoch << "," << r.split << "," << format_double(r.loss) << "," << format_double(r.accuracy) << "\n";
  }
  return out.str();
}

/// One row per video: id, label, predicted class, then the crop-averaged
/// score of every class.
inline std::string predictions_csv(const std::vector<std::string>& ids, const std::vector<std::size_t>& labels,
                                   const std::vector<VideoClassification>& results) {
  if (ids.size() != results.size() || labels.size() != results.size()) {
    throw ShapeError("predictions: ids, labels and results differ in length");
  }
  std::ostringstream out;
  out << "video,label,predicted";
  const auto m = results.empty() ? 0 : static_cast<std::size_t>(results.front().scores.size());
  for (std::size_t j = 0; j < m; ++j) out << ",score_" << j;
  out << "\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    out << ids[i] << "," << labels[i] << "," << results[i].predicted;
    for (Eigen::Index j = 0; j < results[i].scores.size(); ++j) out << "," << format_double(results[i].scores(j));
    out << "\n";
  }
  return out.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace fvnet
