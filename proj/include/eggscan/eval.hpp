#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "eggscan/classes.hpp"
#include "eggscan/classifier.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/fusion.hpp"
#include "eggscan/patching.hpp"
#include "eggscan/preprocess.hpp"
#include "eggscan/rng.hpp"

namespace eggscan {

struct SplitSpec {
  double test_fraction = 0.4;
  std::uint64_t seed = 0;

  void check_valid() const {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw config_error("split.test_fraction must be in (0,1)");
  }
};

// round(fraction * n), half up. Reproduces the 60:40 counts 27/11/13/14
// from class sizes 67/27/32/36.
inline std::size_t test_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * n + 0.5));
}

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified split: per class, a seeded shuffle selects round(f*n) test
// items; the remainder trains. Index lists come back sorted; membership is
// what the seed determines.
inline DatasetSplit split_dataset(
    const std::vector<std::vector<std::size_t>>& items_per_class,
    const SplitSpec& spec) {
  spec.check_valid();
  DatasetSplit out;
  Rng rng(spec.seed);
  for (std::size_t k = 0; k < items_per_class.size(); ++k) {
    const auto& items = items_per_class[k];
    if (items.empty())
      throw config_error("split: class " + std::to_string(k) + " is empty");
    const std::size_t n_test = test_count(items.size(), spec.test_fraction);
    if (n_test == 0 || n_test >= items.size())
      throw config_error("split: class " + std::to_string(k) +
                         " would land entirely in one side");
    std::vector<std::size_t> shuffled = items;
    rng.shuffle(shuffled);
    out.test.insert(out.test.end(), shuffled.begin(),
                    shuffled.begin() + static_cast<long>(n_test));
    out.train.insert(out.train.end(),
                     shuffled.begin() + static_cast<long>(n_test),
                     shuffled.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// 5x5 tally, rows = true class, columns = predicted, order (AL,HD,FB,Tn,BG).
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(EggClass truth, EggClass predicted) {
    ++counts[static_cast<int>(truth)][static_cast<int>(predicted)];
  }
  std::uint64_t row_total(int r) const {
    std::uint64_t s = 0;
    for (int c = 0; c < kNumClasses; ++c) s += counts[r][c];
    return s;
  }
  std::uint64_t col_total(int c) const {
    std::uint64_t s = 0;
    for (int r = 0; r < kNumClasses; ++r) s += counts[r][c];
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (int i = 0; i < kNumClasses; ++i) s += counts[i][i];
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (int r = 0; r < kNumClasses; ++r) s += row_total(r);
    return s;
  }
};

inline ConfusionMatrix confusion_matrix(
    const std::vector<std::pair<EggClass, EggClass>>& pairs) {
  ConfusionMatrix m;
  for (const auto& [truth, predicted] : pairs) m.add(truth, predicted);
  return m;
}

// All values are percentages; nullopt marks a 0-denominator entry (rendered
// "-", as missing TNR appears in reports).
struct MetricsReport {
  std::optional<double> accuracy;
  std::array<std::optional<double>, kEggClassCount> tpr;
  std::optional<double> tnr;
  std::array<std::optional<double>, kEggClassCount> precision;
  std::optional<double> avg_precision;
};

inline MetricsReport compute_metrics(const ConfusionMatrix& m) {
  MetricsReport r;
  const std::uint64_t total = m.total();
  if (total > 0) r.accuracy = 100.0 * m.trace() / total;
  for (int c = 0; c < kEggClassCount; ++c) {
    const std::uint64_t row = m.row_total(c);
    if (row > 0) r.tpr[c] = 100.0 * m.counts[c][c] / row;
    const std::uint64_t col = m.col_total(c);
    if (col > 0) r.precision[c] = 100.0 * m.counts[c][c] / col;
  }
  const int bg = static_cast<int>(EggClass::BG);
  const std::uint64_t bg_row = m.row_total(bg);
  if (bg_row > 0) r.tnr = 100.0 * m.counts[bg][bg] / bg_row;

  bool all_defined = true;
  double sum = 0.0;
  for (const auto& p : r.precision) {
    if (!p) all_defined = false;
    else sum += *p;
  }
  if (all_defined) r.avg_precision = sum / kEggClassCount;
  return r;
}

// Half-up rounding to 1 decimal for display. The 1e-9 guard absorbs binary
// representation error so values like 96.55 (stored just below the half
// boundary) still round up; internal values stay at full precision.
inline double round_display(double v) {
  return std::floor(v * 10.0 + 0.5 + 1e-9) / 10.0;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", round_display(*v));
  return buf;
}

// ---- Pipeline evaluation -------------------------------------------------

using BatchClassifier = std::function<std::vector<ClassProbabilities>(
    const std::vector<ImageBuffer>&)>;

struct EvalItem {
  ImageBuffer image;  // raw; preprocessing happens inside the evaluator
  std::vector<Annotation> annotations;
};

enum class EvalMode { Patch, WholeImage };

struct EvalResult {
  ConfusionMatrix matrix;
  MetricsReport metrics;
  // Whole-image mode only: one detection per item, in item order.
  std::vector<Detection> detections;
};

namespace detail {
inline EggClass single_image_class(const std::vector<Annotation>& annotations) {
  if (annotations.empty())
    throw invalid_input("whole-image evaluation requires an annotated image");
  const EggClass cls = annotations.front().class_label;
  for (const Annotation& a : annotations)
    if (a.class_label != cls)
      throw invalid_input(
          "whole-image evaluation rejects multi-class images");
  return cls;
}
}  // namespace detail

// Patch mode: label every grid patch (EXCLUDED dropped), classify, and tally
// argmax against the patch label. Whole-image mode: classify all patches,
// fuse into the probability map, and tally the detection class against the
// image's annotated class; NONE counts as a BG prediction.
inline EvalResult evaluate_pipeline(const std::vector<EvalItem>& items,
                                    const BatchClassifier& classify,
                                    EvalMode mode,
                                    const GridConfig& grid_config = {},
                                    double sigma = 1.0,
                                    double threshold = 0.5) {
  EvalResult result;
  GaussianKernel kernel;
  if (mode == EvalMode::WholeImage)
    kernel = gaussian_kernel(grid_config.patch_size, sigma);

  for (const EvalItem& item : items) {
    const ImageBuffer prepared = preprocess_image(item.image);
    const PatchGrid grid =
        patch_positions(prepared.width, prepared.height, grid_config);

    if (mode == EvalMode::Patch) {
      const auto labels = label_patches(grid, item.annotations);
      std::vector<ImageBuffer> patches;
      std::vector<EggClass> truths;
      for (const auto& [pos, label] : labels) {
        if (label == PatchLabel::Excluded) continue;
        patches.push_back(
            crop_patch(prepared, pos.x, pos.y, grid.config.patch_size));
        truths.push_back(to_egg_class(label));
      }
      const std::vector<ClassProbabilities> probs = classify(patches);
      if (probs.size() != patches.size())
        throw backend_error("classifier returned wrong result count");
      for (std::size_t i = 0; i < probs.size(); ++i)
        result.matrix.add(truths[i], probs[i].argmax());
    } else {
      const EggClass truth = detail::single_image_class(item.annotations);
      std::vector<ImageBuffer> patches;
      patches.reserve(grid.positions.size());
      for (const Position& pos : grid.positions)
        patches.push_back(
            crop_patch(prepared, pos.x, pos.y, grid.config.patch_size));
      const std::vector<ClassProbabilities> probs = classify(patches);
      if (probs.size() != patches.size())
        throw backend_error("classifier returned wrong result count");
      const ProbabilityMap map = fuse(grid.positions, probs, kernel,
                                      prepared.width, prepared.height);
      const Detection det = predict_image(map, threshold);
      result.matrix.add(truth, det.label ? *det.label : EggClass::BG);
      result.detections.push_back(det);
    }
  }
  result.metrics = compute_metrics(result.matrix);
  return result;
}

// ---- Report rendering ----------------------------------------------------

namespace detail {
inline void pad_to(std::string& line, std::size_t width) {
  if (line.size() < width) line.append(width - line.size(), ' ');
}
}  // namespace detail

// Plain-text table in the shape of the accuracy/TPR/TNR results table.
inline std::string render_results_table(const std::string& model_name,
                                        const std::string& analysis_type,
                                        const MetricsReport& r) {
  std::ostringstream os;
  std::string h1 = "Model";
  detail::pad_to(h1, 12);
  h1 += "Analysis type";
  detail::pad_to(h1, 28);
  h1 += "Accuracy(%)";
  detail::pad_to(h1, 42);
  h1 += "True positive rate(%)";
  detail::pad_to(h1, 74);
  h1 += "True negative rate(%)";
  os << h1 << "\n";
  std::string h2;
  detail::pad_to(h2, 42);
  h2 += "AL      HD      FB      Tn";
  os << h2 << "\n";

  std::string row = model_name;
  detail::pad_to(row, 12);
  row += analysis_type;
  detail::pad_to(row, 28);
  row += format_metric(r.accuracy);
  detail::pad_to(row, 42);
  for (int c = 0; c < kEggClassCount; ++c) {
    std::string cell = format_metric(r.tpr[c]);
    detail::pad_to(cell, 8);
    row += cell;
  }
  detail::pad_to(row, 74);
  row += format_metric(r.tnr);
  os << row << "\n";
  return os.str();
}

// Plain-text table in the shape of the per-class precision table.
inline std::string render_precision_table(const std::string& model_name,
                                          const MetricsReport& r) {
  std::ostringstream os;
  std::string h1 = "Model";
  detail::pad_to(h1, 12);
  h1 += "Precision(%)";
  detail::pad_to(h1, 44);
  h1 += "Avg.";
  os << h1 << "\n";
  std::string h2;
  detail::pad_to(h2, 12);
  h2 += "AL      HD      FB      Tn";
  os << h2 << "\n";

  std::string row = model_name;
  detail::pad_to(row, 12);
  for (int c = 0; c < kEggClassCount; ++c) {
    std::string cell = format_metric(r.precision[c]);
    detail::pad_to(cell, 8);
    row += cell;
  }
  detail::pad_to(row, 44);
  row += format_metric(r.avg_precision);
  os << row << "\n";
  return os.str();
}

inline std::string render_confusion_table(const ConfusionMatrix& m) {
  std::ostringstream os;
  os << "Confusion matrix (rows = true, columns = predicted)\n";
  os << "        ";
  for (int c = 0; c < kNumClasses; ++c) {
    std::string cell(kClassNames[c]);
    detail::pad_to(cell, 8);
    os << cell;
  }
  os << "\n";
  for (int r = 0; r < kNumClasses; ++r) {
    std::string row = "  " + std::string(kClassNames[r]);
    detail::pad_to(row, 8);
    for (int c = 0; c < kNumClasses; ++c) {
      std::string cell = std::to_string(m.counts[r][c]);
      detail::pad_to(cell, 8);
      row += cell;
    }
    os << row << "\n";
  }
  return os.str();
}

// Machine-readable report: full-precision metrics plus the confusion counts.
inline nlohmann::json report_to_json(const std::string& model_name,
                                     const std::string& analysis_type,
                                     const EvalResult& result) {
  nlohmann::json j;
  j["model"] = model_name;
  j["analysis_type"] = analysis_type;
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  j["metrics"]["accuracy"] = opt(result.metrics.accuracy);
  for (int c = 0; c < kEggClassCount; ++c) {
    const std::string name(kClassNames[c]);
    j["metrics"]["tpr"][name] = opt(result.metrics.tpr[c]);
    j["metrics"]["precision"][name] = opt(result.metrics.precision[c]);
  }
  j["metrics"]["tnr"] = opt(result.metrics.tnr);
  j["metrics"]["avg_precision"] = opt(result.metrics.avg_precision);
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < kNumClasses; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < kNumClasses; ++c) row.push_back(result.matrix.counts[r][c]);
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j;
}

}  // namespace eggscan
