#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "densecotrain/geom.hpp"

namespace densecotrain::metrics {

struct GroundTruth {
  geom::Box box;
  int label = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Predictions and annotations of one image. Image identity does not enter
/// any metric.
struct EvalImage {
  std::vector<geom::ScoredBox> detections;
  std::vector<GroundTruth> truths;
};

/// The ten COCO matching thresholds 0.50, 0.55, ..., 0.95 (each the nearest
/// double to k/100).
const std::array<double, 10>& coco_thresholds();

struct MatchResult {
  std::vector<bool> is_tp;                               // per detection
  std::vector<std::optional<std::size_t>> matched_truth;  // per detection
  std::vector<double> match_iou;                          // per detection, 0 when unmatched
  std::vector<bool> truth_matched;                        // per ground truth
};

/// Greedy matching: detections in descending score order (ties by input
/// order) take the unmatched same-label ground truth with the highest IoU,
/// provided that IoU >= t.
MatchResult match_detections(std::span<const geom::ScoredBox> dets,
                             std::span<const GroundTruth> gts, double t);

/// A metric that may be undefined. `value` is empty when there are neither
/// ground truths nor detections; `zero_truth_warning` is set when detections
/// exist without any ground truth (value then 0).
struct MetricValue {
  std::optional<double> value;
  bool zero_truth_warning = false;
};

/// COCO-style 101-point interpolated AP over the whole dataset at threshold t.
MetricValue average_precision(std::span<const EvalImage> images, double t);

/// The same quantity by explicit enumeration; shares no code with
/// average_precision. Intended for small test instances.
MetricValue brute_force_ap_oracle(std::span<const EvalImage> images, double t);

/// Recall at each COCO threshold with at most `max_dets` top-scored
/// detections per image, averaged over thresholds.
MetricValue average_recall_at(std::span<const EvalImage> images, std::size_t max_dets);

struct PrPoint {
  double recall;
  double precision;
};

struct ThresholdAp {
  double threshold;
  double ap;
};

struct EvalReport {
  std::vector<ThresholdAp> ap_per_threshold;  // ascending thresholds
  double map_coco = 0.0;
  double ap75 = 0.0;
  double ar300 = 0.0;
  std::vector<std::vector<PrPoint>> pr_curves;  // raw curve per threshold
  bool zero_truth_warning = false;
};

/// AP at every COCO threshold, their mean and the 0.75 entry; fills the
/// AP fields and PR curves of the report (ar300 left at 0). Requires at
/// least one ground truth (ValidationError otherwise).
EvalReport mean_average_precision(std::span<const EvalImage> images);

/// mean_average_precision plus AR@max_dets.
EvalReport evaluate(std::span<const EvalImage> images, std::size_t max_dets = 300);

/// Raw (uninterpolated) precision-recall sequence at threshold t.
std::vector<PrPoint> pr_curve(std::span<const EvalImage> images, double t);

/// Structured form of a report; PR curves only when asked for.
nlohmann::json to_json(const EvalReport& r, bool include_curves = false);
EvalReport eval_report_from_json(const nlohmann::json& j);

}  // namespace densecotrain::metrics
