#include "densecotrain/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "densecotrain/errors.hpp"
#include "densecotrain/log.hpp"

namespace densecotrain::metrics {

namespace {

constexpr int kRecallLevels = 101;

struct RankedDet {
  std::size_t image;
  std::size_t index;
  double score;
};

// Dataset-wide ranking; equal scores keep (image, index) input order.
std::vector<RankedDet> rank_all(std::span<const EvalImage> images) {
  std::vector<RankedDet> ranked;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = 0; j < images[i].detections.size(); ++j) {
      ranked.push_back({i, j, images[i].detections[j].score});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedDet& a, const RankedDet& b) { return a.score > b.score; });
  return ranked;
}

std::size_t count_truths(std::span<const EvalImage> images) {
  std::size_t n = 0;
  for (const auto& im : images) n += im.truths.size();
  return n;
}

// TP flag per ranked detection at threshold t.
std::vector<bool> ranked_tp_flags(std::span<const EvalImage> images,
                                  const std::vector<RankedDet>& ranked, double t) {
  std::vector<MatchResult> per_image;
  per_image.reserve(images.size());
  for (const auto& im : images) per_image.push_back(match_detections(im.detections, im.truths, t));
  std::vector<bool> tp(ranked.size());
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    tp[k] = per_image[ranked[k].image].is_tp[ranked[k].index];
  }
  return tp;
}

std::vector<PrPoint> raw_curve(const std::vector<bool>& tp, std::size_t n_truth) {
  std::vector<PrPoint> curve;
  curve.reserve(tp.size());
  std::size_t tp_count = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (tp[k]) ++tp_count;
    curve.push_back({static_cast<double>(tp_count) / static_cast<double>(n_truth),
                     static_cast<double>(tp_count) / static_cast<double>(k + 1)});
  }
  return curve;
}

double interpolated_ap(const std::vector<PrPoint>& curve) {
  std::vector<double> precision(curve.size());
  for (std::size_t k = curve.size(); k-- > 0;) {
    precision[k] = curve[k].precision;
    if (k + 1 < curve.size()) precision[k] = std::max(precision[k], precision[k + 1]);
  }
  double sum = 0.0;
  for (int level = 0; level < kRecallLevels; ++level) {
    const double r = static_cast<double>(level) / 100.0;
    const auto it = std::lower_bound(curve.begin(), curve.end(), r,
                                     [](const PrPoint& p, double v) { return p.recall < v; });
    if (it != curve.end()) sum += precision[static_cast<std::size_t>(it - curve.begin())];
  }
  return sum / kRecallLevels;
}

void require_threshold(double t) {
  if (!(t > 0.0 && t <= 1.0)) throw ValidationError("IoU threshold must lie in (0,1]");
}

}  // namespace

const std::array<double, 10>& coco_thresholds() {
  static const std::array<double, 10> thresholds = [] {
    std::array<double, 10> t{};
    for (int i = 0; i < 10; ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
    return t;
  }();
  return thresholds;
}

MatchResult match_detections(std::span<const geom::ScoredBox> dets,
                             std::span<const GroundTruth> gts, double t) {
  require_threshold(t);
  MatchResult r;
  r.is_tp.assign(dets.size(), false);
  r.matched_truth.assign(dets.size(), std::nullopt);
  r.match_iou.assign(dets.size(), 0.0);
  r.truth_matched.assign(gts.size(), false);

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  for (std::size_t d : order) {
    double best = -1.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.truth_matched[g] || gts[g].label != dets[d].label) continue;
      const double v = geom::iou(dets[d].box, gts[g].box);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt && best >= t) {
      r.is_tp[d] = true;
      r.matched_truth[d] = best_gt;
      r.match_iou[d] = best;
      r.truth_matched[*best_gt] = true;
    }
  }
  return r;
}

std::vector<PrPoint> pr_curve(std::span<const EvalImage> images, double t) {
  require_threshold(t);
  const std::size_t n_truth = count_truths(images);
  if (n_truth == 0) return {};
  const auto ranked = rank_all(images);
  return raw_curve(ranked_tp_flags(images, ranked, t), n_truth);
}

MetricValue average_precision(std::span<const EvalImage> images, double t) {
  require_threshold(t);
  const std::size_t n_truth = count_truths(images);
  const auto ranked = rank_all(images);
  if (n_truth == 0) {
    if (ranked.empty()) return {};
    log().warn("average_precision: {} detections but no ground truth; AP reported as 0",
               ranked.size());
    return {0.0, true};
  }
  return {interpolated_ap(raw_curve(ranked_tp_flags(images, ranked, t), n_truth)), false};
}

MetricValue average_recall_at(std::span<const EvalImage> images, std::size_t max_dets) {
  if (max_dets < 1) throw ValidationError("average_recall_at: max_dets must be >= 1");
  const std::size_t n_truth = count_truths(images);
  if (n_truth == 0) {
    std::size_t n_dets = 0;
    for (const auto& im : images) n_dets += im.detections.size();
    if (n_dets == 0) return {};
    log().warn("average_recall_at: detections without ground truth; AR reported as 0");
    return {0.0, true};
  }

  std::vector<std::vector<geom::ScoredBox>> truncated;
  truncated.reserve(images.size());
  for (const auto& im : images) {
    std::vector<std::size_t> order(im.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return im.detections[a].score > im.detections[b].score;
    });
    if (order.size() > max_dets) order.resize(max_dets);
    std::vector<geom::ScoredBox> kept;
    kept.reserve(order.size());
    for (std::size_t i : order) kept.push_back(im.detections[i]);
    truncated.push_back(std::move(kept));
  }

  double sum = 0.0;
  for (double t : coco_thresholds()) {
    std::size_t matched = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto m = match_detections(truncated[i], images[i].truths, t);
      matched += static_cast<std::size_t>(std::count(m.truth_matched.begin(), m.truth_matched.end(), true));
    }
    sum += static_cast<double>(matched) / static_cast<double>(n_truth);
  }
  return {sum / static_cast<double>(coco_thresholds().size()), false};
}

EvalReport mean_average_precision(std::span<const EvalImage> images) {
  const std::size_t n_truth = count_truths(images);
  if (n_truth == 0) throw ValidationError("mean_average_precision requires at least one ground truth");
  const auto ranked = rank_all(images);

  EvalReport report;
  double sum = 0.0;
  for (double t : coco_thresholds()) {
    auto curve = raw_curve(ranked_tp_flags(images, ranked, t), n_truth);
    const double ap = interpolated_ap(curve);
    report.ap_per_threshold.push_back({t, ap});
    report.pr_curves.push_back(std::move(curve));
    sum += ap;
    if (t == 0.75) report.ap75 = ap;
  }
  report.map_coco = sum / static_cast<double>(coco_thresholds().size());
  return report;
}

EvalReport evaluate(std::span<const EvalImage> images, std::size_t max_dets) {
  EvalReport report = mean_average_precision(images);
  report.ar300 = average_recall_at(images, max_dets).value.value_or(0.0);
  return report;
}

nlohmann::json to_json(const EvalReport& r, bool include_curves) {
  nlohmann::json per_threshold = nlohmann::json::array();
  for (const auto& t : r.ap_per_threshold) per_threshold.push_back({{"threshold", t.threshold}, {"ap", t.ap}});
  nlohmann::json j = {{"map", r.map_coco},
                      {"ap75", r.ap75},
                      {"ar300", r.ar300},
                      {"ap_per_threshold", per_threshold},
                      {"zero_truth_warning", r.zero_truth_warning}};
  if (include_curves) {
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& c : r.pr_curves) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : c) pts.push_back({p.recall, p.precision});
      curves.push_back(std::move(pts));
    }
    j["pr_curves"] = std::move(curves);
  }
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.map_coco = j.at("map").get<double>();
  r.ap75 = j.at("ap75").get<double>();
  r.ar300 = j.at("ar300").get<double>();
  r.zero_truth_warning = j.value("zero_truth_warning", false);
  for (const auto& t : j.at("ap_per_threshold")) {
    r.ap_per_threshold.push_back({t.at("threshold").get<double>(), t.at("ap").get<double>()});
  }
  if (j.contains("pr_curves")) {
    for (const auto& c : j["pr_curves"]) {
      std::vector<PrPoint> pts;
      for (const auto& p : c) pts.push_back({p[0].get<double>(), p[1].get<double>()});
      r.pr_curves.push_back(std::move(pts));
    }
  }
  return r;
}

}  // namespace densecotrain::metrics
