#include "densecotrain/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "densecotrain/errors.hpp"

namespace densecotrain::geom {

bool Box::is_valid(double x1, double y1, double x2, double y2) noexcept {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x2 > x1 && y2 > y1;
}

Box::Box(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
  if (!is_valid(x1, y1, x2, y2)) {
    throw ValidationError("invalid box (" + std::to_string(x1) + "," + std::to_string(y1) + "," +
                          std::to_string(x2) + "," + std::to_string(y2) +
                          "): coordinates must be finite with x2>x1 and y2>y1");
  }
}

double area(const Box& b) noexcept { return b.width() * b.height(); }

double iou(const Box& a, const Box& b) noexcept {
  if (a == b) return 1.0;
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = area(a) + area(b) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> nms_indices(std::span<const ScoredBox> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw ValidationError("nms iou_threshold must lie in (0,1), got " +
                          std::to_string(iou_threshold));
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return dets[i].score > dets[j].score; });

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const auto& cand = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return dets[k].label == cand.label && iou(dets[k].box, cand.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<ScoredBox> nms(std::span<const ScoredBox> dets, double iou_threshold) {
  std::vector<ScoredBox> out;
  for (std::size_t i : nms_indices(dets, iou_threshold)) out.push_back(dets[i]);
  return out;
}

}  // namespace densecotrain::geom
