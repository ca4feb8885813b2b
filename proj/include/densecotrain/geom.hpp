#pragma once

#include <span>
#include <vector>

namespace densecotrain::geom {

/// Axis-aligned box in continuous corner coordinates, origin top-left.
/// Area carries no +1 pixel correction. Construction rejects non-finite
/// coordinates and zero or negative extents.
class Box {
 public:
  Box(double x1, double y1, double x2, double y2);

  /// Returns true when the corners describe a valid box.
  static bool is_valid(double x1, double y1, double x2, double y2) noexcept;

  double x1() const noexcept { return x1_; }
  double y1() const noexcept { return y1_; }
  double x2() const noexcept { return x2_; }
  double y2() const noexcept { return y2_; }
  double width() const noexcept { return x2_ - x1_; }
  double height() const noexcept { return y2_ - y1_; }

  friend bool operator==(const Box&, const Box&) = default;

 private:
  double x1_, y1_, x2_, y2_;
};

struct ScoredBox {
  Box box;
  double score = 0.0;  // in [0,1]
  int label = 0;       // 0 is the single retail "object" class

  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

double area(const Box& b) noexcept;

/// Intersection over union; 0 for disjoint boxes, exactly 1 for identical ones.
double iou(const Box& a, const Box& b) noexcept;

/// Greedy label-aware non-maximum suppression.
///
/// Candidates are visited by descending score (equal scores keep input
/// order). A candidate survives iff its IoU with every already kept box of
/// the same label is strictly below `iou_threshold`, so IoU == threshold
/// suppresses. Output is in kept order and is a subset of the input.
std::vector<ScoredBox> nms(std::span<const ScoredBox> dets, double iou_threshold);

/// Same suppression, returning indices into `dets` in kept order.
std::vector<std::size_t> nms_indices(std::span<const ScoredBox> dets, double iou_threshold);

}  // namespace densecotrain::geom
