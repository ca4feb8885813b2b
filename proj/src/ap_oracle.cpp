// Reference AP by direct enumeration. Deliberately self-contained: its own
// overlap arithmetic, its own ranking and matching loops, and an explicit
// staircase scan per recall level. Quadratic, so for small inputs only.

#include <algorithm>
#include <vector>

#include "densecotrain/errors.hpp"
#include "densecotrain/metrics.hpp"

namespace densecotrain::metrics {

namespace {

double overlap_ratio(const geom::Box& a, const geom::Box& b) {
  const double left = a.x1() > b.x1() ? a.x1() : b.x1();
  const double right = a.x2() < b.x2() ? a.x2() : b.x2();
  const double top = a.y1() > b.y1() ? a.y1() : b.y1();
  const double bottom = a.y2() < b.y2() ? a.y2() : b.y2();
  if (a == b) return 1.0;
  if (right <= left || bottom <= top) return 0.0;
  const double inter = (right - left) * (bottom - top);
  const double area_a = (a.x2() - a.x1()) * (a.y2() - a.y1());
  const double area_b = (b.x2() - b.x1()) * (b.y2() - b.y1());
  return inter / (area_a + area_b - inter);
}

struct Entry {
  double score;
  bool hit;
};

}  // namespace

MetricValue brute_force_ap_oracle(std::span<const EvalImage> images, double t) {
  if (!(t > 0.0 && t <= 1.0)) throw ValidationError("IoU threshold must lie in (0,1]");

  std::size_t n_truth = 0;
  std::size_t n_dets = 0;
  for (const auto& im : images) {
    n_truth += im.truths.size();
    n_dets += im.detections.size();
  }
  if (n_truth == 0) {
    if (n_dets == 0) return {};
    return {0.0, true};
  }

  // Per image: repeatedly pick the highest-scored unvisited detection
  // (first occurrence wins ties) and let it claim its best free truth.
  std::vector<std::vector<bool>> hit(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& dets = images[i].detections;
    const auto& gts = images[i].truths;
    hit[i].assign(dets.size(), false);
    std::vector<bool> visited(dets.size(), false);
    std::vector<bool> claimed(gts.size(), false);
    for (std::size_t step = 0; step < dets.size(); ++step) {
      std::size_t pick = dets.size();
      for (std::size_t d = 0; d < dets.size(); ++d) {
        if (visited[d]) continue;
        if (pick == dets.size() || dets[d].score > dets[pick].score) pick = d;
      }
      visited[pick] = true;
      double best = -1.0;
      std::size_t best_g = gts.size();
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (claimed[g] || gts[g].label != dets[pick].label) continue;
        const double o = overlap_ratio(dets[pick].box, gts[g].box);
        if (o > best) {
          best = o;
          best_g = g;
        }
      }
      if (best_g < gts.size() && best >= t) {
        claimed[best_g] = true;
        hit[i][pick] = true;
      }
    }
  }

  // Global ranked list by selection; ties resolve to earlier image, then
  // earlier detection.
  std::vector<Entry> ranked;
  std::vector<std::vector<bool>> taken(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) taken[i].assign(images[i].detections.size(), false);
  for (std::size_t step = 0; step < n_dets; ++step) {
    std::size_t bi = 0, bd = 0;
    bool found = false;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (std::size_t d = 0; d < images[i].detections.size(); ++d) {
        if (taken[i][d]) continue;
        if (!found || images[i].detections[d].score > images[bi].detections[bd].score) {
          bi = i;
          bd = d;
          found = true;
        }
      }
    }
    taken[bi][bd] = true;
    ranked.push_back({images[bi].detections[bd].score, hit[bi][bd]});
  }

  // Staircase: at recall level r, the interpolated precision is the best
  // precision over all prefixes whose recall reaches r.
  double total = 0.0;
  for (int level = 0; level <= 100; ++level) {
    const double r = static_cast<double>(level) / 100.0;
    double best_precision = 0.0;
    std::size_t hits = 0;
    for (std::size_t m = 0; m < ranked.size(); ++m) {
      if (ranked[m].hit) ++hits;
      const double recall = static_cast<double>(hits) / static_cast<double>(n_truth);
      const double precision = static_cast<double>(hits) / static_cast<double>(m + 1);
      if (recall >= r && precision > best_precision) best_precision = precision;
    }
    total += best_precision;
  }
  return {total / 101.0, false};
}

}  // namespace densecotrain::metrics
