#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <unistd.h>

#include "densecotrain/cotrain.hpp"
#include "densecotrain/dataset.hpp"
#include "densecotrain/ensemble.hpp"
#include "densecotrain/geom.hpp"
#include "densecotrain/metrics.hpp"
#include "densecotrain/random.hpp"
#include "densecotrain/tuner.hpp"

namespace densecotrain::testing {

// ---------------------------------------------------------------------------
// Generators

inline geom::Box random_box(Rng& rng, double extent = 100.0, double min_side = 0.5) {
  std::uniform_real_distribution<double> pos(0.0, extent);
  std::uniform_real_distribution<double> side(min_side, extent / 3.0);
  double x = pos(rng), y = pos(rng);
  return {x, y, x + side(rng), y + side(rng)};
}

/// A box overlapping `b`: shifted and rescaled by up to `amount` of its size.
inline geom::Box perturbed(const geom::Box& b, Rng& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  double w = b.width(), h = b.height();
  double x1 = b.x1() + u(rng) * w, y1 = b.y1() + u(rng) * h;
  double nw = w * (1.0 + u(rng)), nh = h * (1.0 + u(rng));
  return {x1, y1, x1 + std::max(nw, 0.05), y1 + std::max(nh, 0.05)};
}

/// Clustered boxes so NMS has something to suppress.
inline std::vector<geom::ScoredBox> random_scored_boxes(Rng& rng, std::size_t n, int n_labels = 2) {
  std::vector<geom::ScoredBox> out;
  std::vector<geom::Box> centers;
  std::uniform_int_distribution<std::size_t> n_centers(1, std::max<std::size_t>(1, n / 3 + 1));
  std::size_t k = n_centers(rng);
  for (std::size_t i = 0; i < k; ++i) centers.push_back(random_box(rng));
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::uniform_int_distribution<int> label(0, n_labels - 1);
  for (std::size_t i = 0; i < n; ++i) {
    // Scores on a coarse grid make ties common.
    double score = std::floor(uniform01(rng) * 20.0) / 20.0;
    out.push_back({perturbed(centers[pick(rng)], rng, 0.3), score, label(rng)});
  }
  return out;
}

/// Small evaluation instance: a few images with up to `max_boxes` detections
/// in total, mixing near-copies of the truths with clutter. Scores are
/// distinct.
inline std::vector<metrics::EvalImage> random_eval_instance(Rng& rng, std::size_t max_boxes = 20, int n_labels = 2) {
  std::uniform_int_distribution<int> n_images(1, 4);
  std::uniform_int_distribution<int> n_truth(0, 5);
  std::uniform_int_distribution<int> label(0, n_labels - 1);
  std::vector<metrics::EvalImage> images(static_cast<std::size_t>(n_images(rng)));
  std::size_t budget = max_boxes;
  for (auto& img : images) {
    int nt = n_truth(rng);
    for (int i = 0; i < nt; ++i) img.truths.push_back({random_box(rng), label(rng)});
    for (const auto& gt : img.truths) {
      if (budget == 0) break;
      if (uniform01(rng) < 0.8) {
        img.detections.push_back({perturbed(gt.box, rng, 0.25), 0.0, uniform01(rng) < 0.9 ? gt.label : label(rng)});
        --budget;
      }
      if (budget > 0 && uniform01(rng) < 0.3) {
        img.detections.push_back({perturbed(gt.box, rng, 0.4), 0.0, gt.label});
        --budget;
      }
    }
    std::uniform_int_distribution<std::size_t> clutter(0, std::min<std::size_t>(budget, 3));
    for (std::size_t c = clutter(rng); c > 0 && budget > 0; --c, --budget)
      img.detections.push_back({random_box(rng), 0.0, label(rng)});
  }
  std::size_t total = 0;
  for (const auto& img : images) total += img.detections.size();
  std::vector<double> scores(total);
  std::iota(scores.begin(), scores.end(), 1.0);
  std::shuffle(scores.begin(), scores.end(), rng);
  std::size_t k = 0;
  for (auto& img : images)
    for (auto& d : img.detections) d.score = scores[k++] / static_cast<double>(total + 1);
  return images;
}

/// Two Gaussian blobs whose means are `separation` noise deviations apart
/// along the first axis.
inline ensemble::Dataset gaussian_blobs(std::size_t n, std::size_t dim, double separation, std::uint64_t seed) {
  Rng rng(seed);
  ensemble::Dataset d(dim);
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    int y = static_cast<int>(i % 2);
    for (auto& v : x) v = normal(rng, 0.0, 1.0);
    x[0] += (y == 1 ? 0.5 : -0.5) * separation;
    d.add(x, y);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Shared fixtures

/// Two truths; ranked detections hit (0.9), miss (0.8), hit (0.7).
/// AP@0.5 = (51 + 50 * 2/3) / 101.
inline std::vector<metrics::EvalImage> three_detection_fixture() {
  metrics::EvalImage img;
  img.truths = {{{0, 0, 10, 10}, 0}, {{20, 0, 30, 10}, 0}};
  img.detections = {{{0, 0, 10, 10}, 0.9, 0}, {{50, 50, 60, 60}, 0.8, 0}, {{20, 0, 30, 10}, 0.7, 0}};
  return {img};
}

/// Every detection has IoU exactly 0.6 with its truth (60 / 100).
inline std::vector<metrics::EvalImage> uniform_iou_fixture(int n_images = 3) {
  std::vector<metrics::EvalImage> out;
  for (int i = 0; i < n_images; ++i) {
    metrics::EvalImage img;
    for (int k = 0; k < 4; ++k) {
      double x = 20.0 * k;
      img.truths.push_back({{x, 0, x + 10, 10}, 0});
      img.detections.push_back({{x, 0, x + 10, 6}, 0.9 - 0.01 * (4 * i + k), 0});
    }
    out.push_back(std::move(img));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Planted surrogate objective for the tuner: 1 minus the mean normalized
// per-gene distance to a hidden target (log genes in log space, categorical
// mismatch counts 1).

struct PlantedSurrogate {
  std::vector<tuner::GeneSpec> specs;
  tuner::HyperVector target;

  double operator()(const tuner::HyperVector& v) const {
    double d = 0.0;
    for (std::size_t i = 0; i < tuner::kGeneCount; ++i) {
      const auto& g = specs[i];
      switch (g.kind) {
        case tuner::GeneKind::Categorical:
          d += v[i] != target[i] ? 1.0 : 0.0;
          break;
        case tuner::GeneKind::LogContinuous:
          d += std::abs(std::log(v[i]) - std::log(target[i])) / (std::log(g.hi) - std::log(g.lo));
          break;
        default:
          d += std::abs(v[i] - target[i]) / (g.hi - g.lo);
      }
    }
    return 1.0 - d / static_cast<double>(tuner::kGeneCount);
  }
};

inline PlantedSurrogate planted_surrogate(std::uint64_t seed) {
  auto specs = tuner::default_specs();
  auto target = tuner::random_vector(specs, derive_seed(seed, {hash_string("planted-target")}));
  return {std::move(specs), target};
}

// ---------------------------------------------------------------------------
// Co-training fixtures

struct SmallWorld {
  std::vector<data::ImageRecord> records;
  data::DatasetSplit split;
};

/// Occluded synthetic scenes with the labeled/unlabeled selection applied.
inline SmallWorld small_world(std::uint64_t seed, std::size_t n_labeled, std::size_t n_unlabeled,
                              double overlap = 0.4) {
  data::SyntheticDatasetSpec spec;
  spec.scene.overlap_factor = overlap;
  SmallWorld w;
  w.records = data::generate_synthetic_dataset(n_labeled + n_unlabeled, spec, seed);
  w.split = data::select_and_split(w.records, n_labeled, n_unlabeled, {0.7, 0.1, 0.2}, seed);
  std::unordered_set<std::string> pool(w.split.unlabeled_pool.begin(), w.split.unlabeled_pool.end());
  for (auto& r : w.records)
    if (pool.count(r.image_id)) r.labeled = false;
  return w;
}

struct HeadlineOutcome {
  double supervised = 0.0;
  double cotrain = 0.0;
  double self_train = 0.0;
  cotrain::CoTrainResult cotrain_result;
  std::uint64_t fingerprint_before = 0;
  std::uint64_t fingerprint_after = 0;
  std::size_t test_touches = 0;
};

inline cotrain::CoTrainConfig headline_config(std::uint64_t seed) {
  cotrain::CoTrainConfig cfg;
  cfg.seed = seed;
  cfg.max_rounds = 2;
  cfg.tau_conf = 0.8;
  return cfg;
}

/// 200 labeled + 800 unlabeled occluded scenes; co-training against the
/// supervised-only and self-training baselines.
inline HeadlineOutcome run_headline(std::uint64_t seed) {
  auto w = small_world(seed, 200, 800, 0.4);
  cotrain::Workspace ws(w.records, w.split);
  cotrain::PipelineParams params;
  auto cfg = headline_config(seed);

  HeadlineOutcome out;
  out.fingerprint_before = ws.labeled_fingerprint();
  auto supervised_cfg = cfg;
  supervised_cfg.max_rounds = 0;
  out.supervised = cotrain::run_cotraining(ws, params, supervised_cfg).test_combined.map_coco;

  std::size_t touches = ws.test_access_count();
  out.cotrain_result = cotrain::run_cotraining(ws, params, cfg);
  out.test_touches = ws.test_access_count() - touches;
  out.cotrain = out.cotrain_result.test_combined.map_coco;

  auto self_cfg = cfg;
  self_cfg.exchange = cotrain::ExchangeMode::Self;
  out.self_train = cotrain::run_cotraining(ws, params, self_cfg).test_combined.map_coco;
  out.fingerprint_after = ws.labeled_fingerprint();
  return out;
}

// ---------------------------------------------------------------------------
// Files and processes

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("densecotrain-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace densecotrain::testing
