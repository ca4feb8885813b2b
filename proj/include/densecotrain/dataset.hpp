#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "densecotrain/metrics.hpp"

namespace densecotrain::data {

/// One annotated image. For unlabeled images of synthetic datasets the
/// ground truths stay attached so pseudo-label quality can be audited; the
/// training code never reads them as supervision.
struct ImageRecord {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<metrics::GroundTruth> gts;
  std::vector<double> occlusion;  // per gt: max IoU with any other gt
  bool labeled = true;
};

/// Image ids of the labeled train/val/test partition and the unlabeled pool.
struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::vector<std::string> unlabeled_pool;
};

/// A regular shelf-like grid of equally sized boxes. overlap_factor removes
/// that fraction of the spacing between neighbours; image_width/height of 0
/// size the image to fit the grid.
struct SceneSpec {
  int grid_rows = 6;
  int grid_cols = 8;
  double box_w = 40.0;
  double box_h = 64.0;
  double jitter = 2.0;
  double overlap_factor = 0.4;
  std::uint64_t seed = 0;
  int image_width = 0;
  int image_height = 0;
};

/// Per-image variation drawn around a template scene.
struct SyntheticDatasetSpec {
  SceneSpec scene;
  double overlap_spread = 0.0;  // overlap_factor ~ U(base - s, base + s), clamped to [0, 0.9]
  int rows_spread = 0;
  int cols_spread = 0;
};

struct LoadResult {
  std::vector<ImageRecord> records;  // in order of first appearance
  std::vector<std::string> class_names;  // index = label id; "object" is always 0
  std::vector<std::string> warnings;
  std::size_t accepted_rows = 0;
  std::size_t rejected_rows = 0;
};

/// Parses `image_name,x1,y1,x2,y2,class,image_width,image_height` rows.
/// A header line is detected by a non-numeric second column. Boxes are
/// clamped to the image (with a warning); rows still degenerate after
/// clamping are rejected with a warning. Malformed rows throw
/// ValidationError naming the line and field.
LoadResult parse_annotations(std::istream& in, const std::string& source_name = "<stream>");
LoadResult load_annotations(const std::filesystem::path& path);

/// Writes records in the same CSV schema (no header). Labels are written
/// through `class_names` when available.
void write_annotations(std::ostream& out, std::span<const ImageRecord> records,
                       std::span<const std::string> class_names = {});

/// Max IoU of each box with any other box of the list.
std::vector<double> occlusion_levels(std::span<const metrics::GroundTruth> gts);

/// Seeded uniform selection of labeled/unlabeled images and the
/// floor-rounded train/val split (remainder to test).
DatasetSplit select_and_split(std::span<const ImageRecord> records, std::size_t n_labeled,
                              std::size_t n_unlabeled, std::array<double, 3> fractions,
                              std::uint64_t seed);

/// Sizes of the train/val/test partition for n labeled images.
std::array<std::size_t, 3> split_sizes(std::size_t n_labeled, std::array<double, 3> fractions);

void validate(const SceneSpec& spec);

ImageRecord generate_synthetic_scene(const SceneSpec& spec, const std::string& image_id = "scene");

std::vector<ImageRecord> generate_synthetic_dataset(std::size_t n_images,
                                                    const SyntheticDatasetSpec& spec,
                                                    std::uint64_t seed);

/// The per-image scene parameters generate_synthetic_dataset uses.
SceneSpec scene_for_image(const SyntheticDatasetSpec& spec, std::uint64_t seed, std::size_t index);

/// Sidecar manifest describing a synthetic dataset (spec, seeds, per-image scenes).
nlohmann::json synthetic_manifest(std::size_t n_images, const SyntheticDatasetSpec& spec,
                                  std::uint64_t seed);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j, SceneSpec defaults = {});
nlohmann::json to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const nlohmann::json& j);

}  // namespace densecotrain::data
