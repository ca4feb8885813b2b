#include "densecotrain/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "densecotrain/errors.hpp"
#include "densecotrain/log.hpp"
#include "densecotrain/random.hpp"

namespace densecotrain::data {

namespace {

constexpr const char* kFieldNames[] = {"image_name", "x1",    "y1",          "x2",
                                       "y2",         "class", "image_width", "image_height"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end && std::isfinite(out);
}

[[noreturn]] void malformed(const std::string& source, std::size_t line, int field,
                            const std::string& what) {
  throw ValidationError(fmt::format("{}:{}: field '{}' {}", source, line, kFieldNames[field], what));
}

}  // namespace

std::vector<double> occlusion_levels(std::span<const metrics::GroundTruth> gts) {
  std::vector<double> occ(gts.size(), 0.0);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (std::size_t j = i + 1; j < gts.size(); ++j) {
      const double v = geom::iou(gts[i].box, gts[j].box);
      occ[i] = std::max(occ[i], v);
      occ[j] = std::max(occ[j], v);
    }
  }
  return occ;
}

LoadResult parse_annotations(std::istream& in, const std::string& source_name) {
  LoadResult result;
  result.class_names.push_back("object");
  std::unordered_map<std::string, int> class_ids{{"object", 0}};
  std::unordered_map<std::string, std::size_t> record_index;

  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv_line(line);

    if (first_content_line) {
      first_content_line = false;
      double probe = 0.0;
      if (fields.size() >= 2 && !parse_double(fields[1], probe)) continue;  // header
    }
    if (fields.size() != 8) {
      throw ValidationError(
          fmt::format("{}:{}: expected 8 fields, found {}", source_name, line_no, fields.size()));
    }
    if (fields[0].empty()) malformed(source_name, line_no, 0, "is empty");
    if (fields[5].empty()) malformed(source_name, line_no, 5, "is empty");

    double v[4];
    for (int k = 0; k < 4; ++k) {
      if (!parse_double(fields[1 + k], v[k])) {
        malformed(source_name, line_no, 1 + k, "is not a finite number: '" + fields[1 + k] + "'");
      }
    }
    double wh[2];
    for (int k = 0; k < 2; ++k) {
      if (!parse_double(fields[6 + k], wh[k]) || wh[k] <= 0.0 || wh[k] != std::floor(wh[k])) {
        malformed(source_name, line_no, 6 + k, "is not a positive integer: '" + fields[6 + k] + "'");
      }
    }
    const int width = static_cast<int>(wh[0]);
    const int height = static_cast<int>(wh[1]);

    double x1 = std::clamp(v[0], 0.0, wh[0]);
    double y1 = std::clamp(v[1], 0.0, wh[1]);
    double x2 = std::clamp(v[2], 0.0, wh[0]);
    double y2 = std::clamp(v[3], 0.0, wh[1]);
    if (!geom::Box::is_valid(x1, y1, x2, y2)) {
      auto msg = fmt::format("{}:{}: degenerate box rejected (x1>=x2 or y1>=y2 after clamping)",
                             source_name, line_no);
      log().warn("{}", msg);
      result.warnings.push_back(std::move(msg));
      ++result.rejected_rows;
      continue;
    }
    if (x1 != v[0] || y1 != v[1] || x2 != v[2] || y2 != v[3]) {
      auto msg = fmt::format("{}:{}: box clamped to image bounds", source_name, line_no);
      log().warn("{}", msg);
      result.warnings.push_back(std::move(msg));
    }

    auto [cls_it, inserted] =
        class_ids.try_emplace(fields[5], static_cast<int>(result.class_names.size()));
    if (inserted) result.class_names.push_back(fields[5]);

    auto [rec_it, new_record] = record_index.try_emplace(fields[0], result.records.size());
    if (new_record) {
      ImageRecord rec;
      rec.image_id = fields[0];
      rec.width = width;
      rec.height = height;
      result.records.push_back(std::move(rec));
    }
    auto& rec = result.records[rec_it->second];
    if (rec.width != width || rec.height != height) {
      auto msg = fmt::format("{}:{}: image size {}x{} differs from earlier rows ({}x{}); keeping the first",
                             source_name, line_no, width, height, rec.width, rec.height);
      log().warn("{}", msg);
      result.warnings.push_back(std::move(msg));
    }
    rec.gts.push_back({geom::Box(x1, y1, x2, y2), cls_it->second});
    ++result.accepted_rows;
  }

  for (auto& rec : result.records) rec.occlusion = occlusion_levels(rec.gts);
  return result;
}

LoadResult load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file: " + path.string());
  return parse_annotations(in, path.string());
}

void write_annotations(std::ostream& out, std::span<const ImageRecord> records,
                       std::span<const std::string> class_names) {
  for (const auto& rec : records) {
    for (const auto& gt : rec.gts) {
      const std::string cls = gt.label >= 0 && static_cast<std::size_t>(gt.label) < class_names.size()
                                  ? class_names[static_cast<std::size_t>(gt.label)]
                                  : (gt.label == 0 ? std::string("object") : fmt::format("class_{}", gt.label));
      out << fmt::format("{},{},{},{},{},{},{},{}\n", rec.image_id, gt.box.x1(), gt.box.y1(),
                         gt.box.x2(), gt.box.y2(), cls, rec.width, rec.height);
    }
  }
}

std::array<std::size_t, 3> split_sizes(std::size_t n_labeled, std::array<double, 3> fractions) {
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("split fractions must lie in [0,1]");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  // The epsilon keeps exact products such as 0.7*2000 from flooring one low.
  const auto floor_of = [&](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n_labeled) + 1e-9));
  };
  const std::size_t train = std::min(floor_of(fractions[0]), n_labeled);
  const std::size_t val = std::min(floor_of(fractions[1]), n_labeled - train);
  return {train, val, n_labeled - train - val};
}

DatasetSplit select_and_split(std::span<const ImageRecord> records, std::size_t n_labeled,
                              std::size_t n_unlabeled, std::array<double, 3> fractions,
                              std::uint64_t seed) {
  if (n_labeled == 0) throw ValidationError("select_and_split: n_labeled must be positive");
  if (n_labeled + n_unlabeled > records.size()) {
    throw ValidationError(fmt::format("select_and_split: need {} records ({} labeled + {} unlabeled), only {} available",
                                      n_labeled + n_unlabeled, n_labeled, n_unlabeled, records.size()));
  }
  const auto sizes = split_sizes(n_labeled, fractions);

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {hash_string("select_and_split")}));
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  for (std::size_t k = 0; k < n_labeled + n_unlabeled; ++k) {
    const auto& id = records[order[k]].image_id;
    if (k < sizes[0]) {
      split.train.push_back(id);
    } else if (k < sizes[0] + sizes[1]) {
      split.val.push_back(id);
    } else if (k < n_labeled) {
      split.test.push_back(id);
    } else {
      split.unlabeled_pool.push_back(id);
    }
  }
  return split;
}

void validate(const SceneSpec& s) {
  if (s.grid_rows < 1 || s.grid_cols < 1) throw ValidationError("scene grid must be at least 1x1");
  if (!(s.box_w > 0.0) || !(s.box_h > 0.0)) throw ValidationError("scene box dimensions must be positive");
  if (!(s.jitter >= 0.0) || !std::isfinite(s.jitter)) throw ValidationError("scene jitter must be >= 0");
  if (!(s.overlap_factor >= 0.0 && s.overlap_factor < 1.0)) {
    throw ValidationError("scene overlap_factor must lie in [0,1)");
  }
  if (s.image_width < 0 || s.image_height < 0) throw ValidationError("scene image size must be >= 0");
  if ((s.image_width > 0 && s.box_w > s.image_width) || (s.image_height > 0 && s.box_h > s.image_height)) {
    throw ValidationError(fmt::format("scene box {}x{} exceeds image {}x{}", s.box_w, s.box_h,
                                      s.image_width, s.image_height));
  }
}

ImageRecord generate_synthetic_scene(const SceneSpec& s, const std::string& image_id) {
  validate(s);
  const double step_x = s.box_w * (1.0 - s.overlap_factor);
  const double step_y = s.box_h * (1.0 - s.overlap_factor);
  const double margin = 0.25 * std::max(s.box_w, s.box_h) + 3.0 * s.jitter;

  ImageRecord rec;
  rec.image_id = image_id;
  rec.width = s.image_width > 0
                  ? s.image_width
                  : static_cast<int>(std::ceil(2.0 * margin + step_x * (s.grid_cols - 1) + s.box_w));
  rec.height = s.image_height > 0
                   ? s.image_height
                   : static_cast<int>(std::ceil(2.0 * margin + step_y * (s.grid_rows - 1) + s.box_h));

  Rng rng(derive_seed(s.seed, {hash_string("scene")}));
  for (int r = 0; r < s.grid_rows; ++r) {
    for (int c = 0; c < s.grid_cols; ++c) {
      const double x = margin + c * step_x + normal(rng, 0.0, s.jitter);
      const double y = margin + r * step_y + normal(rng, 0.0, s.jitter);
      const double x1 = std::clamp(x, 0.0, static_cast<double>(rec.width));
      const double y1 = std::clamp(y, 0.0, static_cast<double>(rec.height));
      const double x2 = std::clamp(x + s.box_w, 0.0, static_cast<double>(rec.width));
      const double y2 = std::clamp(y + s.box_h, 0.0, static_cast<double>(rec.height));
      if (geom::Box::is_valid(x1, y1, x2, y2)) rec.gts.push_back({geom::Box(x1, y1, x2, y2), 0});
    }
  }
  rec.occlusion = occlusion_levels(rec.gts);
  return rec;
}

SceneSpec scene_for_image(const SyntheticDatasetSpec& spec, std::uint64_t seed, std::size_t index) {
  SceneSpec s = spec.scene;
  s.seed = derive_seed(seed, {index});
  Rng rng(derive_seed(s.seed, {hash_string("scene-variation")}));
  if (spec.overlap_spread > 0.0) {
    const double lo = spec.scene.overlap_factor - spec.overlap_spread;
    const double hi = spec.scene.overlap_factor + spec.overlap_spread;
    s.overlap_factor = std::clamp(lo + (hi - lo) * uniform01(rng), 0.0, 0.9);
  }
  if (spec.rows_spread > 0) {
    s.grid_rows = std::max(1, s.grid_rows + std::uniform_int_distribution<int>(-spec.rows_spread,
                                                                              spec.rows_spread)(rng));
  }
  if (spec.cols_spread > 0) {
    s.grid_cols = std::max(1, s.grid_cols + std::uniform_int_distribution<int>(-spec.cols_spread,
                                                                              spec.cols_spread)(rng));
  }
  return s;
}

std::vector<ImageRecord> generate_synthetic_dataset(std::size_t n_images, const SyntheticDatasetSpec& spec,
                                                    std::uint64_t seed) {
  if (n_images < 1) throw ValidationError("generate_synthetic_dataset: n_images must be >= 1");
  if (!(spec.overlap_spread >= 0.0) || spec.rows_spread < 0 || spec.cols_spread < 0) {
    throw ValidationError("synthetic dataset spreads must be >= 0");
  }
  std::vector<ImageRecord> out;
  out.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    out.push_back(generate_synthetic_scene(scene_for_image(spec, seed, i), fmt::format("synth_{:06d}", i)));
  }
  return out;
}

nlohmann::json to_json(const SceneSpec& s) {
  return {{"grid_rows", s.grid_rows},         {"grid_cols", s.grid_cols},   {"box_w", s.box_w},
          {"box_h", s.box_h},                 {"jitter", s.jitter},         {"overlap_factor", s.overlap_factor},
          {"seed", s.seed},                   {"image_width", s.image_width}, {"image_height", s.image_height}};
}

SceneSpec scene_from_json(const nlohmann::json& j, SceneSpec d) {
  d.grid_rows = j.value("grid_rows", d.grid_rows);
  d.grid_cols = j.value("grid_cols", d.grid_cols);
  d.box_w = j.value("box_w", d.box_w);
  d.box_h = j.value("box_h", d.box_h);
  d.jitter = j.value("jitter", d.jitter);
  d.overlap_factor = j.value("overlap_factor", d.overlap_factor);
  d.seed = j.value("seed", d.seed);
  d.image_width = j.value("image_width", d.image_width);
  d.image_height = j.value("image_height", d.image_height);
  return d;
}

nlohmann::json synthetic_manifest(std::size_t n_images, const SyntheticDatasetSpec& spec, std::uint64_t seed) {
  nlohmann::json images = nlohmann::json::array();
  for (std::size_t i = 0; i < n_images; ++i) {
    const auto s = scene_for_image(spec, seed, i);
    images.push_back({{"image_id", fmt::format("synth_{:06d}", i)},
                      {"seed", s.seed},
                      {"grid_rows", s.grid_rows},
                      {"grid_cols", s.grid_cols},
                      {"overlap_factor", s.overlap_factor}});
  }
  return {{"format", "densecotrain.synthetic-manifest"},
          {"version", 1},
          {"n_images", n_images},
          {"seed", seed},
          {"scene_template", to_json(spec.scene)},
          {"overlap_spread", spec.overlap_spread},
          {"rows_spread", spec.rows_spread},
          {"cols_spread", spec.cols_spread},
          {"images", std::move(images)}};
}

nlohmann::json to_json(const DatasetSplit& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"unlabeled_pool", s.unlabeled_pool}};
}

DatasetSplit split_from_json(const nlohmann::json& j) {
  DatasetSplit s;
  j.at("train").get_to(s.train);
  j.at("val").get_to(s.val);
  j.at("test").get_to(s.test);
  j.at("unlabeled_pool").get_to(s.unlabeled_pool);
  return s;
}

}  // namespace densecotrain::data
