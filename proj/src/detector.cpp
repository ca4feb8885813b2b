#include "densecotrain/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "densecotrain/errors.hpp"
#include "densecotrain/random.hpp"

namespace densecotrain::detect {

namespace {

std::uint64_t bits_of(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

double beta_2_5(Rng& rng) {
  const double a = std::gamma_distribution<double>(2.0, 1.0)(rng);
  const double b = std::gamma_distribution<double>(5.0, 1.0)(rng);
  return a / (a + b);
}

}  // namespace

std::string_view to_string(Profile p) { return p == Profile::Localizer ? "localizer" : "contextual"; }

std::string_view to_string(AnchorScale a) {
  switch (a) {
    case AnchorScale::Small: return "small";
    case AnchorScale::Medium: return "medium";
    case AnchorScale::Large: return "large";
    case AnchorScale::Mixed: return "mixed";
  }
  return "medium";
}

Profile profile_from_string(std::string_view s) {
  if (s == "localizer") return Profile::Localizer;
  if (s == "contextual") return Profile::Contextual;
  throw ValidationError(fmt::format("unknown detector profile '{}'", s));
}

AnchorScale anchor_scale_from_string(std::string_view s) {
  if (s == "small") return AnchorScale::Small;
  if (s == "medium") return AnchorScale::Medium;
  if (s == "large") return AnchorScale::Large;
  if (s == "mixed") return AnchorScale::Mixed;
  throw ValidationError(fmt::format("unknown anchor scale '{}'", s));
}

void validate(const DetectorParams& p) {
  if (p.epochs < 1) throw ValidationError("detector epochs must be >= 1");
  if (!(p.confidence_threshold >= 0.0 && p.confidence_threshold < 1.0)) {
    throw ValidationError("detector confidence threshold must lie in [0,1)");
  }
  if (!(p.nms_iou > 0.0 && p.nms_iou < 1.0)) throw ValidationError("detector nms IoU must lie in (0,1)");
  if (p.batch_size < 1) throw ValidationError("detector batch size must be >= 1");
  if (!(p.learning_rate > 0.0) || !std::isfinite(p.learning_rate)) {
    throw ValidationError("detector learning rate must be > 0");
  }
}

ProfileConstants default_constants(Profile p) {
  ProfileConstants c;
  if (p == Profile::Contextual) {
    c.recall_ceiling = 0.92;
    c.lr_optimum = 1e-3;
    c.occlusion_penalty = 0.35;
    c.jitter_floor = 3.5;
    c.uses_anchor_scales = false;
    c.fp_rate = 3.0;
    c.feature_rotation_deg = 60.0;
    c.jitter_limit = 1.5;
  }
  return c;
}

double SkillModel::effective_recall(double occlusion) const {
  return std::clamp(base_recall - occlusion_penalty * occlusion, 0.0, 1.0);
}

AnchorScale size_regime(double typical_side) {
  if (typical_side < 32.0) return AnchorScale::Small;
  if (typical_side < 96.0) return AnchorScale::Medium;
  return AnchorScale::Large;
}

AnchorScale size_regime(std::span<const data::ImageRecord> records) {
  std::vector<double> sides;
  for (const auto& r : records) {
    for (const auto& g : r.gts) sides.push_back(std::sqrt(geom::area(g.box)));
  }
  if (sides.empty()) return AnchorScale::Medium;
  auto mid = sides.begin() + static_cast<std::ptrdiff_t>(sides.size() / 2);
  std::nth_element(sides.begin(), mid, sides.end());
  return size_regime(*mid);
}

double training_progress(const DetectorParams& p, const ProfileConstants& c) {
  const double z = (std::log10(p.learning_rate) - std::log10(c.lr_optimum)) / c.lr_width_decades;
  const double lr_gain = std::exp(-0.5 * z * z);
  const double batch_gain = std::pow(c.batch_reference / static_cast<double>(p.batch_size), c.batch_exponent);
  return 1.0 - std::exp(-c.kappa * static_cast<double>(p.epochs) * lr_gain * batch_gain);
}

SkillModel skill_from_params(const DetectorParams& params, const ProfileConstants& c, AnchorScale regime) {
  validate(params);
  const double progress = training_progress(params, c);
  double anchor_factor = 1.0;
  if (c.uses_anchor_scales && params.anchor_scale != regime) {
    anchor_factor = params.anchor_scale == AnchorScale::Mixed ? c.anchor_mixed_factor : c.anchor_mismatch_factor;
  }
  SkillModel s;
  s.base_recall = c.recall_floor + (c.recall_ceiling - c.recall_floor) * progress;
  s.occlusion_penalty = c.occlusion_penalty;
  s.jitter_sigma = c.jitter_floor * anchor_factor + c.jitter_undertrained * (1.0 - progress);
  s.fp_rate = c.fp_rate * (2.0 - progress);
  return s;
}

std::vector<double> emit_features(const geom::Box& box, bool is_object, double rotation_deg,
                                  const FeatureConfig& cfg, std::uint64_t seed) {
  if (cfg.dim < 2) throw ValidationError("feature dimension must be >= 2");
  Rng rng(derive_seed(seed, {bits_of(box.x1()), bits_of(box.y1()), bits_of(box.x2()), bits_of(box.y2()),
                             is_object ? 1u : 0u}));
  std::vector<double> z(static_cast<std::size_t>(cfg.dim));
  for (auto& v : z) v = normal(rng, 0.0, 1.0);
  z[0] += (is_object ? 0.5 : -0.5) * cfg.separation;
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double a = z[0], b = z[1];
  z[0] = std::cos(th) * a - std::sin(th) * b;
  z[1] = std::sin(th) * a + std::cos(th) * b;
  return z;
}

SyntheticDetector::SyntheticDetector(Profile profile, DetectorParams params, SkillModel skill,
                                     ProfileConstants constants, FeatureConfig features)
    : profile_(profile), params_(params), skill_(skill), constants_(constants), features_(features) {
  validate(params_);
}

std::vector<Detection> SyntheticDetector::detect(const data::ImageRecord& image, std::uint64_t seed) const {
  return detect_with_threshold(image, seed, params_.confidence_threshold);
}

std::vector<Detection> SyntheticDetector::detect_with_threshold(const data::ImageRecord& image,
                                                                std::uint64_t seed,
                                                                double confidence_threshold) const {
  const auto W = static_cast<double>(image.width);
  const auto H = static_cast<double>(image.height);
  const std::uint64_t stream = derive_seed(seed, {static_cast<std::uint64_t>(profile_)});
  const std::vector<double> occ =
      image.occlusion.size() == image.gts.size() ? image.occlusion : data::occlusion_levels(image.gts);

  std::vector<Detection> raw;
  double mean_w = 40.0, mean_h = 64.0;
  if (!image.gts.empty()) {
    mean_w = mean_h = 0.0;
    for (const auto& g : image.gts) {
      mean_w += g.box.width();
      mean_h += g.box.height();
    }
    mean_w /= static_cast<double>(image.gts.size());
    mean_h /= static_cast<double>(image.gts.size());
  }

  // One stream per ground truth: a more skilled view detects a superset of
  // what a less skilled one detects under the same seed.
  for (std::size_t k = 0; k < image.gts.size(); ++k) {
    Rng rng(derive_seed(stream, {k}));
    const double u = uniform01(rng);
    double z[4];
    for (double& v : z) v = normal(rng, 0.0, 1.0);
    const double noise = 2.0 * uniform01(rng) - 1.0;
    if (u >= skill_.effective_recall(occ[k])) continue;

    const auto& g = image.gts[k].box;
    const double s = skill_.jitter_sigma;
    const double x1 = std::clamp(g.x1() + s * z[0], 0.0, W);
    const double y1 = std::clamp(g.y1() + s * z[1], 0.0, H);
    const double x2 = std::clamp(g.x2() + s * z[2], 0.0, W);
    const double y2 = std::clamp(g.y2() + s * z[3], 0.0, H);
    if (!geom::Box::is_valid(x1, y1, x2, y2)) continue;
    const geom::Box box(x1, y1, x2, y2);
    const double score =
        std::clamp(constants_.score_slope * geom::iou(box, g) + constants_.score_noise * noise, 0.0, 1.0);
    raw.push_back({{box, score, image.gts[k].label},
                   emit_features(box, true, constants_.feature_rotation_deg, features_, derive_seed(stream, {k, 7}))});
  }

  if (skill_.fp_rate > 0.0) {
    Rng rng(derive_seed(stream, {hash_string("false-positives")}));
    const int n_fp = std::poisson_distribution<int>(skill_.fp_rate)(rng);
    for (int f = 0; f < n_fp; ++f) {
      const double w = std::min(mean_w * (0.5 + uniform01(rng)), W);
      const double h = std::min(mean_h * (0.5 + uniform01(rng)), H);
      const double x = (W - w) * uniform01(rng);
      const double y = (H - h) * uniform01(rng);
      const double score = constants_.fp_score_scale * beta_2_5(rng);
      if (!geom::Box::is_valid(x, y, x + w, y + h)) continue;
      const geom::Box box(x, y, x + w, y + h);
      raw.push_back({{box, score, 0},
                     emit_features(box, false, constants_.feature_rotation_deg, features_,
                                   derive_seed(stream, {hash_string("fp"), static_cast<std::uint64_t>(f)}))});
    }
  }

  std::vector<geom::ScoredBox> scored;
  std::vector<std::size_t> passing;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].scored.score >= confidence_threshold) {
      passing.push_back(i);
      scored.push_back(raw[i].scored);
    }
  }
  std::vector<Detection> out;
  for (std::size_t k : geom::nms_indices(scored, params_.nms_iou)) out.push_back(std::move(raw[passing[k]]));
  return out;
}

RecordedDetector::RecordedDetector(std::map<std::string, std::vector<Detection>> by_image)
    : by_image_(std::move(by_image)) {}

RecordedDetector RecordedDetector::from_jsonl(std::istream& in, const std::string& source_name) {
  std::map<std::string, std::vector<Detection>> by_image;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(fmt::format("{}:{}: invalid JSON: {}", source_name, line_no, e.what()));
    }
    auto fail = [&](const std::string& what) {
      throw ValidationError(fmt::format("{}:{}: {}", source_name, line_no, what));
    };
    if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string()) fail("missing string field 'image_id'");
    if (!j.contains("detections") || !j["detections"].is_array()) fail("missing array field 'detections'");
    auto& dets = by_image[j["image_id"].get<std::string>()];
    for (const auto& d : j["detections"]) {
      for (const char* key : {"x1", "y1", "x2", "y2", "score"}) {
        if (!d.contains(key) || !d[key].is_number()) fail(fmt::format("detection field '{}' missing or not a number", key));
      }
      const double x1 = d["x1"], y1 = d["y1"], x2 = d["x2"], y2 = d["y2"], score = d["score"];
      if (!geom::Box::is_valid(x1, y1, x2, y2)) fail("detection box is degenerate");
      if (!(score >= 0.0 && score <= 1.0)) fail("detection score outside [0,1]");
      Detection det{{geom::Box(x1, y1, x2, y2), score, d.value("label", 0)}, {}};
      if (d.contains("features")) det.features = d["features"].get<std::vector<double>>();
      dets.push_back(std::move(det));
    }
  }
  return RecordedDetector(std::move(by_image));
}

RecordedDetector RecordedDetector::from_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file: " + path.string());
  return from_jsonl(in, path.string());
}

std::vector<Detection> RecordedDetector::detect(const data::ImageRecord& image, std::uint64_t) const {
  auto it = by_image_.find(image.image_id);
  return it == by_image_.end() ? std::vector<Detection>{} : it->second;
}

SkillModel retrain(const SkillModel& base, const ProfileConstants& c,
                   std::span<const TrainingAnnotation> annotations) {
  if (annotations.empty()) throw ValidationError("retrain: empty training set");
  double e_rec = 0.0, e_occ = 0.0, e_loc = 0.0;
  std::size_t n_err = 0;
  for (const auto& a : annotations) {
    if (!a.correct) {
      ++n_err;
      continue;
    }
    const double miss = a.self_generated ? 0.0 : 1.0 - base.effective_recall(a.occlusion);
    e_rec += 0.25 + 0.75 * miss;
    e_occ += a.occlusion * miss;
    if (!a.self_generated) e_loc += std::pow(std::clamp(a.quality, 0.0, 1.0), c.localization_quality_exponent);
  }
  const double f_err = static_cast<double>(n_err) / static_cast<double>(annotations.size());
  const double damp = (1.0 - f_err) * (1.0 - f_err);
  const auto saturate = [](double e, double scale) { return 1.0 - std::exp(-e / scale); };

  SkillModel s = base;
  const double ceiling = std::max(c.recall_ceiling, base.base_recall);
  s.base_recall += (ceiling - base.base_recall) * saturate(e_rec, c.recall_evidence_scale) * damp;
  s.base_recall -= c.error_penalty * f_err * saturate(static_cast<double>(n_err), c.recall_evidence_scale);
  s.base_recall = std::clamp(s.base_recall, 0.0, ceiling);
  s.occlusion_penalty *= 1.0 - c.occlusion_relief * saturate(e_occ, c.occlusion_evidence_scale) * damp;
  if (base.jitter_sigma > c.jitter_limit) {
    s.jitter_sigma = c.jitter_limit + (base.jitter_sigma - c.jitter_limit) *
                                          (1.0 - c.localization_gain * saturate(e_loc, c.localization_evidence_scale) * damp);
  }
  s.fp_rate *= 1.0 + f_err;
  return s;
}

nlohmann::json to_json(const DetectorParams& p) {
  return {{"epochs", p.epochs},
          {"confidence_threshold", p.confidence_threshold},
          {"nms_iou", p.nms_iou},
          {"batch_size", p.batch_size},
          {"learning_rate", p.learning_rate},
          {"anchor_scale", std::string(to_string(p.anchor_scale))}};
}

DetectorParams detector_params_from_json(const nlohmann::json& j, DetectorParams d) {
  d.epochs = j.value("epochs", d.epochs);
  d.confidence_threshold = j.value("confidence_threshold", d.confidence_threshold);
  d.nms_iou = j.value("nms_iou", d.nms_iou);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  if (j.contains("anchor_scale")) d.anchor_scale = anchor_scale_from_string(j["anchor_scale"].get<std::string>());
  validate(d);
  return d;
}

nlohmann::json to_json(const SkillModel& s) {
  return {{"base_recall", s.base_recall},
          {"occlusion_penalty", s.occlusion_penalty},
          {"jitter_sigma", s.jitter_sigma},
          {"fp_rate", s.fp_rate}};
}

SkillModel skill_from_json(const nlohmann::json& j) {
  return {j.at("base_recall").get<double>(), j.at("occlusion_penalty").get<double>(),
          j.at("jitter_sigma").get<double>(), j.at("fp_rate").get<double>()};
}

#define DCT_CONSTANT_FIELDS(X)                                                                       \
  X(recall_floor) X(recall_ceiling) X(kappa) X(lr_optimum) X(lr_width_decades) X(batch_reference)    \
  X(batch_exponent) X(occlusion_penalty) X(jitter_floor) X(jitter_undertrained)                      \
  X(anchor_mismatch_factor) X(anchor_mixed_factor) X(uses_anchor_scales) X(fp_rate) X(score_slope)   \
  X(score_noise) X(fp_score_scale) X(feature_rotation_deg) X(recall_evidence_scale)                  \
  X(occlusion_evidence_scale) X(occlusion_relief) X(localization_evidence_scale) X(localization_gain) \
  X(localization_quality_exponent) X(jitter_limit) X(error_penalty)

nlohmann::json to_json(const ProfileConstants& c) {
  nlohmann::json j;
#define X(name) j[#name] = c.name;
  DCT_CONSTANT_FIELDS(X)
#undef X
  return j;
}

ProfileConstants constants_from_json(const nlohmann::json& j, ProfileConstants c) {
#define X(name) c.name = j.value(#name, c.name);
  DCT_CONSTANT_FIELDS(X)
#undef X
  return c;
}

#undef DCT_CONSTANT_FIELDS

nlohmann::json to_json(const SimulationConfig& c) {
  return {{"localizer", to_json(c.localizer)},
          {"contextual", to_json(c.contextual)},
          {"features", {{"dim", c.features.dim}, {"separation", c.features.separation}}}};
}

SimulationConfig simulation_from_json(const nlohmann::json& j) {
  SimulationConfig c;
  if (j.contains("localizer")) c.localizer = constants_from_json(j["localizer"], c.localizer);
  if (j.contains("contextual")) c.contextual = constants_from_json(j["contextual"], c.contextual);
  if (j.contains("features")) {
    c.features.dim = j["features"].value("dim", c.features.dim);
    c.features.separation = j["features"].value("separation", c.features.separation);
  }
  return c;
}

}  // namespace densecotrain::detect
