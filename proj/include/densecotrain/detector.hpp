#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "densecotrain/dataset.hpp"
#include "densecotrain/geom.hpp"

namespace densecotrain::detect {

/// The two complementary views: a precise localizer that struggles under
/// occlusion (the region-proposal detector's role) and a context-aware
/// detector with looser boxes but better occlusion handling (the
/// single-shot detector's role).
enum class Profile { Localizer, Contextual };

enum class AnchorScale { Small, Medium, Large, Mixed };

std::string_view to_string(Profile p);
std::string_view to_string(AnchorScale a);
Profile profile_from_string(std::string_view s);
AnchorScale anchor_scale_from_string(std::string_view s);

/// Training and inference knobs of one detector view.
struct DetectorParams {
  int epochs = 30;
  double confidence_threshold = 0.25;
  double nms_iou = 0.5;
  int batch_size = 16;
  double learning_rate = 1e-3;
  AnchorScale anchor_scale = AnchorScale::Medium;  // localizer only
};

void validate(const DetectorParams& p);

/// Constants of the synthetic training response of one profile.
///
/// Skill from hyperparameters:
///   g(LR)     = exp(-0.5 * ((log10 LR - log10 lr_optimum) / lr_width_decades)^2)
///   s(BS)     = (batch_reference / BS)^batch_exponent
///   progress  = 1 - exp(-kappa * EP * g(LR) * s(BS))
///   recall    = recall_floor + (recall_ceiling - recall_floor) * progress
///   jitter    = jitter_floor * anchor_factor + jitter_undertrained * (1 - progress)
///   fp_rate   = fp_rate * (2 - progress)
///
/// Retraining on annotations (see retrain) uses the *_scale constants as
/// saturation volumes.
struct ProfileConstants {
  double recall_floor = 0.15;
  double recall_ceiling = 0.95;
  double kappa = 0.08;
  double lr_optimum = 2e-3;
  double lr_width_decades = 0.75;
  double batch_reference = 16.0;
  double batch_exponent = 0.15;
  double occlusion_penalty = 1.8;
  double jitter_floor = 1.2;
  double jitter_undertrained = 4.0;
  double anchor_mismatch_factor = 1.6;
  double anchor_mixed_factor = 1.25;
  bool uses_anchor_scales = true;
  double fp_rate = 2.0;
  double score_slope = 0.95;
  double score_noise = 0.05;
  double fp_score_scale = 0.8;
  double feature_rotation_deg = 0.0;
  // retraining response
  double recall_evidence_scale = 20000.0;
  double occlusion_evidence_scale = 3000.0;
  double occlusion_relief = 0.8;
  double localization_evidence_scale = 8000.0;
  double localization_gain = 0.9;
  double localization_quality_exponent = 12.0;
  double jitter_limit = 0.8;
  double error_penalty = 0.3;
};

ProfileConstants default_constants(Profile p);

struct FeatureConfig {
  int dim = 16;
  double separation = 3.0;  // distance between class means, in noise std units
};

/// Everything the synthetic detectors need beyond their hyperparameters.
struct SimulationConfig {
  ProfileConstants localizer = default_constants(Profile::Localizer);
  ProfileConstants contextual = default_constants(Profile::Contextual);
  FeatureConfig features;

  const ProfileConstants& constants(Profile p) const {
    return p == Profile::Localizer ? localizer : contextual;
  }
};

/// Detection quality of a view. Recall on a box with occlusion o is
/// clamp(base_recall - occlusion_penalty * o, 0, 1).
struct SkillModel {
  double base_recall = 0.0;
  double occlusion_penalty = 0.0;
  double jitter_sigma = 0.0;  // pixels, per coordinate
  double fp_rate = 0.0;       // Poisson mean per image

  double effective_recall(double occlusion) const;

  friend bool operator==(const SkillModel&, const SkillModel&) = default;
};

struct Detection {
  geom::ScoredBox scored;
  std::vector<double> features;
};

/// Anchor regime matching a typical box side length (sqrt of area):
/// small < 32 px <= medium < 96 px <= large.
AnchorScale size_regime(double typical_side);
AnchorScale size_regime(std::span<const data::ImageRecord> records);

/// Deterministic training progress in [0,1) from epochs, learning rate and
/// batch size.
double training_progress(const DetectorParams& params, const ProfileConstants& c);

SkillModel skill_from_params(const DetectorParams& params, const ProfileConstants& c,
                             AnchorScale scene_regime = AnchorScale::Medium);

/// Class-conditional Gaussian features: unit noise with the class means
/// +-separation/2 along the first latent axis, then rotated by
/// `rotation_deg` in the plane of the first two axes. Deterministic in
/// (box, is_object, seed).
std::vector<double> emit_features(const geom::Box& box, bool is_object, double rotation_deg,
                                  const FeatureConfig& cfg, std::uint64_t seed);

/// Any source of detections for an image.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const data::ImageRecord& image, std::uint64_t seed) const = 0;
};

/// Parametric stand-in for a trained detector: simulates detections from the
/// image's (oracle) ground truths according to its skill.
class SyntheticDetector final : public Detector {
 public:
  SyntheticDetector(Profile profile, DetectorParams params, SkillModel skill,
                    ProfileConstants constants, FeatureConfig features);

  /// For each gt, emits with probability effective_recall(occlusion) a
  /// jittered copy scored clamp(score_slope * IoU + U(-noise, noise), 0, 1);
  /// adds Poisson(fp_rate) uniformly placed false positives with
  /// fp_score_scale * Beta(2,5) scores; then filters score >= CT and applies
  /// NMS at the params' IoU.
  std::vector<Detection> detect(const data::ImageRecord& image, std::uint64_t seed) const override;

  /// detect() with an explicit confidence threshold override.
  std::vector<Detection> detect_with_threshold(const data::ImageRecord& image, std::uint64_t seed,
                                               double confidence_threshold) const;

  Profile profile() const { return profile_; }
  const DetectorParams& params() const { return params_; }
  const SkillModel& skill() const { return skill_; }
  void set_skill(const SkillModel& s) { skill_ = s; }

 private:
  Profile profile_;
  DetectorParams params_;
  SkillModel skill_;
  ProfileConstants constants_;
  FeatureConfig features_;
};

/// Replays detections recorded in a JSON-lines file, one object per image:
/// {"image_id": ..., "detections": [{"x1","y1","x2","y2","score","label","features"?}]}
class RecordedDetector final : public Detector {
 public:
  explicit RecordedDetector(std::map<std::string, std::vector<Detection>> by_image);
  static RecordedDetector from_jsonl(const std::filesystem::path& path);
  static RecordedDetector from_jsonl(std::istream& in, const std::string& source_name = "<stream>");

  std::vector<Detection> detect(const data::ImageRecord& image, std::uint64_t seed) const override;
  const std::map<std::string, std::vector<Detection>>& all() const { return by_image_; }

 private:
  std::map<std::string, std::vector<Detection>> by_image_;
};

/// One training annotation as the synthetic training response sees it.
/// `quality` is IoU with the matched true box (1 for human labels),
/// `occlusion` that box's occlusion level; `correct` is false for
/// pseudo-labels that match no true box. Self-generated annotations were by
/// construction already detected by the view, so they carry no evidence
/// about boxes the view misses nor about tighter localization.
struct TrainingAnnotation {
  double quality = 1.0;
  double occlusion = 0.0;
  bool correct = true;
  bool self_generated = false;
};

/// Synthetic training response. Starting from `base` (the skill implied by
/// the hyperparameters), with miss_i = 1 - base.effective_recall(occ_i) (0 for
/// self-generated annotations) and over correct annotations:
///   E_rec = sum(0.25 + 0.75 miss_i)       E_occ = sum(occ_i miss_i)
///   E_loc = sum(q_i^exponent) (0 for self-generated)
///   damp  = (1 - f_err)^2 where f_err is the incorrect fraction
///   recall  += (ceiling - recall) (1 - e^{-E_rec/S_rec}) damp - error_penalty f_err (1 - e^{-n_err/S_rec})
///   penalty *= 1 - relief (1 - e^{-E_occ/S_occ}) damp
///   jitter   = limit + (jitter - limit)(1 - gain (1 - e^{-E_loc/S_loc}) damp)
///   fp_rate *= 1 + f_err
/// Throws ValidationError on an empty training set.
SkillModel retrain(const SkillModel& base, const ProfileConstants& c,
                   std::span<const TrainingAnnotation> annotations);

nlohmann::json to_json(const DetectorParams& p);
DetectorParams detector_params_from_json(const nlohmann::json& j, DetectorParams defaults = {});
nlohmann::json to_json(const SkillModel& s);
SkillModel skill_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProfileConstants& c);
ProfileConstants constants_from_json(const nlohmann::json& j, ProfileConstants defaults);
nlohmann::json to_json(const SimulationConfig& c);
SimulationConfig simulation_from_json(const nlohmann::json& j);

}  // namespace densecotrain::detect
