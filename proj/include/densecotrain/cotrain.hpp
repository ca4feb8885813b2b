#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "densecotrain/dataset.hpp"
#include "densecotrain/detector.hpp"
#include "densecotrain/ensemble.hpp"
#include "densecotrain/metrics.hpp"

namespace densecotrain::cotrain {

/// View A runs the localizer profile, view B the contextual one.
enum class View { A, B };

std::string_view to_string(View v);

/// Cross: each view trains on the other's pseudo-labels. Self: each view
/// trains on its own (the no-exchange ablation baseline).
enum class ExchangeMode { Cross, Self };

struct PseudoLabel {
  std::string image_id;
  geom::Box box;
  int label = 0;
  double confidence = 0.0;
  View source_view = View::A;
  int round = 1;
};

struct ViewConfig {
  detect::Profile profile = detect::Profile::Localizer;
  detect::DetectorParams detector;
  ensemble::EnsembleParams ensemble;
};

struct PipelineParams {
  ViewConfig view_a{detect::Profile::Localizer, {}, {}};
  ViewConfig view_b{detect::Profile::Contextual, {}, {}};
};

struct CoTrainConfig {
  double tau_conf = 0.8;
  int max_rounds = 5;
  double epsilon = 0.005;
  int patience = 2;
  double pseudo_nms_iou = 0.5;
  double combine_nms_iou = 0.5;
  ExchangeMode exchange = ExchangeMode::Cross;
  double unlabeled_fraction = 1.0;  // share of the pool used each round
  std::size_t max_samples_per_class = 400;  // ensemble training cap
  std::size_t max_dets = 300;
  std::uint64_t seed = 0;
  int threads = 1;
  detect::SimulationConfig simulation;
};

void validate(const CoTrainConfig& c);

/// Records plus the split, read-only for the whole run. Access to the test
/// partition is counted so callers can verify it is read exactly once.
class Workspace {
 public:
  Workspace(std::vector<data::ImageRecord> records, data::DatasetSplit split);

  const data::ImageRecord& record(const std::string& image_id) const;
  const std::vector<const data::ImageRecord*>& train() const { return train_; }
  const std::vector<const data::ImageRecord*>& val() const { return val_; }
  const std::vector<const data::ImageRecord*>& unlabeled() const { return unlabeled_; }
  const data::DatasetSplit& split() const { return split_; }

  /// The test partition. Every call is counted.
  const std::vector<const data::ImageRecord*>& test() const;
  std::size_t test_access_count() const { return test_accesses_.load(); }

  /// Hash over the content of every labeled record (train, val, test).
  std::uint64_t labeled_fingerprint() const;

  detect::AnchorScale regime() const { return regime_; }

 private:
  std::vector<data::ImageRecord> records_;
  data::DatasetSplit split_;
  std::map<std::string, std::size_t> index_;
  std::vector<const data::ImageRecord*> train_, val_, test_, unlabeled_;
  detect::AnchorScale regime_ = detect::AnchorScale::Medium;
  mutable std::atomic<std::size_t> test_accesses_{0};
};

struct ViewState {
  View view = View::A;
  ViewConfig config;
  detect::SkillModel base_skill;  // implied by the hyperparameters alone
  detect::SkillModel skill;       // after training on the current annotations
  ensemble::Ensemble ensemble;
  bool trained = false;

  detect::SyntheticDetector detector(const detect::SimulationConfig& sim) const;
};

struct RoundRecord {
  int round = 0;
  double val_map_a = 0.0;
  double val_map_b = 0.0;
  double val_map_combined = 0.0;
  std::size_t pseudo_from_a = 0;
  std::size_t pseudo_from_b = 0;
  std::optional<double> precision_from_a;  // oracle audit of this round's labels
  std::optional<double> precision_from_b;
};

struct CoTrainState {
  int round = 0;
  ViewState view_a;
  ViewState view_b;
  std::vector<PseudoLabel> accepted_for_a;
  std::vector<PseudoLabel> accepted_for_b;
  std::vector<RoundRecord> history;  // entry 0 is the supervised phase
};

/// Fraction of labels whose IoU with some hidden true box is >= 0.5; empty
/// when there are no labels.
std::optional<double> audit_precision(std::span<const PseudoLabel> labels, const Workspace& ws);

/// Per-image predictions of a view: detector output rescored by the view's
/// ensemble (score * fused probability of "object").
std::vector<metrics::EvalImage> view_predictions(const ViewState& view, std::span<const data::ImageRecord* const> images,
                                                 const CoTrainConfig& cfg);

/// Both views' predictions merged per image and deduplicated with NMS.
std::vector<metrics::EvalImage> combined_predictions(const ViewState& a, const ViewState& b,
                                                     std::span<const data::ImageRecord* const> images,
                                                     const CoTrainConfig& cfg);

/// Trains both views on the labeled train partition only and records the
/// validation mAP of each view and of their combination.
CoTrainState initial_supervised_phase(const Workspace& ws, const PipelineParams& params, const CoTrainConfig& cfg);

/// Runs the view's detector on each image and keeps detections the ensemble
/// labels "object" with fused confidence >= tau, deduplicated by NMS.
std::vector<PseudoLabel> generate_pseudo_labels(const ViewState& view, std::span<const data::ImageRecord* const> images,
                                                double tau, double nms_iou, int round, const CoTrainConfig& cfg);

/// One exchange: pseudo-labels from each view feed the other (or itself in
/// Self mode), replacing per image the older labels from the same source;
/// both detectors are retrained on labeled train plus their accepted set.
CoTrainState exchange_round(CoTrainState state, const Workspace& ws, const CoTrainConfig& cfg);

/// True when each of the last `patience` steps of `series` improved by less
/// than `epsilon` over its predecessor.
bool plateaued(std::span<const double> series, double epsilon, int patience);

/// Stopping rule over the history: both views have plateaued.
bool should_stop(std::span<const RoundRecord> history, double epsilon, int patience);

struct CoTrainResult {
  CoTrainState final_state;
  CoTrainState best_state;  // the state evaluated on the test partition
  int best_round = 0;
  metrics::EvalReport test_a;
  metrics::EvalReport test_b;
  metrics::EvalReport test_combined;
};

struct RunHooks {
  std::optional<std::filesystem::path> checkpoint_dir;
  bool resume = false;
  std::function<void(const CoTrainState&)> on_round;
};

/// Supervised phase, then exchange rounds until max_rounds or the stopping
/// rule; the best-validation state (by combined validation mAP) is evaluated
/// once on the test partition. With a checkpoint directory every round is
/// written as round_NNN.json (ensembles once, in ensembles.json); on failure
/// the last good state goes to failed_state.json before the error propagates.
CoTrainResult run_cotraining(const Workspace& ws, const PipelineParams& params, const CoTrainConfig& cfg,
                             const RunHooks& hooks = {});

/// Validation mAP of the combined views after the supervised phase.
double supervised_validation_map(const Workspace& ws, const PipelineParams& params, const CoTrainConfig& cfg);

nlohmann::json to_json(const PseudoLabel& p);
PseudoLabel pseudo_label_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoundRecord& r);
RoundRecord round_record_from_json(const nlohmann::json& j);
/// Without ensembles the document is small enough to write every round;
/// state_from_json then leaves the ensembles default-constructed.
nlohmann::json to_json(const CoTrainState& s, bool include_ensembles = true);
CoTrainState state_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CoTrainConfig& c);
CoTrainConfig cotrain_config_from_json(const nlohmann::json& j, CoTrainConfig defaults = {});
nlohmann::json to_json(const PipelineParams& p);
PipelineParams pipeline_params_from_json(const nlohmann::json& j, PipelineParams defaults = {});

}  // namespace densecotrain::cotrain
