#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "densecotrain/cotrain.hpp"
#include "densecotrain/dataset.hpp"
#include "densecotrain/tuner.hpp"

namespace densecotrain::run {

inline constexpr std::string_view kArtifactVersion = "0.1.0";

struct DatasetSource {
  enum class Kind { Synthetic, Csv };
  Kind kind = Kind::Synthetic;
  std::filesystem::path csv;
  std::optional<std::size_t> images;  // synthetic image count; default n_labeled + n_unlabeled
  data::SyntheticDatasetSpec synthetic;
};

/// Everything one run needs. JSON numbers are written at full precision so
/// an echoed config reproduces the run.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  DatasetSource dataset;
  std::size_t n_labeled = 2000;
  std::size_t n_unlabeled = 8000;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  cotrain::PipelineParams pipeline;
  cotrain::CoTrainConfig cotrain;
  tuner::TunerConfig tuner;
  std::vector<tuner::GeneSpec> gene_specs = tuner::default_specs();
};

/// Accepts a RunConfig document or a RunReport (whose "config" echo is used).
/// A "hyper" object (gene name -> value) is decoded into the pipeline.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

/// Applies a HyperVector document to the pipeline parameters.
void apply_hyper(RunConfig& c, const nlohmann::json& hyper);

/// The seed, or ValidationError naming --seed when none was given.
std::uint64_t require_seed(const RunConfig& c);

/// Copies the run seed and thread count into the module configs.
void propagate(RunConfig& c);

struct PreparedData {
  std::vector<data::ImageRecord> records;
  data::DatasetSplit split;
  std::vector<std::string> warnings;
};

PreparedData prepare_data(const RunConfig& c);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Pairs predictions with ground-truth records by image id. Every record is
/// evaluated (no predictions counts as none); predictions for images absent
/// from the ground truth raise ValidationError.
std::vector<metrics::EvalImage> pair_predictions(std::span<const data::ImageRecord> truth,
                                                 const std::map<std::string, std::vector<detect::Detection>>& preds);

/// One JSON object per line: {image_id, detections: [{x1,y1,x2,y2,score,label}]}.
void write_predictions_jsonl(std::ostream& out, std::span<const std::string> image_ids,
                             std::span<const metrics::EvalImage> images);

void write_history_csv(std::ostream& out, std::span<const cotrain::RoundRecord> history);
void write_trace_csv(std::ostream& out, std::span<const tuner::TraceEntry> trace,
                     std::span<const tuner::GeneSpec> specs);

struct TraceRow {
  int evaluation = 0;
  double score = 0.0;
  double best_so_far = 0.0;
};
std::vector<TraceRow> read_trace_csv(std::istream& in, const std::string& source_name = "<stream>");

struct Timings {
  double data_s = 0.0;
  double run_s = 0.0;
};

/// RunReport of a co-training (or baseline) run.
nlohmann::json make_run_report(const RunConfig& c, const cotrain::CoTrainResult& r, std::uint64_t labeled_fingerprint,
                               const Timings& t);

/// Fixed-layout text table: rows view A, view B, combined; columns mAP,
/// AP.75, AR@300.
std::string metrics_table(const nlohmann::json& report);

}  // namespace densecotrain::run
