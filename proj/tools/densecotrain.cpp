// densecotrain command-line interface.
//
// Exit codes: 0 success, 2 usage or validation error, 3 I/O error, 4 runtime
// failure. Logs go to stderr (level from DENSECOTRAIN_LOG); stdout carries
// the command's results.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "densecotrain/cotrain.hpp"
#include "densecotrain/dataset.hpp"
#include "densecotrain/errors.hpp"
#include "densecotrain/log.hpp"
#include "densecotrain/metrics.hpp"
#include "densecotrain/run.hpp"
#include "densecotrain/svg.hpp"
#include "densecotrain/tuner.hpp"

namespace fs = std::filesystem;
using namespace densecotrain;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitRuntime = 4;

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "RunConfig JSON file (a RunReport works too)");
  cmd->add_option("--seed", c.seed, "Seed for every random choice of the run");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--threads", c.threads, "Worker threads (does not change results)")->check(CLI::PositiveNumber);
}

run::RunConfig base_config(const Common& c) {
  run::RunConfig cfg = c.config ? run::load_run_config(*c.config) : run::RunConfig{};
  if (c.seed) cfg.seed = c.seed;
  cfg.cotrain.threads = c.threads;
  return cfg;
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", dir, ec.message()));
  return fs::path(dir);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::optional<std::size_t> images;
  std::optional<int> rows, cols, rows_spread, cols_spread;
  std::optional<double> box_w, box_h, jitter, overlap, overlap_spread;
};

int cmd_synth_gen(const SynthArgs& a) {
  auto cfg = base_config(a.common);
  const auto seed = run::require_seed(cfg);
  auto spec = cfg.dataset.synthetic;
  if (a.rows) spec.scene.grid_rows = *a.rows;
  if (a.cols) spec.scene.grid_cols = *a.cols;
  if (a.box_w) spec.scene.box_w = *a.box_w;
  if (a.box_h) spec.scene.box_h = *a.box_h;
  if (a.jitter) spec.scene.jitter = *a.jitter;
  if (a.overlap) spec.scene.overlap_factor = *a.overlap;
  if (a.overlap_spread) spec.overlap_spread = *a.overlap_spread;
  if (a.rows_spread) spec.rows_spread = *a.rows_spread;
  if (a.cols_spread) spec.cols_spread = *a.cols_spread;
  data::validate(spec.scene);
  const std::size_t n = a.images.value_or(cfg.dataset.images.value_or(100));
  if (n == 0) throw ValidationError("--images must be >= 1");

  const auto records = data::generate_synthetic_dataset(n, spec, seed);
  const auto dir = ensure_dir(*a.common.out);
  std::ostringstream csv;
  data::write_annotations(csv, records);
  run::write_text_file(dir / "annotations.csv", csv.str());
  run::write_text_file(dir / "manifest.json", data::synthetic_manifest(n, spec, seed).dump(2) + "\n");

  std::size_t boxes = 0;
  for (const auto& r : records) boxes += r.gts.size();
  std::cout << fmt::format("images {}\nboxes {}\nannotations {}\n", records.size(), boxes,
                           (dir / "annotations.csv").string());
  return 0;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  Common common;
  std::optional<std::string> annotations;
  std::optional<std::size_t> labeled, unlabeled;
  std::vector<double> fractions;
};

void apply_counts(run::RunConfig& cfg, const std::optional<std::size_t>& labeled,
                  const std::optional<std::size_t>& unlabeled) {
  if (labeled) cfg.n_labeled = *labeled;
  if (unlabeled) cfg.n_unlabeled = *unlabeled;
}

int cmd_split(const SplitArgs& a) {
  auto cfg = base_config(a.common);
  run::require_seed(cfg);
  apply_counts(cfg, a.labeled, a.unlabeled);
  if (a.annotations) {
    cfg.dataset.kind = run::DatasetSource::Kind::Csv;
    cfg.dataset.csv = *a.annotations;
  }
  if (!a.fractions.empty()) {
    if (a.fractions.size() != 3) throw ValidationError("--fractions takes three comma-separated values");
    cfg.fractions = {a.fractions[0], a.fractions[1], a.fractions[2]};
  }
  const auto prepared = run::prepare_data(cfg);
  for (const auto& w : prepared.warnings) log().warn("{}", w);
  const auto dir = ensure_dir(*a.common.out);
  run::write_text_file(dir / "split.json", data::to_json(prepared.split).dump(2) + "\n");
  const auto& s = prepared.split;
  std::cout << fmt::format("train {}\nval {}\ntest {}\nunlabeled {}\n", s.train.size(), s.val.size(), s.test.size(),
                           s.unlabeled_pool.size());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string predictions;
  std::string annotations;
  bool pr_svg = false;
  std::size_t max_dets = 300;
};

int cmd_evaluate(const EvalArgs& a) {
  auto truth = data::load_annotations(a.annotations);
  for (const auto& w : truth.warnings) log().warn("{}", w);
  const auto preds = detect::RecordedDetector::from_jsonl(fs::path(a.predictions));
  const auto images = run::pair_predictions(truth.records, preds.all());
  const auto report = metrics::evaluate(images, a.max_dets);

  std::string text = fmt::format("mAP {:.4f}\n", report.map_coco);
  for (const auto& t : report.ap_per_threshold) text += fmt::format("AP@{:.2f} {:.4f}\n", t.threshold, t.ap);
  text += fmt::format("AP.75 {:.4f}\nAR@{} {:.4f}\n", report.ap75, a.max_dets, report.ar300);
  std::cout << text;

  if (a.common.out) {
    const auto dir = ensure_dir(*a.common.out);
    auto j = metrics::to_json(report);
    j["max_dets"] = a.max_dets;
    run::write_text_file(dir / "eval.json", j.dump(2) + "\n");
    if (a.pr_svg) {
      for (std::size_t k = 0; k < report.pr_curves.size(); ++k) {
        const double t = report.ap_per_threshold[k].threshold;
        svg::LinePlot plot{fmt::format("Precision-recall at IoU {:.2f} (AP {:.4f})", t, report.ap_per_threshold[k].ap),
                           "recall", "precision", {}, std::pair{0.0, 1.0}, false};
        svg::Series s{"PR", {}};
        for (const auto& p : report.pr_curves[k]) s.points.emplace_back(p.recall, p.precision);
        plot.series.push_back(std::move(s));
        svg::write(dir / fmt::format("pr_{:03d}.svg", static_cast<int>(std::lround(t * 100))), plot);
      }
    }
  } else if (a.pr_svg) {
    throw ValidationError("--pr-svg needs --out");
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct CotrainArgs {
  Common common;
  std::optional<int> max_rounds;
  std::optional<double> tau;
  std::string baseline = "none";
  std::optional<std::string> hyper;
  bool resume = false;
  std::optional<std::size_t> labeled, unlabeled;
};

int cmd_cotrain(const CotrainArgs& a) {
  auto cfg = base_config(a.common);
  apply_counts(cfg, a.labeled, a.unlabeled);
  if (a.max_rounds) cfg.cotrain.max_rounds = *a.max_rounds;
  if (a.tau) cfg.cotrain.tau_conf = *a.tau;
  if (a.baseline == "self-train") cfg.cotrain.exchange = cotrain::ExchangeMode::Self;
  if (a.hyper) {
    auto doc = run::read_json_file(*a.hyper);
    run::apply_hyper(cfg, doc.contains("vector") ? doc["vector"] : doc);
  }
  run::propagate(cfg);
  const auto dir = ensure_dir(*a.common.out);

  const auto t0 = std::chrono::steady_clock::now();
  auto prepared = run::prepare_data(cfg);
  for (const auto& w : prepared.warnings) log().warn("{}", w);
  const cotrain::Workspace ws(std::move(prepared.records), std::move(prepared.split));
  run::Timings timings;
  timings.data_s = seconds_since(t0);

  cotrain::RunHooks hooks;
  hooks.checkpoint_dir = dir / "checkpoints";
  hooks.resume = a.resume;
  const auto t1 = std::chrono::steady_clock::now();
  const auto result = cotrain::run_cotraining(ws, cfg.pipeline, cfg.cotrain, hooks);
  timings.run_s = seconds_since(t1);

  const auto report = run::make_run_report(cfg, result, ws.labeled_fingerprint(), timings);
  run::write_text_file(dir / "report.json", report.dump(2) + "\n");
  std::ostringstream history;
  run::write_history_csv(history, result.final_state.history);
  run::write_text_file(dir / "history.csv", history.str());

  std::cout << run::metrics_table(report);
  std::cout << fmt::format("best round {} of {}\n", result.best_round, result.final_state.round);
  return 0;
}

// ---------------------------------------------------------------------------

struct TuneArgs {
  Common common;
  std::optional<std::string> algorithm;
  std::optional<int> budget, population;
  std::optional<std::size_t> labeled, unlabeled;
};

int cmd_tune(const TuneArgs& a) {
  auto cfg = base_config(a.common);
  apply_counts(cfg, a.labeled, a.unlabeled);
  if (a.algorithm) cfg.tuner.algorithm = tuner::algorithm_from_string(*a.algorithm);
  if (a.budget) cfg.tuner.budget = *a.budget;
  if (a.population) cfg.tuner.population = *a.population;
  run::propagate(cfg);
  const auto dir = ensure_dir(*a.common.out);

  auto prepared = run::prepare_data(cfg);
  for (const auto& w : prepared.warnings) log().warn("{}", w);
  const cotrain::Workspace ws(std::move(prepared.records), std::move(prepared.split));

  const auto t0 = std::chrono::steady_clock::now();
  tuner::PipelineTuneResult result;
  try {
    result = tuner::tune_pipeline(ws, cfg.cotrain, cfg.tuner, cfg.gene_specs, cfg.pipeline);
  } catch (const RuntimeFailure& e) {
    run::write_text_file(dir / "failed_vector.txt", std::string(e.what()) + "\n");
    throw;
  }
  const double elapsed = seconds_since(t0);

  std::ostringstream trace;
  run::write_trace_csv(trace, result.tune.trace, cfg.gene_specs);
  run::write_text_file(dir / "trace.csv", trace.str());
  const auto vector = tuner::to_json(result.tune.best, cfg.gene_specs);
  run::write_text_file(dir / "best_vector.json", vector.dump(2) + "\n");
  nlohmann::json report = {{"artifact", "densecotrain"},
                           {"version", std::string(run::kArtifactVersion)},
                           {"kind", "tune_report"},
                           {"config", run::to_json(cfg)},
                           {"best_score", result.tune.best_score},
                           {"evaluations", result.tune.trace.size()},
                           {"vector", vector},
                           {"timings", {{"run_s", elapsed}}}};
  run::write_text_file(dir / "tune_report.json", report.dump(2) + "\n");

  std::cout << fmt::format("best validation mAP {:.4f} after {} evaluations\n", result.tune.best_score,
                           result.tune.trace.size());
  std::cout << tuner::describe(result.tune.best, cfg.gene_specs) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string run_dir;
  std::optional<std::string> out;
};

int cmd_report(const ReportArgs& a) {
  const fs::path run_dir(a.run_dir);
  std::vector<std::string> missing;
  for (const char* name : {"report.json", "history.csv"}) {
    if (!fs::exists(run_dir / name)) missing.push_back((run_dir / name).string());
  }
  if (!missing.empty()) throw IoError(fmt::format("run directory is missing: {}", fmt::join(missing, ", ")));

  const auto report = run::read_json_file(run_dir / "report.json");
  const auto out = ensure_dir(a.out.value_or(a.run_dir));
  std::cout << run::metrics_table(report);

  svg::LinePlot history{"Validation mAP per round", "round", "validation mAP", {}, std::nullopt, true};
  svg::Series sa{"view A", {}}, sb{"view B", {}}, sc{"combined", {}};
  for (const auto& h : report.at("history")) {
    const double r = h.at("round").get<double>();
    sa.points.emplace_back(r, h.at("val_map_a").get<double>());
    sb.points.emplace_back(r, h.at("val_map_b").get<double>());
    sc.points.emplace_back(r, h.at("val_map_combined").get<double>());
  }
  history.series = {sa, sb, sc};
  svg::write(out / "history.svg", history);
  std::cout << "wrote " << (out / "history.svg").string() << "\n";

  if (fs::exists(run_dir / "trace.csv")) {
    std::ifstream in(run_dir / "trace.csv");
    if (!in) throw IoError("cannot open " + (run_dir / "trace.csv").string());
    const auto rows = run::read_trace_csv(in, (run_dir / "trace.csv").string());
    svg::LinePlot trace{"Tuning trace", "evaluation", "validation mAP", {}, std::nullopt, false};
    svg::Series score{"score", {}}, best{"best so far", {}};
    for (const auto& r : rows) {
      score.points.emplace_back(r.evaluation, r.score);
      best.points.emplace_back(r.evaluation, r.best_so_far);
    }
    trace.series = {score, best};
    svg::write(out / "trace.svg", trace);
    std::cout << "wrote " << (out / "trace.svg").string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-training semi-supervised dense object detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(run::kArtifactVersion));

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-gen", "Generate a synthetic dense-scene dataset");
  add_common(synth_cmd, synth.common, true);
  synth_cmd->add_option("--images", synth.images, "Number of images");
  synth_cmd->add_option("--rows", synth.rows, "Grid rows per scene");
  synth_cmd->add_option("--cols", synth.cols, "Grid columns per scene");
  synth_cmd->add_option("--box-w", synth.box_w, "Box width in pixels");
  synth_cmd->add_option("--box-h", synth.box_h, "Box height in pixels");
  synth_cmd->add_option("--jitter", synth.jitter, "Position jitter in pixels");
  synth_cmd->add_option("--overlap", synth.overlap, "Overlap factor in [0, 0.9]");
  synth_cmd->add_option("--overlap-spread", synth.overlap_spread, "Per-image overlap variation");
  synth_cmd->add_option("--rows-spread", synth.rows_spread, "Per-image row count variation");
  synth_cmd->add_option("--cols-spread", synth.cols_spread, "Per-image column count variation");

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Select labeled/unlabeled images and split train/val/test");
  add_common(split_cmd, split.common, true);
  split_cmd->add_option("--annotations", split.annotations, "Annotation CSV (default: the config's dataset)");
  split_cmd->add_option("--labeled", split.labeled, "Number of labeled images");
  split_cmd->add_option("--unlabeled", split.unlabeled, "Number of unlabeled images");
  split_cmd->add_option("--fractions", split.fractions, "train,val,test fractions")->delimiter(',');

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a predictions file against ground truth");
  add_common(eval_cmd, eval.common, false);
  eval_cmd->add_option("--predictions", eval.predictions, "Predictions JSONL")->required();
  eval_cmd->add_option("--annotations", eval.annotations, "Ground-truth annotation CSV")->required();
  eval_cmd->add_flag("--pr-svg", eval.pr_svg, "Write a precision-recall SVG per IoU threshold");
  eval_cmd->add_option("--max-dets", eval.max_dets, "Detections per image for average recall")
      ->check(CLI::PositiveNumber);

  CotrainArgs co;
  auto* co_cmd = app.add_subcommand("cotrain", "Run co-training and evaluate on the test partition");
  add_common(co_cmd, co.common, true);
  co_cmd->add_option("--max-rounds", co.max_rounds, "Exchange rounds after the supervised phase");
  co_cmd->add_option("--tau", co.tau, "Pseudo-label acceptance threshold");
  co_cmd->add_option("--baseline", co.baseline, "none or self-train")
      ->check(CLI::IsMember({"none", "self-train"}));
  co_cmd->add_option("--hyper", co.hyper, "HyperVector JSON (e.g. from tune)");
  co_cmd->add_flag("--resume", co.resume, "Continue from the latest checkpoint in --out");
  co_cmd->add_option("--labeled", co.labeled, "Number of labeled images");
  co_cmd->add_option("--unlabeled", co.unlabeled, "Number of unlabeled images");

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune", "Tune the 20 pipeline hyperparameters on validation mAP");
  add_common(tune_cmd, tune.common, true);
  tune_cmd->add_option("--algorithm", tune.algorithm, "ga or sa")->check(CLI::IsMember({"ga", "sa"}));
  tune_cmd->add_option("--budget", tune.budget, "Objective evaluations");
  tune_cmd->add_option("--population", tune.population, "GA population size");
  tune_cmd->add_option("--labeled", tune.labeled, "Number of labeled images");
  tune_cmd->add_option("--unlabeled", tune.unlabeled, "Number of unlabeled images");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Summarize a run directory and draw its plots");
  rep_cmd->add_option("--run", rep.run_dir, "Run directory (holds report.json)")->required();
  rep_cmd->add_option("--out", rep.out, "Where to write the SVG plots (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth_gen(synth);
    if (split_cmd->parsed()) return cmd_split(split);
    if (eval_cmd->parsed()) return cmd_evaluate(eval);
    if (co_cmd->parsed()) return cmd_cotrain(co);
    if (tune_cmd->parsed()) return cmd_tune(tune);
    if (rep_cmd->parsed()) return cmd_report(rep);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
