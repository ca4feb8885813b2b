#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "densecotrain/cotrain.hpp"
#include "densecotrain/dataset.hpp"
#include "densecotrain/ensemble.hpp"
#include "densecotrain/errors.hpp"
#include "densecotrain/geom.hpp"
#include "densecotrain/metrics.hpp"
#include "densecotrain/run.hpp"
#include "densecotrain/tuner.hpp"

namespace py = pybind11;
using namespace densecotrain;

namespace {

using BoxTuple = std::tuple<double, double, double, double>;

geom::Box to_box(const BoxTuple& b) { return {std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b)}; }

// Detections are (x1, y1, x2, y2, score[, label]); truths (x1, y1, x2, y2[, label]).
metrics::EvalImage to_eval_image(const py::dict& d) {
  metrics::EvalImage im;
  if (d.contains("detections")) {
    for (const auto& item : d["detections"]) {
      const auto t = item.cast<std::vector<double>>();
      if (t.size() != 5 && t.size() != 6) throw ValidationError("a detection is (x1, y1, x2, y2, score[, label])");
      im.detections.push_back({geom::Box(t[0], t[1], t[2], t[3]), t[4], t.size() == 6 ? static_cast<int>(t[5]) : 0});
    }
  }
  if (d.contains("truths")) {
    for (const auto& item : d["truths"]) {
      const auto t = item.cast<std::vector<double>>();
      if (t.size() != 4 && t.size() != 5) throw ValidationError("a truth is (x1, y1, x2, y2[, label])");
      im.truths.push_back({geom::Box(t[0], t[1], t[2], t[3]), t.size() == 5 ? static_cast<int>(t[4]) : 0});
    }
  }
  return im;
}

std::vector<metrics::EvalImage> to_eval_images(const py::list& images) {
  std::vector<metrics::EvalImage> out;
  for (const auto& d : images) out.push_back(to_eval_image(d.cast<py::dict>()));
  return out;
}

std::string evaluate_json(const py::list& images, std::size_t max_dets) {
  return metrics::to_json(metrics::evaluate(to_eval_images(images), max_dets), true).dump();
}

std::string synthetic_json(std::size_t n_images, std::uint64_t seed, const std::string& scene_json) {
  data::SyntheticDatasetSpec spec;
  spec.scene = data::scene_from_json(nlohmann::json::parse(scene_json), spec.scene);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : data::generate_synthetic_dataset(n_images, spec, seed)) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& g : r.gts) boxes.push_back({g.box.x1(), g.box.y1(), g.box.x2(), g.box.y2()});
    out.push_back({{"image_id", r.image_id},
                   {"width", r.width},
                   {"height", r.height},
                   {"boxes", boxes},
                   {"occlusion", r.occlusion}});
  }
  return out.dump();
}

std::string cotrain_json(const std::string& config_json) {
  auto cfg = run::run_config_from_json(nlohmann::json::parse(config_json));
  run::propagate(cfg);
  auto prepared = run::prepare_data(cfg);
  const cotrain::Workspace ws(std::move(prepared.records), std::move(prepared.split));
  const auto result = cotrain::run_cotraining(ws, cfg.pipeline, cfg.cotrain);
  return run::make_run_report(cfg, result, ws.labeled_fingerprint(), {}).dump();
}

std::string tune_json(const std::string& config_json) {
  auto cfg = run::run_config_from_json(nlohmann::json::parse(config_json));
  run::propagate(cfg);
  auto prepared = run::prepare_data(cfg);
  const cotrain::Workspace ws(std::move(prepared.records), std::move(prepared.split));
  const auto r = tuner::tune_pipeline(ws, cfg.cotrain, cfg.tuner, cfg.gene_specs, cfg.pipeline);
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : r.tune.trace) {
    trace.push_back({{"evaluation", t.evaluation}, {"score", t.score}, {"best_so_far", t.best_so_far}});
  }
  return nlohmann::json{{"best_score", r.tune.best_score},
                        {"vector", tuner::to_json(r.tune.best, cfg.gene_specs)},
                        {"trace", trace}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of densecotrain";
  m.attr("__version__") = std::string(run::kArtifactVersion);

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);

  m.def("iou", [](const BoxTuple& a, const BoxTuple& b) { return geom::iou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));
  m.def(
      "nms",
      [](const std::vector<BoxTuple>& boxes, const std::vector<double>& scores, double threshold,
         std::optional<std::vector<int>> labels) {
        if (scores.size() != boxes.size()) throw ValidationError("one score per box expected");
        if (labels && labels->size() != boxes.size()) throw ValidationError("one label per box expected");
        std::vector<geom::ScoredBox> in;
        for (std::size_t i = 0; i < boxes.size(); ++i) in.push_back({to_box(boxes[i]), scores[i], labels ? (*labels)[i] : 0});
        return geom::nms_indices(in, threshold);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("threshold"), py::arg("labels") = py::none());
  m.def(
      "average_precision",
      [](const py::list& images, double threshold) -> std::optional<double> {
        return metrics::average_precision(to_eval_images(images), threshold).value;
      },
      py::arg("images"), py::arg("iou_threshold"));
  m.def(
      "brute_force_ap_oracle",
      [](const py::list& images, double threshold) -> std::optional<double> {
        return metrics::brute_force_ap_oracle(to_eval_images(images), threshold).value;
      },
      py::arg("images"), py::arg("iou_threshold"));
  m.def("_evaluate_json", &evaluate_json, py::arg("images"), py::arg("max_dets") = 300);
  m.def("split_sizes", &data::split_sizes, py::arg("n_labeled"), py::arg("fractions"));
  m.def(
      "fuse",
      [](const std::array<std::pair<int, double>, 3>& members) {
        std::array<ensemble::MemberVote, 3> votes{};
        for (std::size_t i = 0; i < 3; ++i) votes[i] = {members[i].first, members[i].second};
        const auto p = ensemble::fuse(votes);
        return std::pair<int, double>{p.label, p.confidence};
      },
      py::arg("members"));
  m.def("_synthetic_json", &synthetic_json, py::arg("n_images"), py::arg("seed"), py::arg("scene_json"));
  m.def("_cotrain_json", &cotrain_json, py::arg("config_json"), py::call_guard<py::gil_scoped_release>());
  m.def("_tune_json", &tune_json, py::arg("config_json"), py::call_guard<py::gil_scoped_release>());
}
