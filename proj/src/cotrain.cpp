#include "densecotrain/cotrain.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "densecotrain/errors.hpp"
#include "densecotrain/log.hpp"
#include "densecotrain/parallel.hpp"
#include "densecotrain/random.hpp"

namespace densecotrain::cotrain {

namespace {

// Seeds are keyed by purpose and image id only, never by round: a view
// re-run on the same image sees the same random draws, so changes between
// rounds come from changed skill rather than resampling noise.
std::uint64_t image_seed(std::uint64_t seed, std::string_view purpose, const std::string& image_id) {
  return derive_seed(seed, {hash_string(purpose), hash_string(image_id)});
}

struct OracleMatch {
  double iou = 0.0;
  double occlusion = 0.0;
};

// Best same-label overlap with a hidden true box of the image.
OracleMatch oracle_match(const data::ImageRecord& rec, const geom::Box& box, int label) {
  OracleMatch best;
  for (std::size_t g = 0; g < rec.gts.size(); ++g) {
    if (rec.gts[g].label != label) continue;
    const double v = geom::iou(box, rec.gts[g].box);
    if (v > best.iou) {
      best.iou = v;
      best.occlusion = g < rec.occlusion.size() ? rec.occlusion[g] : 0.0;
    }
  }
  return best;
}

std::vector<detect::TrainingAnnotation> labeled_annotations(const Workspace& ws) {
  std::vector<detect::TrainingAnnotation> out;
  for (const auto* rec : ws.train()) {
    const auto occ = rec->occlusion.size() == rec->gts.size() ? rec->occlusion : data::occlusion_levels(rec->gts);
    for (double o : occ) out.push_back({1.0, o, true, false});
  }
  return out;
}

const detect::ProfileConstants& constants_of(const ViewState& v, const CoTrainConfig& cfg) {
  return cfg.simulation.constants(v.config.profile);
}

ensemble::Dataset ensemble_training_set(const ViewState& view, const Workspace& ws, const CoTrainConfig& cfg) {
  const auto det = view.detector(cfg.simulation);
  std::vector<std::vector<detect::Detection>> per_image(ws.train().size());
  parallel_for(ws.train().size(), cfg.threads, [&](std::size_t i) {
    const auto* rec = ws.train()[i];
    per_image[i] = det.detect_with_threshold(*rec, image_seed(cfg.seed, "ensemble-train", rec->image_id), 0.0);
  });

  std::array<std::vector<const std::vector<double>*>, 2> by_class;
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    for (const auto& d : per_image[i]) {
      const bool object = oracle_match(*ws.train()[i], d.scored.box, d.scored.label).iou >= 0.5;
      by_class[object ? 1 : 0].push_back(&d.features);
    }
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw RuntimeFailure(fmt::format("view {}: ensemble training needs both object and background detections "
                                     "(got {} and {})",
                                     to_string(view.view), by_class[1].size(), by_class[0].size()));
  }

  ensemble::Dataset data(static_cast<std::size_t>(cfg.simulation.features.dim));
  Rng rng(derive_seed(cfg.seed, {hash_string("ensemble-sample"), static_cast<std::uint64_t>(view.view)}));
  for (int label : {0, 1}) {
    auto& rows = by_class[static_cast<std::size_t>(label)];
    std::shuffle(rows.begin(), rows.end(), rng);
    if (rows.size() > cfg.max_samples_per_class) rows.resize(cfg.max_samples_per_class);
  }
  // Interleave classes so row order does not depend on the shuffle of one class only.
  const std::size_t n = std::max(by_class[0].size(), by_class[1].size());
  for (std::size_t k = 0; k < n; ++k) {
    for (int label : {0, 1}) {
      const auto& rows = by_class[static_cast<std::size_t>(label)];
      if (k < rows.size()) data.add(*rows[k], label);
    }
  }
  return data;
}

ViewState make_view(View v, const ViewConfig& config, const Workspace& ws, const CoTrainConfig& cfg) {
  ViewState s;
  s.view = v;
  s.config = config;
  s.base_skill = detect::skill_from_params(config.detector, cfg.simulation.constants(config.profile), ws.regime());
  s.skill = s.base_skill;
  return s;
}

void retrain_view(ViewState& view, const std::vector<detect::TrainingAnnotation>& labeled,
                  std::span<const PseudoLabel> accepted, const Workspace& ws, const CoTrainConfig& cfg) {
  std::vector<detect::TrainingAnnotation> annotations = labeled;
  for (const auto& p : accepted) {
    const auto m = oracle_match(ws.record(p.image_id), p.box, p.label);
    annotations.push_back({m.iou, m.occlusion, m.iou >= 0.5, p.source_view == view.view});
  }
  view.skill = detect::retrain(view.base_skill, constants_of(view, cfg), annotations);
}

// Supersedes, per image, labels from the same source view with the new batch.
void replace_per_image(std::vector<PseudoLabel>& accepted, const std::vector<PseudoLabel>& incoming) {
  if (incoming.empty()) return;
  const View source = incoming.front().source_view;
  std::set<std::string> touched;
  for (const auto& p : incoming) touched.insert(p.image_id);
  std::erase_if(accepted, [&](const PseudoLabel& p) { return p.source_view == source && touched.contains(p.image_id); });
  accepted.insert(accepted.end(), incoming.begin(), incoming.end());
  std::stable_sort(accepted.begin(), accepted.end(),
                   [](const PseudoLabel& a, const PseudoLabel& b) { return a.image_id < b.image_id; });
}

double val_map(const std::vector<metrics::EvalImage>& images) {
  std::size_t n_truth = 0;
  for (const auto& im : images) n_truth += im.truths.size();
  if (n_truth == 0) throw ValidationError("validation partition has no ground truth");
  return metrics::mean_average_precision(images).map_coco;
}

RoundRecord evaluate_round(const CoTrainState& s, const Workspace& ws, const CoTrainConfig& cfg) {
  RoundRecord r;
  r.round = s.round;
  r.val_map_a = val_map(view_predictions(s.view_a, ws.val(), cfg));
  r.val_map_b = val_map(view_predictions(s.view_b, ws.val(), cfg));
  r.val_map_combined = val_map(combined_predictions(s.view_a, s.view_b, ws.val(), cfg));
  return r;
}

std::vector<const data::ImageRecord*> round_pool(const Workspace& ws, const CoTrainConfig& cfg, int round) {
  std::vector<const data::ImageRecord*> pool = ws.unlabeled();
  if (cfg.unlabeled_fraction >= 1.0) return pool;
  Rng rng(derive_seed(cfg.seed, {hash_string("unlabeled-batch"), static_cast<std::uint64_t>(round)}));
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto keep = static_cast<std::size_t>(cfg.unlabeled_fraction * static_cast<double>(pool.size()) + 1e-9);
  pool.resize(std::max<std::size_t>(keep, pool.empty() ? 0 : 1));
  std::sort(pool.begin(), pool.end(), [](const auto* a, const auto* b) { return a->image_id < b->image_id; });
  return pool;
}

}  // namespace

std::string_view to_string(View v) { return v == View::A ? "A" : "B"; }

void validate(const CoTrainConfig& c) {
  if (!(c.tau_conf > 0.0 && c.tau_conf <= 1.0)) throw ValidationError("tau_conf must lie in (0,1]");
  if (c.max_rounds < 0) throw ValidationError("max_rounds must be >= 0");
  if (!(c.epsilon >= 0.0)) throw ValidationError("epsilon must be >= 0");
  if (c.patience < 1) throw ValidationError("patience must be >= 1");
  if (!(c.pseudo_nms_iou > 0.0 && c.pseudo_nms_iou < 1.0)) throw ValidationError("pseudo_nms_iou must lie in (0,1)");
  if (!(c.combine_nms_iou > 0.0 && c.combine_nms_iou < 1.0)) throw ValidationError("combine_nms_iou must lie in (0,1)");
  if (!(c.unlabeled_fraction > 0.0 && c.unlabeled_fraction <= 1.0)) {
    throw ValidationError("unlabeled_fraction must lie in (0,1]");
  }
  if (c.max_samples_per_class < 2) throw ValidationError("max_samples_per_class must be >= 2");
  if (c.max_dets < 1) throw ValidationError("max_dets must be >= 1");
  if (c.threads < 1) throw ValidationError("threads must be >= 1");
  if (c.simulation.features.dim < 2) throw ValidationError("feature dimension must be >= 2");
}

// ---------------------------------------------------------------------------
// Workspace

Workspace::Workspace(std::vector<data::ImageRecord> records, data::DatasetSplit split)
    : records_(std::move(records)), split_(std::move(split)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto& r = records_[i];
    if (r.occlusion.size() != r.gts.size()) r.occlusion = data::occlusion_levels(r.gts);
    if (!index_.emplace(r.image_id, i).second) throw ValidationError("duplicate image id '" + r.image_id + "'");
  }
  const auto resolve = [&](const std::vector<std::string>& ids, std::vector<const data::ImageRecord*>& out,
                           const char* part) {
    for (const auto& id : ids) {
      auto it = index_.find(id);
      if (it == index_.end()) throw ValidationError(fmt::format("{} partition names unknown image '{}'", part, id));
      out.push_back(&records_[it->second]);
    }
  };
  resolve(split_.train, train_, "train");
  resolve(split_.val, val_, "val");
  resolve(split_.test, test_, "test");
  resolve(split_.unlabeled_pool, unlabeled_, "unlabeled");
  if (train_.empty()) throw ValidationError("train partition is empty");

  std::vector<data::ImageRecord> train_records;
  for (const auto* r : train_) train_records.push_back(*r);
  regime_ = detect::size_regime(train_records);
}

const data::ImageRecord& Workspace::record(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw ValidationError("unknown image id '" + image_id + "'");
  return records_[it->second];
}

const std::vector<const data::ImageRecord*>& Workspace::test() const {
  ++test_accesses_;
  return test_;
}

std::uint64_t Workspace::labeled_fingerprint() const {
  std::uint64_t h = hash_string("labeled");
  for (const auto* part : {&train_, &val_, &test_}) {
    for (const auto* r : *part) {
      std::string text = fmt::format("{}|{}|{}|{}", r->image_id, r->width, r->height, r->labeled);
      for (const auto& g : r->gts) {
        text += fmt::format("|{}:{},{},{},{}", g.label, g.box.x1(), g.box.y1(), g.box.x2(), g.box.y2());
      }
      for (double o : r->occlusion) text += fmt::format("|{}", o);
      h = derive_seed(h, {hash_string(text)});
    }
    h = derive_seed(h, {0xfeedULL});
  }
  return h;
}

// ---------------------------------------------------------------------------
// views

detect::SyntheticDetector ViewState::detector(const detect::SimulationConfig& sim) const {
  return {config.profile, config.detector, skill, sim.constants(config.profile), sim.features};
}

std::optional<double> audit_precision(std::span<const PseudoLabel> labels, const Workspace& ws) {
  if (labels.empty()) return std::nullopt;
  std::size_t good = 0;
  for (const auto& p : labels) good += oracle_match(ws.record(p.image_id), p.box, p.label).iou >= 0.5 ? 1 : 0;
  return static_cast<double>(good) / static_cast<double>(labels.size());
}

std::vector<metrics::EvalImage> view_predictions(const ViewState& view, std::span<const data::ImageRecord* const> images,
                                                 const CoTrainConfig& cfg) {
  if (!view.trained) throw ValidationError(fmt::format("view {} is not trained", to_string(view.view)));
  const auto det = view.detector(cfg.simulation);
  std::vector<metrics::EvalImage> out(images.size());
  parallel_for(images.size(), cfg.threads, [&](std::size_t i) {
    const auto* rec = images[i];
    auto& im = out[i];
    im.truths = rec->gts;
    for (const auto& d : det.detect(*rec, image_seed(cfg.seed, "eval", rec->image_id))) {
      const auto pred = view.ensemble.predict(d.features);
      const double p_object = pred.label == 1 ? pred.confidence : 1.0 - pred.confidence;
      im.detections.push_back({d.scored.box, d.scored.score * p_object, d.scored.label});
    }
  });
  return out;
}

std::vector<metrics::EvalImage> combined_predictions(const ViewState& a, const ViewState& b,
                                                     std::span<const data::ImageRecord* const> images,
                                                     const CoTrainConfig& cfg) {
  auto pa = view_predictions(a, images, cfg);
  const auto pb = view_predictions(b, images, cfg);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    auto& dets = pa[i].detections;
    dets.insert(dets.end(), pb[i].detections.begin(), pb[i].detections.end());
    dets = geom::nms(dets, cfg.combine_nms_iou);
  }
  return pa;
}

CoTrainState initial_supervised_phase(const Workspace& ws, const PipelineParams& params, const CoTrainConfig& cfg) {
  validate(cfg);
  if (ws.train().empty()) throw ValidationError("initial phase needs a nonempty train partition");
  const auto labeled = labeled_annotations(ws);
  if (labeled.empty()) throw ValidationError("train partition has no annotated boxes");

  CoTrainState s;
  s.view_a = make_view(View::A, params.view_a, ws, cfg);
  s.view_b = make_view(View::B, params.view_b, ws, cfg);
  for (ViewState* v : {&s.view_a, &s.view_b}) {
    retrain_view(*v, labeled, {}, ws, cfg);
    const auto data = ensemble_training_set(*v, ws, cfg);
    v->ensemble = ensemble::train_ensemble(data, v->config.ensemble,
                                           derive_seed(cfg.seed, {hash_string("ensemble"),
                                                                  static_cast<std::uint64_t>(v->view)}));
    v->trained = true;
  }
  s.history.push_back(evaluate_round(s, ws, cfg));
  log().info("round 0: val mAP A={:.4f} B={:.4f} combined={:.4f}", s.history.back().val_map_a,
             s.history.back().val_map_b, s.history.back().val_map_combined);
  return s;
}

std::vector<PseudoLabel> generate_pseudo_labels(const ViewState& view, std::span<const data::ImageRecord* const> images,
                                                double tau, double nms_iou, int round, const CoTrainConfig& cfg) {
  if (!view.trained) throw ValidationError(fmt::format("view {} is not trained", to_string(view.view)));
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("tau_conf must lie in (0,1]");
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw ValidationError("pseudo-label nms IoU must lie in (0,1)");
  if (round < 1) throw ValidationError("pseudo-label round must be >= 1");

  const auto det = view.detector(cfg.simulation);
  std::vector<std::vector<PseudoLabel>> per_image(images.size());
  parallel_for(images.size(), cfg.threads, [&](std::size_t i) {
    const auto* rec = images[i];
    std::vector<geom::ScoredBox> kept;
    for (const auto& d : det.detect(*rec, image_seed(cfg.seed, "pseudo", rec->image_id))) {
      const auto pred = view.ensemble.predict(d.features);
      if (pred.label != 1 || pred.confidence < tau) continue;
      kept.push_back({d.scored.box, pred.confidence, d.scored.label});
    }
    for (const auto& b : geom::nms(kept, nms_iou)) {
      per_image[i].push_back({rec->image_id, b.box, b.label, b.score, view.view, round});
    }
  });

  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return images[a]->image_id < images[b]->image_id; });
  std::vector<PseudoLabel> out;
  for (std::size_t i : order) out.insert(out.end(), per_image[i].begin(), per_image[i].end());
  return out;
}

CoTrainState exchange_round(CoTrainState state, const Workspace& ws, const CoTrainConfig& cfg) {
  validate(cfg);
  if (!state.view_a.trained || !state.view_b.trained) throw ValidationError("exchange_round needs an initialized state");
  const int round = state.round + 1;
  const auto pool = round_pool(ws, cfg, round);

  const auto from_a = generate_pseudo_labels(state.view_a, pool, cfg.tau_conf, cfg.pseudo_nms_iou, round, cfg);
  const auto from_b = generate_pseudo_labels(state.view_b, pool, cfg.tau_conf, cfg.pseudo_nms_iou, round, cfg);
  if (cfg.exchange == ExchangeMode::Cross) {
    replace_per_image(state.accepted_for_a, from_b);
    replace_per_image(state.accepted_for_b, from_a);
  } else {
    replace_per_image(state.accepted_for_a, from_a);
    replace_per_image(state.accepted_for_b, from_b);
  }

  const auto labeled = labeled_annotations(ws);
  retrain_view(state.view_a, labeled, state.accepted_for_a, ws, cfg);
  retrain_view(state.view_b, labeled, state.accepted_for_b, ws, cfg);
  state.round = round;

  RoundRecord r = evaluate_round(state, ws, cfg);
  r.pseudo_from_a = from_a.size();
  r.pseudo_from_b = from_b.size();
  r.precision_from_a = audit_precision(from_a, ws);
  r.precision_from_b = audit_precision(from_b, ws);
  state.history.push_back(r);
  log().info("round {}: {} labels from A, {} from B; val mAP A={:.4f} B={:.4f} combined={:.4f}", round, from_a.size(),
             from_b.size(), r.val_map_a, r.val_map_b, r.val_map_combined);
  return state;
}

bool plateaued(std::span<const double> series, double epsilon, int patience) {
  if (patience < 1 || series.size() < static_cast<std::size_t>(patience) + 1) return false;
  for (std::size_t k = series.size() - static_cast<std::size_t>(patience); k < series.size(); ++k) {
    if (series[k] - series[k - 1] >= epsilon) return false;
  }
  return true;
}

bool should_stop(std::span<const RoundRecord> history, double epsilon, int patience) {
  std::vector<double> a, b;
  for (const auto& r : history) {
    a.push_back(r.val_map_a);
    b.push_back(r.val_map_b);
  }
  return plateaued(a, epsilon, patience) && plateaued(b, epsilon, patience);
}

// ---------------------------------------------------------------------------
// driver

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp);
    out << j.dump() << '\n';
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(fmt::format("{}: not valid JSON: {}", path.string(), e.what()));
  }
}

std::filesystem::path round_file(const std::filesystem::path& dir, int round) {
  return dir / fmt::format("round_{:03d}.json", round);
}

int best_round_of(const std::vector<RoundRecord>& history) {
  int best = 0;
  for (std::size_t k = 1; k < history.size(); ++k) {
    if (history[k].val_map_combined > history[static_cast<std::size_t>(best)].val_map_combined) best = static_cast<int>(k);
  }
  return history.empty() ? 0 : history[static_cast<std::size_t>(best)].round;
}

class Checkpointer {
 public:
  explicit Checkpointer(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
    if (!dir_) return;
    std::error_code ec;
    std::filesystem::create_directories(*dir_, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir_->string() + ": " + ec.message());
  }

  void save(const CoTrainState& s) const {
    if (!dir_) return;
    if (s.round == 0) {
      write_json(*dir_ / "ensembles.json",
                 {{"A", ensemble::to_json(s.view_a.ensemble)}, {"B", ensemble::to_json(s.view_b.ensemble)}});
    }
    write_json(round_file(*dir_, s.round), to_json(s, false));
  }

  void save_failed(const CoTrainState& s) const {
    if (!dir_) return;
    try {
      write_json(*dir_ / "failed_state.json", to_json(s, false));
    } catch (const std::exception& e) {
      log().error("could not persist failed state: {}", e.what());
    }
  }

  std::optional<CoTrainState> load(int round) const {
    const auto path = round_file(*dir_, round);
    if (!std::filesystem::exists(path)) return std::nullopt;
    auto s = state_from_json(read_json(path));
    const auto e = read_json(*dir_ / "ensembles.json");
    s.view_a.ensemble = ensemble::ensemble_from_json(e.at("A"));
    s.view_b.ensemble = ensemble::ensemble_from_json(e.at("B"));
    s.view_a.trained = s.view_b.trained = true;
    return s;
  }

  std::optional<CoTrainState> load_latest() const {
    if (!dir_ || !std::filesystem::exists(*dir_)) return std::nullopt;
    int latest = -1;
    for (const auto& entry : std::filesystem::directory_iterator(*dir_)) {
      const auto name = entry.path().filename().string();
      int r = 0;
      if (name.size() == 14 && name.starts_with("round_") && name.ends_with(".json") &&
          std::sscanf(name.c_str(), "round_%3d.json", &r) == 1) {
        latest = std::max(latest, r);
      }
    }
    return latest < 0 ? std::nullopt : load(latest);
  }

 private:
  std::optional<std::filesystem::path> dir_;
};

}  // namespace

CoTrainResult run_cotraining(const Workspace& ws, const PipelineParams& params, const CoTrainConfig& cfg,
                             const RunHooks& hooks) {
  validate(cfg);
  const Checkpointer ckpt(hooks.checkpoint_dir);

  CoTrainResult result;
  CoTrainState state;
  bool resumed = false;
  if (hooks.resume) {
    if (auto latest = ckpt.load_latest()) {
      state = std::move(*latest);
      resumed = true;
      log().info("resuming from round {}", state.round);
    }
  }
  if (!resumed) {
    state = initial_supervised_phase(ws, params, cfg);
    ckpt.save(state);
    if (hooks.on_round) hooks.on_round(state);
  }

  CoTrainState best = state;
  if (resumed) {
    const int best_round = best_round_of(state.history);
    if (best_round != state.round) {
      auto loaded = ckpt.load(best_round);
      if (!loaded) throw IoError(fmt::format("checkpoint for best round {} is missing", best_round));
      best = std::move(*loaded);
    }
  }

  try {
    while (state.round < cfg.max_rounds && !should_stop(state.history, cfg.epsilon, cfg.patience)) {
      auto next = exchange_round(state, ws, cfg);
      state = std::move(next);
      ckpt.save(state);
      if (hooks.on_round) hooks.on_round(state);
      if (state.history.back().val_map_combined > best.history.back().val_map_combined) best = state;
    }
  } catch (...) {
    ckpt.save_failed(state);
    throw;
  }

  const auto& test = ws.test();
  if (test.empty()) throw ValidationError("test partition is empty");
  result.test_a = metrics::evaluate(view_predictions(best.view_a, test, cfg), cfg.max_dets);
  result.test_b = metrics::evaluate(view_predictions(best.view_b, test, cfg), cfg.max_dets);
  result.test_combined = metrics::evaluate(combined_predictions(best.view_a, best.view_b, test, cfg), cfg.max_dets);
  result.best_round = best.round;
  result.best_state = std::move(best);
  result.final_state = std::move(state);
  return result;
}

double supervised_validation_map(const Workspace& ws, const PipelineParams& params, const CoTrainConfig& cfg) {
  return initial_supervised_phase(ws, params, cfg).history.front().val_map_combined;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

View view_from_string(const std::string& s) {
  if (s == "A") return View::A;
  if (s == "B") return View::B;
  throw ValidationError("unknown view '" + s + "'");
}

nlohmann::json view_config_json(const ViewConfig& v) {
  return {{"profile", std::string(detect::to_string(v.profile))},
          {"detector", detect::to_json(v.detector)},
          {"ensemble", ensemble::to_json(v.ensemble)}};
}

ViewConfig view_config_from_json(const nlohmann::json& j, ViewConfig d) {
  if (j.contains("profile")) d.profile = detect::profile_from_string(j["profile"].get<std::string>());
  if (j.contains("detector")) d.detector = detect::detector_params_from_json(j["detector"], d.detector);
  if (j.contains("ensemble")) d.ensemble = ensemble::ensemble_params_from_json(j["ensemble"], d.ensemble);
  return d;
}

nlohmann::json view_state_json(const ViewState& v, bool include_ensemble) {
  nlohmann::json j = {{"view", std::string(to_string(v.view))},
                      {"config", view_config_json(v.config)},
                      {"base_skill", detect::to_json(v.base_skill)},
                      {"skill", detect::to_json(v.skill)},
                      {"trained", v.trained}};
  if (include_ensemble) j["ensemble"] = ensemble::to_json(v.ensemble);
  return j;
}

ViewState view_state_from_json(const nlohmann::json& j) {
  ViewState v;
  v.view = view_from_string(j.at("view").get<std::string>());
  v.config = view_config_from_json(j.at("config"), {});
  v.base_skill = detect::skill_from_json(j.at("base_skill"));
  v.skill = detect::skill_from_json(j.at("skill"));
  v.trained = j.value("trained", false);
  if (j.contains("ensemble")) v.ensemble = ensemble::ensemble_from_json(j["ensemble"]);
  return v;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

nlohmann::json to_json(const PseudoLabel& p) {
  return {{"image_id", p.image_id},
          {"box", {p.box.x1(), p.box.y1(), p.box.x2(), p.box.y2()}},
          {"label", p.label},
          {"confidence", p.confidence},
          {"source_view", std::string(to_string(p.source_view))},
          {"round", p.round}};
}

PseudoLabel pseudo_label_from_json(const nlohmann::json& j) {
  const auto& b = j.at("box");
  return {j.at("image_id").get<std::string>(),
          geom::Box(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()),
          j.value("label", 0),
          j.at("confidence").get<double>(),
          view_from_string(j.at("source_view").get<std::string>()),
          j.at("round").get<int>()};
}

nlohmann::json to_json(const RoundRecord& r) {
  return {{"round", r.round},
          {"val_map_a", r.val_map_a},
          {"val_map_b", r.val_map_b},
          {"val_map_combined", r.val_map_combined},
          {"pseudo_from_a", r.pseudo_from_a},
          {"pseudo_from_b", r.pseudo_from_b},
          {"precision_from_a", optional_json(r.precision_from_a)},
          {"precision_from_b", optional_json(r.precision_from_b)}};
}

RoundRecord round_record_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<int>();
  r.val_map_a = j.at("val_map_a").get<double>();
  r.val_map_b = j.at("val_map_b").get<double>();
  r.val_map_combined = j.at("val_map_combined").get<double>();
  r.pseudo_from_a = j.value("pseudo_from_a", std::size_t{0});
  r.pseudo_from_b = j.value("pseudo_from_b", std::size_t{0});
  r.precision_from_a = optional_from(j, "precision_from_a");
  r.precision_from_b = optional_from(j, "precision_from_b");
  return r;
}

nlohmann::json to_json(const CoTrainState& s, bool include_ensembles) {
  nlohmann::json for_a = nlohmann::json::array(), for_b = nlohmann::json::array(), history = nlohmann::json::array();
  for (const auto& p : s.accepted_for_a) for_a.push_back(to_json(p));
  for (const auto& p : s.accepted_for_b) for_b.push_back(to_json(p));
  for (const auto& r : s.history) history.push_back(to_json(r));
  return {{"format", "densecotrain.state"},
          {"version", 1},
          {"round", s.round},
          {"view_a", view_state_json(s.view_a, include_ensembles)},
          {"view_b", view_state_json(s.view_b, include_ensembles)},
          {"accepted_for_a", for_a},
          {"accepted_for_b", for_b},
          {"history", history}};
}

CoTrainState state_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "densecotrain.state") throw ValidationError("not a co-training state document");
  CoTrainState s;
  s.round = j.at("round").get<int>();
  s.view_a = view_state_from_json(j.at("view_a"));
  s.view_b = view_state_from_json(j.at("view_b"));
  for (const auto& p : j.at("accepted_for_a")) s.accepted_for_a.push_back(pseudo_label_from_json(p));
  for (const auto& p : j.at("accepted_for_b")) s.accepted_for_b.push_back(pseudo_label_from_json(p));
  for (const auto& r : j.at("history")) s.history.push_back(round_record_from_json(r));
  return s;
}

nlohmann::json to_json(const CoTrainConfig& c) {
  return {{"tau_conf", c.tau_conf},
          {"max_rounds", c.max_rounds},
          {"epsilon", c.epsilon},
          {"patience", c.patience},
          {"pseudo_nms_iou", c.pseudo_nms_iou},
          {"combine_nms_iou", c.combine_nms_iou},
          {"exchange", c.exchange == ExchangeMode::Cross ? "cross" : "self"},
          {"unlabeled_fraction", c.unlabeled_fraction},
          {"max_samples_per_class", c.max_samples_per_class},
          {"max_dets", c.max_dets},
          {"seed", c.seed},
          {"threads", c.threads},
          {"simulation", detect::to_json(c.simulation)}};
}

CoTrainConfig cotrain_config_from_json(const nlohmann::json& j, CoTrainConfig c) {
  c.tau_conf = j.value("tau_conf", c.tau_conf);
  c.max_rounds = j.value("max_rounds", c.max_rounds);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.patience = j.value("patience", c.patience);
  c.pseudo_nms_iou = j.value("pseudo_nms_iou", c.pseudo_nms_iou);
  c.combine_nms_iou = j.value("combine_nms_iou", c.combine_nms_iou);
  if (j.contains("exchange")) {
    const auto e = j["exchange"].get<std::string>();
    if (e == "cross") {
      c.exchange = ExchangeMode::Cross;
    } else if (e == "self") {
      c.exchange = ExchangeMode::Self;
    } else {
      throw ValidationError("exchange must be 'cross' or 'self'");
    }
  }
  c.unlabeled_fraction = j.value("unlabeled_fraction", c.unlabeled_fraction);
  c.max_samples_per_class = j.value("max_samples_per_class", c.max_samples_per_class);
  c.max_dets = j.value("max_dets", c.max_dets);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("simulation")) c.simulation = detect::simulation_from_json(j["simulation"]);
  validate(c);
  return c;
}

nlohmann::json to_json(const PipelineParams& p) {
  return {{"view_a", view_config_json(p.view_a)}, {"view_b", view_config_json(p.view_b)}};
}

PipelineParams pipeline_params_from_json(const nlohmann::json& j, PipelineParams p) {
  if (j.contains("view_a")) p.view_a = view_config_from_json(j["view_a"], p.view_a);
  if (j.contains("view_b")) p.view_b = view_config_from_json(j["view_b"], p.view_b);
  return p;
}

}  // namespace densecotrain::cotrain
