#include <doctest.h>

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "densecotrain/cotrain.hpp"
#include "densecotrain/errors.hpp"
#include "support/testing.hpp"

using namespace densecotrain;
using namespace densecotrain::cotrain;

namespace {

const testing::SmallWorld& world() {
  static const auto w = testing::small_world(3, 60, 90, 0.4);
  return w;
}

CoTrainConfig config(int rounds = 2) {
  CoTrainConfig cfg;
  cfg.seed = 3;
  cfg.max_rounds = rounds;
  return cfg;
}

const CoTrainState& initial_state() {
  static const Workspace ws(world().records, world().split);
  static const auto s = initial_supervised_phase(ws, {}, config());
  return s;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

void check_cross(const CoTrainState& s) {
  for (const auto& p : s.accepted_for_a) CHECK(p.source_view == View::B);
  for (const auto& p : s.accepted_for_b) CHECK(p.source_view == View::A);
}

void check_labels_sane(const std::vector<PseudoLabel>& labels, const data::DatasetSplit& split, double tau) {
  auto pool = as_set(split.unlabeled_pool);
  for (const auto& p : labels) {
    CHECK(pool.count(p.image_id) == 1);
    CHECK(p.confidence >= tau);
    CHECK(p.confidence <= 1.0);
  }
}

}  // namespace

TEST_CASE("workspace guards") {
  const auto& w = world();
  auto bad = w.split;
  bad.val.push_back("no-such-image");
  CHECK_THROWS_AS(Workspace(w.records, bad), ValidationError);

  auto empty = w.split;
  empty.train.clear();
  CHECK_THROWS_AS(Workspace(w.records, empty), ValidationError);

  Workspace ws(w.records, w.split);
  CHECK(ws.test_access_count() == 0);
  CHECK(ws.test().size() == w.split.test.size());
  CHECK(ws.test_access_count() == 1);
  CHECK(ws.labeled_fingerprint() == Workspace(w.records, w.split).labeled_fingerprint());
  CHECK_THROWS_AS(ws.record("missing"), ValidationError);

  // Fingerprint covers labeled content.
  auto records = w.records;
  for (auto& r : records)
    if (r.image_id == w.split.val.front()) r.gts.pop_back();
  CHECK(Workspace(records, w.split).labeled_fingerprint() != ws.labeled_fingerprint());
}

TEST_CASE("initial supervised phase") {
  const auto& s = initial_state();
  CHECK(s.round == 0);
  CHECK(s.accepted_for_a.empty());
  CHECK(s.accepted_for_b.empty());
  REQUIRE(s.history.size() == 1);
  CHECK(s.history[0].round == 0);
  CHECK(s.history[0].val_map_a > 0.1);
  CHECK(s.history[0].val_map_b > 0.1);
  CHECK(s.view_a.trained);
  CHECK(s.view_b.trained);
  CHECK(s.view_a.config.profile == detect::Profile::Localizer);
  CHECK(s.view_b.config.profile == detect::Profile::Contextual);
}

TEST_CASE("pseudo-label generation") {
  const auto& w = world();
  Workspace ws(w.records, w.split);
  const auto& s = initial_state();
  auto cfg = config();

  auto labels = generate_pseudo_labels(s.view_a, ws.unlabeled(), 0.8, 0.5, 1, cfg);
  CHECK_FALSE(labels.empty());
  check_labels_sane(labels, w.split, 0.8);
  for (std::size_t i = 1; i < labels.size(); ++i) CHECK(labels[i - 1].image_id <= labels[i].image_id);
  for (const auto& p : labels) {
    CHECK(p.source_view == View::A);
    CHECK(p.round == 1);
  }
  // Per-image output is already NMS-clean.
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size() && labels[j].image_id == labels[i].image_id; ++j)
      CHECK(geom::iou(labels[i].box, labels[j].box) < 0.5);

  CHECK(generate_pseudo_labels(s.view_b, ws.unlabeled(), 1.0, 0.5, 1, cfg).empty());

  ViewState untrained;
  CHECK_THROWS_AS(generate_pseudo_labels(untrained, ws.unlabeled(), 0.8, 0.5, 1, cfg), ValidationError);
  CHECK_THROWS_AS(generate_pseudo_labels(s.view_a, ws.unlabeled(), 0.0, 0.5, 1, cfg), ValidationError);
}

TEST_CASE("an ensemble voting background vetoes every detection") {
  const auto& w = world();
  Workspace ws(w.records, w.split);
  auto view = initial_state().view_a;
  // Objects live far from anything the detector emits.
  ensemble::Dataset d(16);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(16);
    for (auto& v : x) v = normal(rng, 0.0, 1.0);
    if (i % 2) x[0] += 1000.0;
    d.add(x, i % 2);
  }
  ensemble::EnsembleParams p;
  p.xgb.n_trees = 5;
  p.rf.n_trees = 5;
  p.svm.kernel = ensemble::Kernel::Linear;
  view.ensemble = ensemble::train_ensemble(d, p, 1);
  CHECK(generate_pseudo_labels(view, ws.unlabeled(), 0.01, 0.5, 1, config()).empty());
}

TEST_CASE("pseudo-label precision at tau 0.8") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto w = testing::small_world(100 + seed, 30, 30, 0.4);
    Workspace ws(w.records, w.split);
    CoTrainConfig cfg;
    cfg.seed = seed;
    auto s = initial_supervised_phase(ws, {}, cfg);
    for (const auto* v : {&s.view_a, &s.view_b}) {
      auto labels = generate_pseudo_labels(*v, ws.unlabeled(), 0.8, 0.5, 1, cfg);
      auto precision = audit_precision(labels, ws);
      REQUIRE(precision.has_value());
      CHECK(*precision >= 0.9);
    }
  }
}

TEST_CASE("exchange round") {
  const auto& w = world();
  Workspace ws(w.records, w.split);
  auto cfg = config();
  std::uint64_t before = ws.labeled_fingerprint();

  auto s1 = exchange_round(initial_state(), ws, cfg);
  CHECK(s1.round == 1);
  REQUIRE(s1.history.size() == 2);
  CHECK(s1.history[1].round == 1);
  CHECK(s1.history[1].pseudo_from_a > 0);
  CHECK(s1.history[1].pseudo_from_b > 0);
  CHECK(s1.accepted_for_b.size() == s1.history[1].pseudo_from_a);
  CHECK(s1.accepted_for_a.size() == s1.history[1].pseudo_from_b);
  check_cross(s1);
  check_labels_sane(s1.accepted_for_a, w.split, cfg.tau_conf);
  check_labels_sane(s1.accepted_for_b, w.split, cfg.tau_conf);

  auto s2 = exchange_round(s1, ws, cfg);
  CHECK(s2.round == 2);
  CHECK(s2.history.size() == 3);
  check_cross(s2);
  // Replace per image: an image's labels from a source all come from one round.
  for (const auto* acc : {&s2.accepted_for_a, &s2.accepted_for_b}) {
    std::map<std::string, std::set<int>> rounds;
    for (const auto& p : *acc) rounds[p.image_id].insert(p.round);
    for (const auto& [id, r] : rounds) CHECK(r.size() == 1);
  }
  CHECK(ws.labeled_fingerprint() == before);
  CHECK(ws.test_access_count() == 0);
}

TEST_CASE("a round where nothing passes the filter changes nothing but the counters") {
  const auto& w = world();
  Workspace ws(w.records, w.split);
  auto cfg = config();
  cfg.tau_conf = 1.0;
  const auto& s0 = initial_state();
  auto s1 = exchange_round(s0, ws, cfg);
  CHECK(s1.round == 1);
  REQUIRE(s1.history.size() == 2);
  CHECK(s1.history[1].pseudo_from_a == 0);
  CHECK(s1.history[1].pseudo_from_b == 0);
  CHECK_FALSE(s1.history[1].precision_from_a.has_value());
  CHECK(s1.view_a.skill == s0.view_a.skill);
  CHECK(s1.view_b.skill == s0.view_b.skill);
  CHECK(s1.history[1].val_map_a == s0.history[0].val_map_a);
  CHECK(s1.history[1].val_map_combined == s0.history[0].val_map_combined);
}

TEST_CASE("self mode keeps each view on its own labels") {
  const auto& w = world();
  Workspace ws(w.records, w.split);
  auto cfg = config();
  cfg.exchange = ExchangeMode::Self;
  auto s1 = exchange_round(initial_state(), ws, cfg);
  CHECK_FALSE(s1.accepted_for_a.empty());
  for (const auto& p : s1.accepted_for_a) CHECK(p.source_view == View::A);
  for (const auto& p : s1.accepted_for_b) CHECK(p.source_view == View::B);
}

TEST_CASE("stopping rule") {
  std::vector<double> trace{0.40, 0.41, 0.412, 0.413};
  CHECK_FALSE(plateaued(std::span(trace).first(2), 0.005, 2));
  CHECK_FALSE(plateaued(std::span(trace).first(3), 0.005, 2));
  CHECK(plateaued(trace, 0.005, 2));
  CHECK_FALSE(plateaued(trace, 0.005, 3));
  CHECK(plateaued(std::vector<double>{0.5, 0.4, 0.3}, 0.005, 2));

  std::vector<RoundRecord> history;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    RoundRecord r;
    r.round = static_cast<int>(i);
    r.val_map_a = trace[i];
    r.val_map_b = 0.3 + 0.001 * static_cast<double>(i);
    history.push_back(r);
    CHECK(should_stop(history, 0.005, 2) == (i == 3));
  }
  history.back().val_map_b = 0.4;
  CHECK_FALSE(should_stop(history, 0.005, 2));
}

TEST_CASE("zero rounds is the supervised phase plus one test evaluation") {
  const auto& w = world();
  Workspace ws(w.records, w.split);
  auto r = run_cotraining(ws, {}, config(0));
  CHECK(ws.test_access_count() == 1);
  CHECK(r.best_round == 0);
  CHECK(r.final_state.history.size() == 1);
  CHECK(to_json(r.final_state, false) == to_json(initial_state(), false));

  Workspace probe(w.records, w.split);
  auto expected = metrics::evaluate(combined_predictions(initial_state().view_a, initial_state().view_b, probe.test(), config(0)));
  CHECK(r.test_combined.map_coco == expected.map_coco);
  CHECK(r.test_combined.ar300 == expected.ar300);
}

TEST_CASE("full run: hygiene and reproducibility") {
  const auto& w = world();
  Workspace ws(w.records, w.split);
  std::uint64_t before = ws.labeled_fingerprint();
  std::vector<int> seen;
  RunHooks hooks;
  hooks.on_round = [&](const CoTrainState& s) {
    seen.push_back(s.round);
    check_cross(s);
  };
  auto cfg = config(2);
  cfg.threads = 2;
  auto a = run_cotraining(ws, {}, cfg, hooks);
  CHECK(ws.test_access_count() == 1);
  CHECK(ws.labeled_fingerprint() == before);
  CHECK(seen.size() == a.final_state.history.size());
  CHECK(a.final_state.history.size() == static_cast<std::size_t>(a.final_state.round) + 1);

  // Best round is the argmax of combined validation mAP.
  double best = -1.0;
  int best_round = 0;
  for (const auto& r : a.final_state.history)
    if (r.val_map_combined > best) {
      best = r.val_map_combined;
      best_round = r.round;
    }
  CHECK(a.best_round == best_round);
  CHECK(a.best_state.round == best_round);

  cfg.threads = 1;
  Workspace ws2(w.records, w.split);
  auto b = run_cotraining(ws2, {}, cfg);
  CHECK(to_json(a.final_state) == to_json(b.final_state));
  CHECK(metrics::to_json(a.test_combined, true) == metrics::to_json(b.test_combined, true));
  CHECK(metrics::to_json(a.test_a) == metrics::to_json(b.test_a));
}

TEST_CASE("view A holds up after one exchange on occluded scenes") {
  auto w = testing::small_world(11, 120, 360, 0.4);
  Workspace ws(w.records, w.split);
  CoTrainConfig cfg;
  cfg.seed = 11;
  auto s0 = initial_supervised_phase(ws, {}, cfg);
  auto s1 = exchange_round(s0, ws, cfg);
  CHECK(s1.history[1].val_map_a >= s0.history[0].val_map_a - 0.01);
}

TEST_CASE("checkpoints, resume and failure persistence") {
  const auto& w = world();
  testing::TempDir dir("ckpt");
  auto cfg = config(2);
  cfg.patience = 10;

  Workspace ws(w.records, w.split);
  RunHooks hooks;
  hooks.checkpoint_dir = dir.path;
  auto first = run_cotraining(ws, {}, cfg, hooks);
  CHECK(std::filesystem::exists(dir / "round_000.json"));
  CHECK(std::filesystem::exists(dir / "round_002.json"));
  CHECK(std::filesystem::exists(dir / "ensembles.json"));
  CHECK_FALSE(std::filesystem::exists(dir / "round_000.json.tmp"));

  // Resuming a finished run only re-evaluates.
  hooks.resume = true;
  Workspace ws2(w.records, w.split);
  auto again = run_cotraining(ws2, {}, cfg, hooks);
  CHECK(again.best_round == first.best_round);
  CHECK(metrics::to_json(again.test_combined) == metrics::to_json(first.test_combined));

  // Extending a checkpointed run matches an uninterrupted one.
  auto cfg3 = cfg;
  cfg3.max_rounds = 3;
  Workspace ws3(w.records, w.split);
  auto extended = run_cotraining(ws3, {}, cfg3, hooks);
  Workspace ws4(w.records, w.split);
  auto fresh = run_cotraining(ws4, {}, cfg3);
  CHECK(to_json(extended.final_state) == to_json(fresh.final_state));
  CHECK(metrics::to_json(extended.test_combined) == metrics::to_json(fresh.test_combined));

  testing::TempDir fail_dir("fail");
  RunHooks failing;
  failing.checkpoint_dir = fail_dir.path;
  failing.on_round = [](const CoTrainState& s) {
    if (s.round == 1) throw RuntimeFailure("injected");
  };
  Workspace ws5(w.records, w.split);
  CHECK_THROWS_AS(run_cotraining(ws5, {}, cfg, failing), RuntimeFailure);
  REQUIRE(std::filesystem::exists(fail_dir / "failed_state.json"));
  auto failed = state_from_json(nlohmann::json::parse(testing::slurp(fail_dir / "failed_state.json")));
  CHECK(failed.round == 1);
  CHECK(ws5.test_access_count() == 0);
}

TEST_CASE("serialization round trips") {
  PseudoLabel p{"img_7", geom::Box(1.25, 2, 3, 4.5), 0, 0.875, View::B, 3};
  auto back = pseudo_label_from_json(to_json(p));
  CHECK(back.image_id == p.image_id);
  CHECK(back.box == p.box);
  CHECK(back.confidence == p.confidence);
  CHECK(back.source_view == View::B);
  CHECK(back.round == 3);

  RoundRecord r{2, 0.5, 0.25, 0.125, 10, 0, 0.9, std::nullopt};
  auto rb = round_record_from_json(to_json(r));
  CHECK(rb.val_map_b == 0.25);
  CHECK(rb.precision_from_a == std::optional<double>(0.9));
  CHECK_FALSE(rb.precision_from_b.has_value());

  const auto& s = initial_state();
  auto sb = state_from_json(nlohmann::json::parse(to_json(s).dump()));
  CHECK(to_json(sb) == to_json(s));
  CHECK_THROWS_AS(state_from_json(nlohmann::json::object()), ValidationError);

  auto cfg = config();
  cfg.exchange = ExchangeMode::Self;
  cfg.tau_conf = 0.65;
  auto cb = cotrain_config_from_json(to_json(cfg));
  CHECK(cb.exchange == ExchangeMode::Self);
  CHECK(cb.tau_conf == 0.65);
  CHECK(to_json(cb) == to_json(cfg));

  PipelineParams pp;
  pp.view_b.detector.epochs = 12;
  CHECK(pipeline_params_from_json(to_json(pp)).view_b.detector.epochs == 12);
}

TEST_CASE("config validation") {
  auto cfg = config();
  cfg.tau_conf = 0.0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg = config();
  cfg.max_rounds = -1;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg = config();
  cfg.patience = 0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
}
