#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "densecotrain/errors.hpp"
#include "densecotrain/run.hpp"
#include "densecotrain/svg.hpp"
#include "support/testing.hpp"
#include "support/xml.hpp"

using namespace densecotrain;
using namespace densecotrain::run;
using nlohmann::json;

namespace {

RunConfig small_config(std::uint64_t seed) {
  return run_config_from_json(json{{"seed", seed},
                                   {"counts", {{"n_labeled", 30}, {"n_unlabeled", 30}}},
                                   {"dataset", {{"scene", {{"grid_rows", 4}, {"grid_cols", 5}}}}},
                                   {"cotrain", {{"max_rounds", 1}}}});
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("config defaults mirror the split and counts") {
  auto c = run_config_from_json(json{{"seed", 1}});
  CHECK(c.n_labeled == 2000);
  CHECK(c.n_unlabeled == 8000);
  CHECK(c.fractions == std::array<double, 3>{0.7, 0.1, 0.2});
  CHECK(c.cotrain.tau_conf == 0.8);
  CHECK(c.cotrain.max_rounds == 5);
  CHECK(c.cotrain.epsilon == 0.005);
  CHECK(c.cotrain.patience == 2);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(run_config_from_json(json{{"seed", 1}, {"rounds", 3}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json{{"seed", 1}, {"fractions", {0.7, 0.2, 0.2}}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json{{"seed", "one"}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json::array()), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(json{{"dataset", {{"source", "s3"}}}}), ValidationError);

  auto no_seed = run_config_from_json(json::object());
  try {
    require_seed(no_seed);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("--seed") != std::string::npos);
  }
}

TEST_CASE("config round trip and report echo") {
  auto c = small_config(4);
  c.cotrain.tau_conf = 0.123456789012345;
  auto back = run_config_from_json(json::parse(to_json(c).dump()));
  CHECK(to_json(back) == to_json(c));
  auto report = json{{"artifact", "densecotrain"}, {"config", to_json(c)}};
  CHECK(to_json(run_config_from_json(report)) == to_json(c));
}

TEST_CASE("hyper vectors decode into the pipeline") {
  auto v = tuner::default_vector(tuner::default_specs());
  v[tuner::kEpYolo] = 7;
  auto c = run_config_from_json(json{{"seed", 1}, {"hyper", tuner::to_json(v, tuner::default_specs())}});
  CHECK(c.pipeline.view_b.detector.epochs == 7);
}

TEST_CASE("propagate shares seed and threads") {
  auto c = small_config(42);
  c.cotrain.threads = 3;
  propagate(c);
  CHECK(c.cotrain.seed == 42);
  CHECK(c.tuner.seed == 42);
  CHECK(c.tuner.threads == 3);
}

TEST_CASE("prepared data marks the pool unlabeled") {
  auto c = small_config(5);
  auto p = prepare_data(c);
  CHECK(p.records.size() == 60);
  CHECK(p.split.unlabeled_pool.size() == 30);
  std::size_t unlabeled = 0;
  for (const auto& r : p.records) unlabeled += r.labeled ? 0 : 1;
  CHECK(unlabeled == 30);
  auto again = prepare_data(c);
  CHECK(again.split.train == p.split.train);
}

TEST_CASE("file helpers map failures to error kinds") {
  testing::TempDir dir("files");
  CHECK_THROWS_AS(read_json_file(dir / "absent.json"), IoError);
  testing::spit(dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(read_json_file(dir / "bad.json"), ValidationError);
  CHECK_THROWS_AS(write_text_file(dir / "no/such/dir/x.txt", "x"), IoError);
  write_text_file(dir / "ok.txt", "hello");
  CHECK(testing::slurp(dir / "ok.txt") == "hello");
}

TEST_CASE("prediction pairing") {
  data::ImageRecord a;
  a.image_id = "a";
  a.gts = {{geom::Box(0, 0, 1, 1), 0}};
  data::ImageRecord b = a;
  b.image_id = "b";
  std::vector<data::ImageRecord> truth{a, b};
  std::map<std::string, std::vector<detect::Detection>> preds;
  preds["a"] = {detect::Detection{{geom::Box(0, 0, 1, 1), 1.0, 0}, {}}};
  auto images = pair_predictions(truth, preds);
  REQUIRE(images.size() == 2);
  CHECK(images[0].detections.size() == 1);
  CHECK(images[1].detections.empty());
  preds["z"] = {};
  CHECK_THROWS_AS(pair_predictions(truth, preds), ValidationError);

  std::ostringstream out;
  std::vector<std::string> ids{"a", "b"};
  write_predictions_jsonl(out, ids, images);
  std::istringstream in(out.str());
  auto replay = detect::RecordedDetector::from_jsonl(in);
  CHECK(replay.all().at("a").size() == 1);
  CHECK(replay.all().at("b").empty());
}

TEST_CASE("history and trace CSV") {
  std::vector<cotrain::RoundRecord> history{{0, 0.5, 0.25, 0.75, 0, 0, std::nullopt, std::nullopt},
                                            {1, 0.5, 0.3, 0.8, 12, 9, 0.95, 1.0}};
  std::ostringstream h;
  write_history_csv(h, history);
  auto hl = lines(h.str());
  REQUIRE(hl.size() == 3);
  CHECK(hl[0] == "round,val_map_a,val_map_b,val_map_combined,pseudo_from_a,pseudo_from_b,precision_from_a,precision_from_b");
  CHECK(hl[1].rfind("0,0.5,0.25,0.75,0,0,,", 0) == 0);

  auto specs = tuner::default_specs();
  std::vector<tuner::TraceEntry> trace{{1, 0.25, 0.25, tuner::default_vector(specs)},
                                       {2, 0.125, 0.25, tuner::random_vector(specs, 1)}};
  std::ostringstream t;
  write_trace_csv(t, trace, specs);
  auto tl = lines(t.str());
  REQUIRE(tl.size() == 3);
  CHECK(tl[0].rfind("evaluation,score,best_so_far,lr_xgb,", 0) == 0);
  CHECK(tl[0].find("as_rcnn") != std::string::npos);
  std::istringstream in(t.str());
  auto rows = read_trace_csv(in);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].evaluation == 2);
  CHECK(rows[1].score == 0.125);
  CHECK(rows[1].best_so_far == 0.25);

  std::istringstream broken("evaluation,score,best_so_far\n1,abc,0.5\n");
  CHECK_THROWS_AS(read_trace_csv(broken), ValidationError);
}

TEST_CASE("run report and table") {
  auto c = small_config(6);
  propagate(c);
  auto p = prepare_data(c);
  cotrain::Workspace ws(p.records, p.split);
  auto result = cotrain::run_cotraining(ws, c.pipeline, c.cotrain);
  auto report = make_run_report(c, result, ws.labeled_fingerprint(), {0.5, 1.5});
  CHECK(report.at("artifact") == "densecotrain");
  CHECK(report.at("version") == std::string(kArtifactVersion));
  CHECK(report.at("baseline") == "none");
  CHECK(report.at("history").size() == result.final_state.history.size());
  CHECK(report.at("test").at("combined").at("map").get<double>() == result.test_combined.map_coco);
  CHECK(report.at("labeled_fingerprint").get<std::string>().size() == 16);

  auto table = lines(metrics_table(report));
  REQUIRE(table.size() == 4);
  CHECK(table[0].find("mAP") != std::string::npos);
  CHECK(table[0].find("AP.75") != std::string::npos);
  CHECK(table[0].find("AR@300") != std::string::npos);
  CHECK(table[1].rfind("view A", 0) == 0);
  CHECK(table[2].rfind("view B", 0) == 0);
  CHECK(table[3].rfind("combined", 0) == 0);

  // The echoed config reproduces the metrics.
  auto echo = run_config_from_json(json::parse(report.dump()));
  propagate(echo);
  auto p2 = prepare_data(echo);
  cotrain::Workspace ws2(p2.records, p2.split);
  auto again = cotrain::run_cotraining(ws2, echo.pipeline, echo.cotrain);
  CHECK(metrics::to_json(again.test_combined) == metrics::to_json(result.test_combined));
}

TEST_CASE("svg output is well-formed XML") {
  CHECK(svg::escape("a<b & \"c\">") == "a&lt;b &amp; &quot;c&quot;&gt;");

  svg::LinePlot plot;
  plot.title = "validation mAP <per round> & more";
  plot.x_label = "round";
  plot.y_label = "mAP";
  plot.series = {{"view A", {{0, 0.5}, {1, 0.55}, {2, 0.56}}}, {"view B & co", {{0, 0.45}, {1, 0.5}}}};
  auto text = svg::render(plot);
  CHECK(testing::svg_xml_error(text).empty());
  CHECK(text.find("<polyline") != std::string::npos);

  svg::LinePlot empty;
  empty.title = "nothing";
  CHECK(testing::svg_xml_error(svg::render(empty)).empty());

  svg::LinePlot flat;
  flat.series = {{"one point", {{3, 0.7}}}};
  flat.y_range = std::pair{0.0, 1.0};
  CHECK(testing::svg_xml_error(svg::render(flat)).empty());

  CHECK_FALSE(testing::svg_xml_error("<svg><g></svg>").empty());
}
