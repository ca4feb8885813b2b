#include "densecotrain/run.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "densecotrain/errors.hpp"

namespace densecotrain::run {

namespace {

const std::set<std::string> kTopLevelKeys = {"seed",     "dataset", "counts",  "fractions", "pipeline",
                                             "hyper",    "cotrain", "tuner",   "gene_specs"};

DatasetSource dataset_from_json(const nlohmann::json& j) {
  DatasetSource d;
  const auto source = j.value("source", std::string("synthetic"));
  if (source == "csv") {
    d.kind = DatasetSource::Kind::Csv;
    if (!j.contains("csv") || !j["csv"].is_string()) throw ValidationError("dataset.csv must name the annotation file");
    d.csv = j["csv"].get<std::string>();
  } else if (source != "synthetic") {
    throw ValidationError(fmt::format("dataset.source must be 'synthetic' or 'csv', got '{}'", source));
  }
  if (j.contains("images")) d.images = j["images"].get<std::size_t>();
  if (j.contains("scene")) d.synthetic.scene = data::scene_from_json(j["scene"], d.synthetic.scene);
  d.synthetic.overlap_spread = j.value("overlap_spread", d.synthetic.overlap_spread);
  d.synthetic.rows_spread = j.value("rows_spread", d.synthetic.rows_spread);
  d.synthetic.cols_spread = j.value("cols_spread", d.synthetic.cols_spread);
  return d;
}

nlohmann::json dataset_json(const DatasetSource& d) {
  nlohmann::json j;
  if (d.kind == DatasetSource::Kind::Csv) {
    j = {{"source", "csv"}, {"csv", d.csv.string()}};
  } else {
    j = {{"source", "synthetic"},
         {"scene", data::to_json(d.synthetic.scene)},
         {"overlap_spread", d.synthetic.overlap_spread},
         {"rows_spread", d.synthetic.rows_spread},
         {"cols_spread", d.synthetic.cols_spread}};
    if (d.images) j["images"] = *d.images;
  }
  return j;
}

std::string csv_number(double v) { return fmt::format("{}", v); }

}  // namespace

void apply_hyper(RunConfig& c, const nlohmann::json& hyper) {
  const auto v = tuner::vector_from_json(hyper, c.gene_specs);
  c.pipeline = tuner::decode(v, c.gene_specs, c.pipeline);
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
  try {
    const nlohmann::json& j = doc.contains("artifact") && doc.contains("config") ? doc["config"] : doc;
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!kTopLevelKeys.contains(it.key())) throw ValidationError(fmt::format("unknown config key '{}'", it.key()));
    }
    RunConfig c;
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("dataset")) c.dataset = dataset_from_json(j["dataset"]);
    if (j.contains("counts")) {
      c.n_labeled = j["counts"].value("n_labeled", c.n_labeled);
      c.n_unlabeled = j["counts"].value("n_unlabeled", c.n_unlabeled);
    }
    if (j.contains("fractions")) c.fractions = j["fractions"].get<std::array<double, 3>>();
    if (j.contains("gene_specs")) c.gene_specs = tuner::specs_from_json(j["gene_specs"]);
    if (j.contains("pipeline")) c.pipeline = cotrain::pipeline_params_from_json(j["pipeline"]);
    if (j.contains("hyper")) apply_hyper(c, j["hyper"]);
    if (j.contains("cotrain")) c.cotrain = cotrain::cotrain_config_from_json(j["cotrain"]);
    if (j.contains("tuner")) c.tuner = tuner::tuner_config_from_json(j["tuner"], c.gene_specs);
    data::split_sizes(c.n_labeled, c.fractions);  // validates the fractions
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("config: {}", e.what()));
  }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json_file(path)); }

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {{"seed", c.seed ? nlohmann::json(*c.seed) : nlohmann::json()},
                      {"dataset", dataset_json(c.dataset)},
                      {"counts", {{"n_labeled", c.n_labeled}, {"n_unlabeled", c.n_unlabeled}}},
                      {"fractions", c.fractions},
                      {"pipeline", cotrain::to_json(c.pipeline)},
                      {"cotrain", cotrain::to_json(c.cotrain)},
                      {"tuner", tuner::to_json(c.tuner, c.gene_specs)},
                      {"gene_specs", nlohmann::json::object()}};
  nlohmann::json specs = nlohmann::json::object();
  for (const auto& g : c.gene_specs) {
    if (g.kind == tuner::GeneKind::Categorical) {
      specs[g.name] = {{"menu", g.menu}};
    } else {
      specs[g.name] = {{"lo", g.lo}, {"hi", g.hi}};
    }
  }
  j["gene_specs"] = std::move(specs);
  return j;
}

std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw ValidationError("missing required --seed (or \"seed\" in the config)");
  return *c.seed;
}

void propagate(RunConfig& c) {
  const auto seed = require_seed(c);
  c.cotrain.seed = seed;
  c.tuner.seed = seed;
  c.tuner.threads = c.cotrain.threads;
  cotrain::validate(c.cotrain);
  tuner::validate(c.tuner);
}

PreparedData prepare_data(const RunConfig& c) {
  const auto seed = require_seed(c);
  PreparedData p;
  if (c.dataset.kind == DatasetSource::Kind::Csv) {
    auto loaded = data::load_annotations(c.dataset.csv);
    p.records = std::move(loaded.records);
    p.warnings = std::move(loaded.warnings);
  } else {
    const std::size_t n = c.dataset.images.value_or(c.n_labeled + c.n_unlabeled);
    p.records = data::generate_synthetic_dataset(n, c.dataset.synthetic, seed);
  }
  p.split = data::select_and_split(p.records, c.n_labeled, c.n_unlabeled, c.fractions, seed);
  const std::set<std::string> pool(p.split.unlabeled_pool.begin(), p.split.unlabeled_pool.end());
  for (auto& r : p.records) r.labeled = !pool.contains(r.image_id);
  return p;
}

std::vector<metrics::EvalImage> pair_predictions(std::span<const data::ImageRecord> truth,
                                                 const std::map<std::string, std::vector<detect::Detection>>& preds) {
  std::set<std::string> known;
  for (const auto& r : truth) known.insert(r.image_id);
  for (const auto& [id, dets] : preds) {
    if (!known.contains(id)) throw ValidationError(fmt::format("predictions name image '{}' absent from the ground truth", id));
  }
  std::vector<metrics::EvalImage> out;
  out.reserve(truth.size());
  for (const auto& r : truth) {
    metrics::EvalImage im;
    im.truths = r.gts;
    if (auto it = preds.find(r.image_id); it != preds.end()) {
      for (const auto& d : it->second) im.detections.push_back(d.scored);
    }
    out.push_back(std::move(im));
  }
  return out;
}

void write_predictions_jsonl(std::ostream& out, std::span<const std::string> image_ids,
                             std::span<const metrics::EvalImage> images) {
  if (image_ids.size() != images.size()) throw ValidationError("one image id per prediction set expected");
  for (std::size_t i = 0; i < images.size(); ++i) {
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& d : images[i].detections) {
      dets.push_back({{"x1", d.box.x1()},
                      {"y1", d.box.y1()},
                      {"x2", d.box.x2()},
                      {"y2", d.box.y2()},
                      {"score", d.score},
                      {"label", d.label}});
    }
    out << nlohmann::json{{"image_id", image_ids[i]}, {"detections", dets}}.dump() << '\n';
  }
}

void write_history_csv(std::ostream& out, std::span<const cotrain::RoundRecord> history) {
  out << "round,val_map_a,val_map_b,val_map_combined,pseudo_from_a,pseudo_from_b,precision_from_a,precision_from_b\n";
  for (const auto& r : history) {
    out << fmt::format("{},{},{},{},{},{},{},{}\n", r.round, csv_number(r.val_map_a), csv_number(r.val_map_b),
                       csv_number(r.val_map_combined), r.pseudo_from_a, r.pseudo_from_b,
                       r.precision_from_a ? csv_number(*r.precision_from_a) : "",
                       r.precision_from_b ? csv_number(*r.precision_from_b) : "");
  }
}

void write_trace_csv(std::ostream& out, std::span<const tuner::TraceEntry> trace,
                     std::span<const tuner::GeneSpec> specs) {
  out << "evaluation,score,best_so_far";
  for (const auto& g : specs) out << ',' << g.name;
  out << '\n';
  for (const auto& t : trace) {
    out << fmt::format("{},{},{}", t.evaluation, csv_number(t.score), csv_number(t.best_so_far));
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& g = specs[i];
      if (g.kind == tuner::GeneKind::Categorical) {
        out << ',' << g.menu[static_cast<std::size_t>(t.vector[i])];
      } else if (g.kind == tuner::GeneKind::Integer) {
        out << ',' << std::llround(t.vector[i]);
      } else {
        out << ',' << csv_number(t.vector[i]);
      }
    }
    out << '\n';
  }
}

std::vector<TraceRow> read_trace_csv(std::istream& in, const std::string& source_name) {
  std::vector<TraceRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream fields(line);
    std::string a, b, c;
    std::getline(fields, a, ',');
    std::getline(fields, b, ',');
    std::getline(fields, c, ',');
    try {
      rows.push_back({std::stoi(a), std::stod(b), std::stod(c)});
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("{}:{}: malformed trace row", source_name, line_no));
    }
  }
  return rows;
}

nlohmann::json make_run_report(const RunConfig& c, const cotrain::CoTrainResult& r, std::uint64_t labeled_fingerprint,
                               const Timings& t) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : r.final_state.history) history.push_back(cotrain::to_json(h));
  return {{"artifact", "densecotrain"},
          {"version", std::string(kArtifactVersion)},
          {"kind", "run_report"},
          {"config", to_json(c)},
          {"baseline", c.cotrain.exchange == cotrain::ExchangeMode::Self ? "self-train" : "none"},
          {"rounds_completed", r.final_state.round},
          {"best_round", r.best_round},
          {"test",
           {{"view_a", metrics::to_json(r.test_a)},
            {"view_b", metrics::to_json(r.test_b)},
            {"combined", metrics::to_json(r.test_combined)}}},
          {"history", history},
          {"accepted_pseudo_labels",
           {{"for_a", r.best_state.accepted_for_a.size()}, {"for_b", r.best_state.accepted_for_b.size()}}},
          {"skills",
           {{"view_a", detect::to_json(r.best_state.view_a.skill)},
            {"view_b", detect::to_json(r.best_state.view_b.skill)}}},
          {"labeled_fingerprint", fmt::format("{:016x}", labeled_fingerprint)},
          {"timings", {{"data_s", t.data_s}, {"run_s", t.run_s}}}};
}

std::string metrics_table(const nlohmann::json& report) {
  const auto& test = report.at("test");
  std::string out = fmt::format("{:<10} {:>8} {:>8} {:>8}\n", "", "mAP", "AP.75", "AR@300");
  for (const auto& [key, label] : {std::pair{"view_a", "view A"}, {"view_b", "view B"}, {"combined", "combined"}}) {
    const auto& m = test.at(key);
    out += fmt::format("{:<10} {:>8.4f} {:>8.4f} {:>8.4f}\n", label, m.at("map").get<double>(),
                       m.at("ap75").get<double>(), m.at("ar300").get<double>());
  }
  return out;
}

}  // namespace densecotrain::run
