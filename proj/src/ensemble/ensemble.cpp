#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "densecotrain/ensemble.hpp"
#include "densecotrain/errors.hpp"

namespace densecotrain::ensemble {

namespace {

constexpr double kTieTolerance = 1e-12;

EnsemblePrediction vote(const std::vector<double>& sums, const std::array<MemberVote, 3>& members) {
  const double best = *std::max_element(sums.begin(), sums.end());
  std::vector<bool> tied(sums.size());
  std::size_t n_tied = 0;
  for (std::size_t c = 0; c < sums.size(); ++c) {
    tied[c] = best - sums[c] <= kTieTolerance;
    n_tied += tied[c] ? 1 : 0;
  }
  int label = -1;
  if (n_tied > 1) {
    for (const auto& m : members) {
      if (static_cast<std::size_t>(m.label) < sums.size() && tied[static_cast<std::size_t>(m.label)]) {
        label = m.label;
        break;
      }
    }
  }
  if (label < 0) label = static_cast<int>(std::find(tied.begin(), tied.end(), true) - tied.begin());
  return {label, sums[static_cast<std::size_t>(label)] / 3.0, members};
}

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError(fmt::format("ensemble member probability {} outside [0,1]", p));
  }
}

}  // namespace

EnsemblePrediction fuse(const std::array<MemberVote, 3>& members) {
  std::vector<double> sums(2, 0.0);
  for (const auto& m : members) {
    check_probability(m.probability);
    if (m.label != 0 && m.label != 1) throw ValidationError("binary fuse expects labels 0 or 1");
    sums[static_cast<std::size_t>(m.label)] += m.probability;
    sums[static_cast<std::size_t>(1 - m.label)] += 1.0 - m.probability;
  }
  return vote(sums, members);
}

EnsemblePrediction fuse_distributions(const std::array<std::vector<double>, 3>& members) {
  const std::size_t k = members[0].size();
  if (k == 0) throw ValidationError("fuse_distributions: empty distribution");
  std::vector<double> sums(k, 0.0);
  std::array<MemberVote, 3> votes{};
  for (std::size_t m = 0; m < 3; ++m) {
    if (members[m].size() != k) throw ValidationError("fuse_distributions: members disagree on class count");
    for (std::size_t c = 0; c < k; ++c) {
      check_probability(members[m][c]);
      sums[c] += members[m][c];
    }
    const auto arg = static_cast<std::size_t>(std::max_element(members[m].begin(), members[m].end()) - members[m].begin());
    votes[m] = {static_cast<int>(arg), members[m][arg]};
  }
  return vote(sums, votes);
}

std::array<MemberVote, 3> Ensemble::member_votes(std::span<const double> x) const {
  const auto as_vote = [](double p_object) {
    p_object = std::clamp(p_object, 0.0, 1.0);
    return p_object >= 0.5 ? MemberVote{1, p_object} : MemberVote{0, 1.0 - p_object};
  };
  return {as_vote(gbt.probability(x)), as_vote(rf.vote_fraction(x, 1)), as_vote(svm.probability(x))};
}

EnsemblePrediction Ensemble::predict(std::span<const double> x) const { return fuse(member_votes(x)); }

Ensemble train_ensemble(const Dataset& data, const EnsembleParams& p, std::uint64_t seed) {
  Ensemble e;
  e.gbt = train_gbt(data, p.xgb, derive_seed(seed, {1}));
  e.rf = train_rf(data, p.rf, derive_seed(seed, {2}));
  e.svm = train_svm(data, p.svm, derive_seed(seed, {3}));
  return e;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

constexpr int kFormatVersion = 1;

nlohmann::json tree_json(const RegressionTree& t) {
  nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                 left = nlohmann::json::array(), right = nlohmann::json::array(), value = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    value.push_back(n.value);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}};
}

nlohmann::json tree_json(const ClassificationTree& t) {
  nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                 left = nlohmann::json::array(), right = nlohmann::json::array(), label = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    label.push_back(n.label);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"label", label}};
}

template <typename Tree, typename Leaf>
Tree tree_from_json(const nlohmann::json& j, const char* leaf_key) {
  Tree t;
  const auto& f = j.at("feature");
  t.nodes.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto& n = t.nodes[i];
    n.feature = f[i].get<int>();
    n.threshold = j.at("threshold")[i].get<double>();
    n.left = j.at("left")[i].get<int>();
    n.right = j.at("right")[i].get<int>();
    if constexpr (std::is_same_v<Leaf, double>) {
      n.value = j.at(leaf_key)[i].get<double>();
    } else {
      n.label = j.at(leaf_key)[i].get<int>();
    }
  }
  return t;
}

}  // namespace

nlohmann::json to_json(const Ensemble& e) {
  nlohmann::json gbt_trees = nlohmann::json::array();
  for (const auto& t : e.gbt.trees) gbt_trees.push_back(tree_json(t));
  nlohmann::json rf_trees = nlohmann::json::array();
  for (const auto& t : e.rf.trees) rf_trees.push_back(tree_json(t));
  return {{"format", "densecotrain.ensemble"},
          {"version", kFormatVersion},
          {"gbt",
           {{"base_score", e.gbt.base_score},
            {"learning_rate", e.gbt.learning_rate},
            {"training_loss", e.gbt.training_loss},
            {"trees", gbt_trees}}},
          {"rf", {{"trees", rf_trees}}},
          {"svm",
           {{"kernel", std::string(to_string(e.svm.kernel))},
            {"gamma", e.svm.gamma},
            {"dim", e.svm.dim},
            {"support", e.svm.support},
            {"coef", e.svm.coef},
            {"platt_a", e.svm.platt_a},
            {"platt_b", e.svm.platt_b}}}};
}

Ensemble ensemble_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "densecotrain.ensemble") throw ValidationError("not an ensemble document");
  if (j.value("version", 0) != kFormatVersion) {
    throw ValidationError(fmt::format("unsupported ensemble document version {}", j.value("version", 0)));
  }
  Ensemble e;
  const auto& g = j.at("gbt");
  e.gbt.base_score = g.at("base_score").get<double>();
  e.gbt.learning_rate = g.at("learning_rate").get<double>();
  e.gbt.training_loss = g.at("training_loss").get<std::vector<double>>();
  for (const auto& t : g.at("trees")) e.gbt.trees.push_back(tree_from_json<RegressionTree, double>(t, "value"));
  for (const auto& t : j.at("rf").at("trees")) e.rf.trees.push_back(tree_from_json<ClassificationTree, int>(t, "label"));
  const auto& s = j.at("svm");
  e.svm.kernel = kernel_from_string(s.at("kernel").get<std::string>());
  e.svm.gamma = s.at("gamma").get<double>();
  e.svm.dim = s.at("dim").get<std::size_t>();
  e.svm.support = s.at("support").get<std::vector<double>>();
  e.svm.coef = s.at("coef").get<std::vector<double>>();
  e.svm.platt_a = s.at("platt_a").get<double>();
  e.svm.platt_b = s.at("platt_b").get<double>();
  if (e.svm.support.size() != e.svm.coef.size() * e.svm.dim) throw ValidationError("svm support array has wrong size");
  return e;
}

nlohmann::json to_json(const EnsembleParams& p) {
  return {{"xgb",
           {{"learning_rate", p.xgb.learning_rate},
            {"max_depth", p.xgb.max_depth},
            {"l2_reg", p.xgb.l2_reg},
            {"n_trees", p.xgb.n_trees}}},
          {"rf", {{"max_depth", p.rf.max_depth}, {"n_trees", p.rf.n_trees}}},
          {"svm", {{"c", p.svm.c}, {"kernel", std::string(to_string(p.svm.kernel))}, {"gamma", p.svm.gamma}}}};
}

EnsembleParams ensemble_params_from_json(const nlohmann::json& j, EnsembleParams d) {
  if (j.contains("xgb")) {
    const auto& x = j["xgb"];
    d.xgb.learning_rate = x.value("learning_rate", d.xgb.learning_rate);
    d.xgb.max_depth = x.value("max_depth", d.xgb.max_depth);
    d.xgb.l2_reg = x.value("l2_reg", d.xgb.l2_reg);
    d.xgb.n_trees = x.value("n_trees", d.xgb.n_trees);
  }
  if (j.contains("rf")) {
    d.rf.max_depth = j["rf"].value("max_depth", d.rf.max_depth);
    d.rf.n_trees = j["rf"].value("n_trees", d.rf.n_trees);
  }
  if (j.contains("svm")) {
    const auto& s = j["svm"];
    d.svm.c = s.value("c", d.svm.c);
    if (s.contains("kernel")) d.svm.kernel = kernel_from_string(s["kernel"].get<std::string>());
    d.svm.gamma = s.value("gamma", d.svm.gamma);
  }
  return d;
}

}  // namespace densecotrain::ensemble
