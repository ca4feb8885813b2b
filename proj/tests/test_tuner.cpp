#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "densecotrain/errors.hpp"
#include "densecotrain/tuner.hpp"
#include "support/testing.hpp"

using namespace densecotrain;
using namespace densecotrain::tuner;

namespace {

const std::vector<GeneSpec>& specs() {
  static const auto s = default_specs();
  return s;
}

bool integral(double x) { return x == std::floor(x); }

void check_monotone(const TuneResult& r) {
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    CHECK(r.trace[i].evaluation == static_cast<int>(i) + 1);
    CHECK(r.trace[i].best_so_far >= r.trace[i].score);
    if (i > 0) CHECK(r.trace[i].best_so_far >= r.trace[i - 1].best_so_far);
  }
  if (!r.trace.empty()) CHECK(r.trace.back().best_so_far == r.best_score);
}

}  // namespace

TEST_CASE("default specs cover the twenty genes") {
  CHECK(specs().size() == kGeneCount);
  CHECK_NOTHROW(validate_specs(specs()));
  CHECK(specs()[kBsYolo].menu == std::vector<std::string>{"4", "8", "16", "32"});
  CHECK(specs()[kKSvm].menu == std::vector<std::string>{"linear", "rbf", "poly"});
  CHECK(specs()[kAsRcnn].menu.size() == 4);
  CHECK(specs()[kGSvm].kind == GeneKind::LogContinuous);
  CHECK(specs()[kDXgb].lo == 1);
  CHECK(specs()[kDXgb].hi == 12);

  auto partial = specs();
  partial.erase(partial.begin() + kNtRf);
  partial.erase(partial.begin() + kCtYolo - 1);
  try {
    validate_specs(partial);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    std::string m = e.what();
    CHECK(m.find("nt_rf") != std::string::npos);
    CHECK(m.find("ct_yolo") != std::string::npos);
  }
  CHECK_THROWS_AS(random_vector(partial, 1), ValidationError);
}

TEST_CASE("random vectors respect their specs") {
  std::set<double> kernels;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto v = random_vector(specs(), seed);
    CHECK(is_valid(v, specs()));
    CHECK(v[kDXgb] >= 1);
    CHECK(v[kDXgb] <= 12);
    CHECK(integral(v[kDXgb]));
    kernels.insert(v[kKSvm]);
  }
  CHECK(kernels == std::set<double>{0, 1, 2});
  CHECK(random_vector(specs(), 77) == random_vector(specs(), 77));
  CHECK(random_vector(specs(), 77) != random_vector(specs(), 78));
}

TEST_CASE("log genes are sampled uniformly in log space") {
  int below = 0;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) below += random_vector(specs(), seed)[kCSvm] < 1.0;
  // log-uniform over [0.01, 100] puts half the mass below 1.
  CHECK(std::abs(below / 2000.0 - 0.5) < 0.05);
}

TEST_CASE("mutation") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    auto v = random_vector(specs(), rng());
    CHECK(mutate(v, specs(), 0.0, rng()) == v);
    auto m = mutate(v, specs(), uniform01(rng), rng());
    CHECK(is_valid(m, specs()));

    auto wild = mutate(v, specs(), 1.0, rng(), 1e6);
    for (std::size_t i = 0; i < kGeneCount; ++i) {
      if (specs()[i].kind == GeneKind::Categorical) continue;
      CHECK((wild[i] == specs()[i].lo || wild[i] == specs()[i].hi));
    }
  }
  auto v = default_vector(specs());
  auto once = mutate(v, specs(), 1.0, 9);
  for (std::size_t i = 0; i < kGeneCount; ++i) {
    if (specs()[i].kind != GeneKind::Integer) continue;
    double step = std::abs(once[i] - v[i]);
    bool clamped = once[i] == specs()[i].lo || once[i] == specs()[i].hi;
    CHECK((clamped || (step >= 1 && step <= 3)));
  }
  CHECK_THROWS_AS(mutate(v, specs(), 1.5, 1), ValidationError);
}

TEST_CASE("crossover") {
  auto a = random_vector(specs(), 1), b = random_vector(specs(), 2);
  auto [x, y] = crossover(a, a, 3);
  CHECK(x == a);
  CHECK(y == a);

  std::array<bool, kGeneCount> mask{};
  std::fill(mask.begin(), mask.end(), true);
  auto [c1, c2] = crossover_with_mask(a, b, mask);
  CHECK(c1 == a);
  CHECK(c2 == b);
  std::fill(mask.begin(), mask.end(), false);
  std::tie(c1, c2) = crossover_with_mask(a, b, mask);
  CHECK(c1 == b);
  CHECK(c2 == a);

  Rng rng(6);
  int mixed = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto p = random_vector(specs(), rng()), q = random_vector(specs(), rng());
    auto [k1, k2] = crossover(p, q, rng());
    CHECK(is_valid(k1, specs()));
    CHECK(is_valid(k2, specs()));
    for (std::size_t i = 0; i < kGeneCount; ++i) {
      CHECK((k1[i] == p[i] || k1[i] == q[i]));
      CHECK((k2[i] == p[i] || k2[i] == q[i]));
      // The two children split each position between the parents.
      CHECK(((k1[i] == p[i] && k2[i] == q[i]) || (k1[i] == q[i] && k2[i] == p[i])));
    }
    mixed += k1 != p && k1 != q;
  }
  CHECK(mixed > 900);
}

TEST_CASE("metropolis rule") {
  for (double u : {0.0, 0.3, 0.999999}) {
    CHECK(metropolis_accept(0.1, 0.0, u));
    CHECK(metropolis_accept(0.0, 0.0, u));
    CHECK_FALSE(metropolis_accept(-1e-12, 0.0, u));
    CHECK_FALSE(metropolis_accept(-0.5, 0.0, u));
  }
  CHECK(metropolis_accept(-0.01, 1.0, 0.5));
  CHECK_FALSE(metropolis_accept(-0.01, 1.0, std::exp(-0.01) + 1e-9));
}

TEST_CASE("optimize with a budget of one") {
  auto f = testing::planted_surrogate(0);
  for (auto algo : {Algorithm::Ga, Algorithm::Sa}) {
    TunerConfig c;
    c.algorithm = algo;
    c.budget = 1;
    c.seed = 4;
    auto r = optimize(f, c, specs());
    REQUIRE(r.trace.size() == 1);
    CHECK(r.best == r.trace[0].vector);
    CHECK(r.best_score == f(r.best));
    CHECK(is_valid(r.best, specs()));
  }
}

TEST_CASE("traces are monotone and every candidate is valid") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto f = testing::planted_surrogate(seed);
    for (auto algo : {Algorithm::Ga, Algorithm::Sa}) {
      TunerConfig c;
      c.algorithm = algo;
      c.budget = 300;
      c.population = 20;
      c.seed = seed;
      auto r = optimize(f, c, specs());
      CHECK(r.trace.size() == 300);
      check_monotone(r);
      std::set<HyperVector> distinct;
      for (const auto& e : r.trace) {
        CHECK(is_valid(e.vector, specs()));
        CHECK(e.score == f(e.vector));
        distinct.insert(e.vector);
      }
      // Repeats come from the memo and do not consume budget.
      CHECK(distinct.size() == r.trace.size());
    }
  }
}

TEST_CASE("GA converges on the planted surrogate") {
  auto f = testing::planted_surrogate(1);
  TunerConfig c;
  c.budget = 2000;
  c.population = 40;
  c.seed = 1;
  auto r = optimize(f, c, specs());
  CHECK(r.best_score >= 0.95);
}

TEST_CASE("optimize is deterministic and worker-count independent") {
  auto f = testing::planted_surrogate(2);
  TunerConfig c;
  c.budget = 150;
  c.population = 16;
  c.seed = 8;
  auto a = optimize(f, c, specs());
  c.threads = 4;
  auto b = optimize(f, c, specs());
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].vector == b.trace[i].vector);
  CHECK(a.final_population == b.final_population);
}

TEST_CASE("GA without variation only reshuffles its initial population") {
  auto f = testing::planted_surrogate(3);
  TunerConfig c;
  c.budget = 100;
  c.population = 12;
  c.mutation_rate = 0.0;
  c.crossover_rate = 0.0;
  c.seed = 2;
  auto r = optimize(f, c, specs());
  REQUIRE(r.trace.size() == 12);
  std::set<HyperVector> initial;
  for (const auto& e : r.trace) initial.insert(e.vector);
  REQUIRE_FALSE(r.final_population.empty());
  for (const auto& v : r.final_population) CHECK(initial.count(v) == 1);
}

TEST_CASE("GA seeds the initial vector and elitism keeps it in play") {
  auto f = testing::planted_surrogate(4);
  TunerConfig c;
  c.budget = 60;
  c.population = 10;
  c.initial = f.target;
  auto r = optimize(f, c, specs());
  CHECK(r.trace[0].vector == f.target);
  CHECK(r.best_score == 1.0);
  CHECK(r.best == f.target);
}

TEST_CASE("population larger than the budget is clamped") {
  auto f = testing::planted_surrogate(5);
  TunerConfig c;
  c.budget = 5;
  c.population = 40;
  auto r = optimize(f, c, specs());
  CHECK(r.trace.size() == 5);
}

TEST_CASE("objective failures name the vector") {
  TunerConfig c;
  c.budget = 5;
  for (double bad : {1.5, -0.1, std::numeric_limits<double>::quiet_NaN()}) {
    Objective f = [bad](const HyperVector&) { return bad; };
    try {
      optimize(f, c, specs());
      FAIL("expected an error");
    } catch (const RuntimeFailure& e) {
      CHECK(std::string(e.what()).find("lr_xgb=") != std::string::npos);
    }
  }
}

TEST_CASE("config validation") {
  TunerConfig c;
  c.budget = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.crossover_rate = 1.1;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.cooling_rate = 0.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  CHECK(algorithm_from_string("sa") == Algorithm::Sa);
  CHECK_THROWS_AS(algorithm_from_string("pso"), ValidationError);
}

TEST_CASE("encoding and serialization") {
  auto d = default_vector(specs());
  CHECK(is_valid(d, specs()));
  CHECK(encode(cotrain::PipelineParams{}, specs()) == d);

  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = random_vector(specs(), rng());
    auto p = decode(v, specs());
    CHECK(encode(p, specs()) == v);
    CHECK(p.view_a.profile == detect::Profile::Localizer);
    CHECK(p.view_b.detector.epochs == static_cast<int>(v[kEpYolo]));
    CHECK(p.view_a.detector.epochs == static_cast<int>(v[kEpRcnn]));
    CHECK(p.view_a.ensemble.xgb.n_trees == static_cast<int>(v[kNtXgb]));
    CHECK(p.view_b.ensemble.xgb.n_trees == static_cast<int>(v[kNtXgb]));
    CHECK(vector_from_json(nlohmann::json::parse(to_json(v, specs()).dump()), specs()) == v);
  }
  auto j = to_json(d, specs());
  CHECK(j.at("k_svm") == "rbf");
  CHECK(j.at("bs_yolo") == "16");
  j["d_xgb"] = 40;
  CHECK_THROWS_AS(vector_from_json(j, specs()), ValidationError);
  j = to_json(d, specs());
  j["k_svm"] = "sigmoid";
  CHECK_THROWS_AS(vector_from_json(j, specs()), ValidationError);

  auto narrowed = specs_from_json(nlohmann::json{{"d_xgb", {{"lo", 2}, {"hi", 5}}}});
  CHECK(narrowed[kDXgb].lo == 2);
  CHECK(narrowed[kDXgb].hi == 5);
  for (std::uint64_t s = 0; s < 100; ++s) CHECK(random_vector(narrowed, s)[kDXgb] <= 5);
  CHECK_THROWS_AS(specs_from_json(nlohmann::json{{"depth", {{"lo", 2}}}}), ValidationError);

  TunerConfig c;
  c.algorithm = Algorithm::Sa;
  c.initial = d;
  auto back = tuner_config_from_json(to_json(c, specs()), specs());
  CHECK(back.algorithm == Algorithm::Sa);
  CHECK(back.initial == std::optional<HyperVector>(d));
}

TEST_CASE("pipeline tuning") {
  auto w = testing::small_world(9, 30, 10, 0.4);
  cotrain::Workspace ws(w.records, w.split);
  cotrain::CoTrainConfig cfg;
  cfg.seed = 9;

  TunerConfig one;
  one.budget = 1;
  auto r1 = tune_pipeline(ws, cfg, one, specs());
  REQUIRE(r1.tune.trace.size() == 1);
  CHECK(r1.tune.trace[0].vector == default_vector(specs()));
  double default_map = r1.tune.best_score;
  CHECK(default_map == cotrain::supervised_validation_map(ws, {}, cfg));

  TunerConfig few;
  few.budget = 4;
  few.population = 4;
  few.seed = 2;
  auto r = tune_pipeline(ws, cfg, few, specs());
  CHECK(r.tune.trace.size() == 4);
  CHECK(r.tune.best_score >= default_map);
  for (const auto& e : r.tune.trace) {
    CHECK(e.score >= 0.0);
    CHECK(e.score <= 1.0);
  }
  CHECK(encode(r.best_params, specs()) == r.tune.best);
  CHECK(ws.test_access_count() == 0);
}
