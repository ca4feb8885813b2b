#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "densecotrain/ensemble.hpp"
#include "densecotrain/errors.hpp"
#include "support/testing.hpp"

using namespace densecotrain;
using namespace densecotrain::ensemble;

namespace {

template <class Predict>
double accuracy(const Dataset& d, Predict&& predict_label) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) ok += predict_label(d.row(i)) == d.label(i);
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

Dataset sign_data(std::size_t n) {
  Dataset d(1);
  for (std::size_t i = 0; i < n; ++i) {
    double x = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    d.add(std::vector<double>{x}, x > 0 ? 1 : 0);
  }
  return d;
}

bool same_tree(const ClassificationTree& a, const ClassificationTree& b) {
  if (a.nodes.size() != b.nodes.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const auto &x = a.nodes[i], &y = b.nodes[i];
    if (x.feature != y.feature || x.threshold != y.threshold || x.left != y.left || x.right != y.right ||
        x.label != y.label)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("gbt with no trees predicts the prior") {
  auto d = testing::gaussian_blobs(30, 3, 2.0, 1);
  d.add(std::vector<double>{0, 0, 0}, 1);  // 16 of 31 are objects
  XgbParams p;
  p.n_trees = 0;
  auto m = train_gbt(d, p, 0);
  CHECK(m.trees.empty());
  CHECK(m.base_score == doctest::Approx(std::log(16.0 / 15.0)));
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> x{normal(rng, 0, 5), normal(rng, 0, 5), normal(rng, 0, 5)};
    CHECK(m.margin(x) == m.base_score);
  }
}

TEST_CASE("leaf weight") {
  CHECK(leaf_weight(2.0, 4.0, 1.0) == doctest::Approx(-0.4).epsilon(1e-15));
  CHECK(leaf_weight(-3.0, 2.0, 1.0) == doctest::Approx(1.0));
  CHECK(leaf_weight(1.0, 0.0, 0.0) == 0.0);
}

TEST_CASE("gbt stumps separate sign data") {
  XgbParams p;
  p.n_trees = 10;
  p.max_depth = 1;
  auto d = sign_data(200);
  auto m = train_gbt(d, p, 0);
  CHECK(accuracy(d, [&](auto x) { return m.probability(x) >= 0.5 ? 1 : 0; }) == 1.0);
}

TEST_CASE("gbt training loss never increases") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto d = testing::gaussian_blobs(300, 4, 1.5, seed);
    XgbParams p;
    p.n_trees = 40;
    p.l2_reg = static_cast<double>(seed);
    auto m = train_gbt(d, p, seed);
    REQUIRE(m.training_loss.size() == 41);
    for (std::size_t i = 1; i < m.training_loss.size(); ++i) CHECK(m.training_loss[i] <= m.training_loss[i - 1] + 1e-12);
  }
}

TEST_CASE("single-class data is rejected") {
  Dataset d(2);
  d.add(std::vector<double>{0, 0}, 1);
  d.add(std::vector<double>{1, 1}, 1);
  CHECK_THROWS_AS(train_gbt(d, {}, 0), ValidationError);
  CHECK_THROWS_AS(train_svm(d, {}, 0), ValidationError);
  CHECK_THROWS_AS(train_rf(Dataset(2), {}, 0), ValidationError);
}

TEST_CASE("random forest degenerate depth and single tree") {
  auto d = testing::gaussian_blobs(101, 4, 2.0, 3);
  RfParams p;
  p.max_depth = 0;
  p.n_trees = 15;
  auto f = train_rf(d, p, 4);
  for (const auto& t : f.trees) CHECK(t.nodes.size() == 1);

  p.max_depth = 6;
  p.n_trees = 1;
  RfOptions opt{false, 4};
  auto one = train_rf(d, p, 5, opt);
  std::vector<std::size_t> rows(d.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  Rng rng(99);
  auto tree = train_cart_tree(d, rows, 6, 4, rng);
  REQUIRE(one.trees.size() == 1);
  CHECK(same_tree(one.trees[0], tree));
}

TEST_CASE("random forest probabilities are vote fractions") {
  auto d = testing::gaussian_blobs(200, 4, 1.0, 6);
  RfParams p;
  p.n_trees = 7;
  p.max_depth = 4;
  auto f = train_rf(d, p, 6);
  for (std::size_t i = 0; i < d.size(); ++i) {
    double v = f.vote_fraction(d.row(i)) * 7.0;
    CHECK(v == std::round(v));
  }
}

TEST_CASE("kernels") {
  std::vector<double> x{0.3, -1.2, 4.0}, e1{1, 0, 0}, e2{0, 1, 0};
  CHECK(kernel_value(Kernel::Rbf, 0.7, x, x) == 1.0);
  CHECK(kernel_value(Kernel::Linear, 0.0, e1, e2) == 0.0);
  CHECK(kernel_value(Kernel::Poly, 0.5, x, x) == doctest::Approx(std::pow(0.5 * (0.09 + 1.44 + 16.0) + 1.0, 3)));
  CHECK(kernel_from_string("poly") == Kernel::Poly);
  CHECK_THROWS_AS(kernel_from_string("sigmoid"), ValidationError);
}

TEST_CASE("linear svm on two points") {
  Dataset d(1);
  d.add(std::vector<double>{-1.0}, 0);
  d.add(std::vector<double>{1.0}, 1);
  SvmParams p;
  p.kernel = Kernel::Linear;
  auto m = train_svm(d, p, 0);
  CHECK(m.decision(std::vector<double>{-1.0}) < 0.0);
  CHECK(m.decision(std::vector<double>{1.0}) > 0.0);
  CHECK(m.probability(std::vector<double>{1.0}) > 0.5);
}

TEST_CASE("classifiers on separated blobs") {
  auto train = testing::gaussian_blobs(500, 16, 6.0, 10);
  auto test = testing::gaussian_blobs(500, 16, 6.0, 11);
  auto gbt = train_gbt(train, {}, 1);
  auto rf = train_rf(train, {}, 1);
  auto svm = train_svm(train, {}, 1);
  CHECK(accuracy(test, [&](auto x) { return gbt.probability(x) >= 0.5 ? 1 : 0; }) >= 0.95);
  CHECK(accuracy(test, [&](auto x) { return rf.vote_fraction(x) >= 0.5 ? 1 : 0; }) >= 0.95);
  CHECK(accuracy(test, [&](auto x) { return svm.probability(x) >= 0.5 ? 1 : 0; }) >= 0.95);
}

TEST_CASE("training is deterministic") {
  auto d = testing::gaussian_blobs(200, 5, 2.0, 12);
  EnsembleParams p;
  p.xgb.n_trees = 20;
  p.rf.n_trees = 20;
  auto a = train_ensemble(d, p, 7);
  auto b = train_ensemble(d, p, 7);
  CHECK(to_json(a) == to_json(b));
}

TEST_CASE("fuse examples") {
  auto r = fuse({MemberVote{1, 0.9}, {1, 0.9}, {1, 0.9}});
  CHECK(r.label == 1);
  CHECK(r.confidence == doctest::Approx(0.9));

  r = fuse({MemberVote{1, 0.9}, {1, 0.8}, {0, 0.9}});
  CHECK(r.label == 1);
  CHECK(r.confidence == doctest::Approx(0.6));

  r = fuse({MemberVote{0, 0.5}, {1, 0.5}, {1, 0.5}});
  CHECK(r.label == 0);
  CHECK(r.confidence == 0.5);
  r = fuse({MemberVote{1, 0.5}, {0, 0.5}, {0, 0.5}});
  CHECK(r.label == 1);

  CHECK_THROWS_AS(fuse({MemberVote{1, 1.2}, {1, 0.5}, {1, 0.5}}), ValidationError);
  CHECK_THROWS_AS(fuse({MemberVote{1, -0.1}, {1, 0.5}, {1, 0.5}}), ValidationError);
}

TEST_CASE("fuse properties") {
  Rng rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    MemberVote m{static_cast<int>(rng() % 2), uniform01(rng)};
    auto same = fuse({m, m, m});
    // A lone member below 0.5 effectively votes for the other class.
    if (m.probability != 0.5) {
      CHECK(same.label == (m.probability > 0.5 ? m.label : 1 - m.label));
      CHECK(same.confidence == doctest::Approx(std::max(m.probability, 1.0 - m.probability)));
    }

    std::array<MemberVote, 3> v{MemberVote{static_cast<int>(rng() % 2), uniform01(rng)},
                                {static_cast<int>(rng() % 2), uniform01(rng)},
                                {static_cast<int>(rng() % 2), uniform01(rng)}};
    auto base = fuse(v);
    CHECK(base.confidence >= 0.5);
    CHECK(base.confidence <= 1.0);
    std::array<int, 3> perm{0, 1, 2};
    while (std::next_permutation(perm.begin(), perm.end())) {
      auto p = fuse({v[perm[0]], v[perm[1]], v[perm[2]]});
      CHECK(p.label == base.label);
      CHECK(p.confidence == doctest::Approx(base.confidence).epsilon(1e-12));
    }
  }
}

TEST_CASE("fuse over distributions") {
  auto r = fuse_distributions({std::vector<double>{0.2, 0.5, 0.3}, {0.1, 0.1, 0.8}, {0.3, 0.4, 0.3}});
  CHECK(r.label == 2);
  CHECK(r.confidence == doctest::Approx(1.4 / 3.0));
  CHECK_THROWS_AS(fuse_distributions({std::vector<double>{0.5, 0.5}, {1.0}, {0.5, 0.5}}), ValidationError);
}

TEST_CASE("soft vote beats its members when their errors are independent") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::array<double, 3> skill{0.75, 0.72, 0.7};
    std::array<std::size_t, 3> member_ok{};
    std::size_t ensemble_ok = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
      int truth = static_cast<int>(rng() % 2);
      std::array<MemberVote, 3> votes{};
      for (std::size_t m = 0; m < 3; ++m) {
        bool right = uniform01(rng) < skill[m];
        votes[m] = {right ? truth : 1 - truth, 0.55 + 0.4 * uniform01(rng)};
        member_ok[m] += right;
      }
      ensemble_ok += fuse(votes).label == truth;
    }
    wins += ensemble_ok >= *std::max_element(member_ok.begin(), member_ok.end());
  }
  CHECK(wins == 20);
}

TEST_CASE("ensemble serialization round trip") {
  auto d = testing::gaussian_blobs(150, 4, 2.0, 14);
  EnsembleParams p;
  p.xgb.n_trees = 10;
  p.rf.n_trees = 10;
  p.svm.kernel = Kernel::Poly;
  auto e = train_ensemble(d, p, 3);
  auto back = ensemble_from_json(nlohmann::json::parse(to_json(e).dump()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto a = e.predict(d.row(i)), b = back.predict(d.row(i));
    CHECK(a.label == b.label);
    CHECK(a.confidence == b.confidence);
  }
  CHECK_THROWS_AS(ensemble_from_json(nlohmann::json{{"format", "other"}}), ValidationError);

  auto params = ensemble_params_from_json(to_json(p));
  CHECK(params.svm.kernel == Kernel::Poly);
  CHECK(params.xgb.n_trees == 10);
}
