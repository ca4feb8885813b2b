#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "densecotrain/random.hpp"

namespace densecotrain::ensemble {

/// Dense row-major feature matrix with integer class labels
/// (binary tasks use 0 = background, 1 = object).
class Dataset {
 public:
  explicit Dataset(std::size_t dim = 0) : dim_(dim) {}

  void add(std::span<const double> x, int label);
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  int label(std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }

  /// Number of rows per label, indexed by label.
  std::vector<std::size_t> class_counts() const;

 private:
  std::size_t dim_;
  std::vector<double> values_;
  std::vector<int> labels_;
};

// ---------------------------------------------------------------------------
// Gradient-boosted trees (second-order boosting on logistic loss)

struct XgbParams {
  double learning_rate = 0.1;
  int max_depth = 4;
  double l2_reg = 1.0;
  int n_trees = 100;
};

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // rows with x[feature] < threshold go left
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double predict(std::span<const double> x) const;
};

/// Optimal leaf weight -G / (H + l2) for gradient sum G and hessian sum H.
double leaf_weight(double grad_sum, double hess_sum, double l2_reg);

struct GbtModel {
  double base_score = 0.0;  // prior log-odds
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;
  std::vector<double> training_loss;  // mean log-loss before round 1, then after each round

  double margin(std::span<const double> x) const;
  double probability(std::span<const double> x) const;  // P(label 1)
};

/// Requires both classes present (ValidationError otherwise). Exact greedy
/// splits maximizing the second-order gain; no randomness is involved, the
/// seed is accepted for interface symmetry.
GbtModel train_gbt(const Dataset& data, const XgbParams& p, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Random forest (bagged Gini CART trees)

struct RfParams {
  int max_depth = 10;
  int n_trees = 100;
};

struct ClassificationTree {
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = 0;
  };
  std::vector<Node> nodes;

  int predict(std::span<const double> x) const;
};

/// Test hooks: disable bootstrap, choose the per-split feature sample size
/// (0 means floor(sqrt(dim)), at least 1).
struct RfOptions {
  bool bootstrap = true;
  int features_per_split = 0;
};

/// One Gini CART tree on the given rows (duplicates allowed). Sampled split
/// features are examined in ascending index order; leaves predict the
/// majority label (smallest label on ties).
ClassificationTree train_cart_tree(const Dataset& data, std::span<const std::size_t> rows, int max_depth,
                                   int features_per_split, Rng& rng);

struct ForestModel {
  std::vector<ClassificationTree> trees;

  /// Fraction of trees voting for `label`; a multiple of 1/n_trees.
  double vote_fraction(std::span<const double> x, int label = 1) const;
};

ForestModel train_rf(const Dataset& data, const RfParams& p, std::uint64_t seed, RfOptions options = {});

// ---------------------------------------------------------------------------
// Kernel SVM (kernelized stochastic subgradient descent on the hinge loss)

enum class Kernel { Linear, Rbf, Poly };

std::string_view to_string(Kernel k);
Kernel kernel_from_string(std::string_view s);

struct SvmParams {
  double c = 1.0;
  Kernel kernel = Kernel::Rbf;
  double gamma = 0.05;  // ignored by the linear kernel
};

/// linear <a,b>; rbf exp(-gamma |a-b|^2); poly (gamma <a,b> + 1)^3.
double kernel_value(Kernel k, double gamma, std::span<const double> a, std::span<const double> b);

struct SvmModel {
  Kernel kernel = Kernel::Rbf;
  double gamma = 0.05;
  std::size_t dim = 0;
  std::vector<double> support;  // row-major support vectors
  std::vector<double> coef;     // signed dual weight per support vector
  double platt_a = -1.0;        // P(label 1) = 1 / (1 + exp(platt_a * f + platt_b))
  double platt_b = 0.0;

  /// Decision value f(x); the kernel is augmented by +1 to absorb a bias.
  double decision(std::span<const double> x) const;
  double probability(std::span<const double> x) const;
  std::size_t support_count() const { return coef.size(); }
};

/// Regularization lambda = 1 / (C n). `iterations` of 0 selects
/// max(2000, 10 n). Requires both classes (ValidationError otherwise).
SvmModel train_svm(const Dataset& data, const SvmParams& p, std::uint64_t seed, std::size_t iterations = 0);

// ---------------------------------------------------------------------------
// Fusion

struct MemberVote {
  int label = 0;
  double probability = 0.0;  // probability of `label`
};

struct EnsemblePrediction {
  int label = 0;
  double confidence = 0.0;  // mean member probability of `label`
  std::array<MemberVote, 3> per_member{};
};

/// Soft vote of binary members ordered (gbt, rf, svm): each member gives p
/// to its label and 1-p to the other. Ties go to the first member, in that
/// order, whose own label is among the tied classes.
EnsemblePrediction fuse(const std::array<MemberVote, 3>& members);

/// K-class soft vote over full member distributions (same tie rule, a
/// member's label being its argmax).
EnsemblePrediction fuse_distributions(const std::array<std::vector<double>, 3>& members);

struct EnsembleParams {
  XgbParams xgb;
  RfParams rf;
  SvmParams svm;
};

struct Ensemble {
  GbtModel gbt;
  ForestModel rf;
  SvmModel svm;

  std::array<MemberVote, 3> member_votes(std::span<const double> x) const;
  EnsemblePrediction predict(std::span<const double> x) const;
};

/// Trains the three members with independent derived seeds.
Ensemble train_ensemble(const Dataset& data, const EnsembleParams& p, std::uint64_t seed);

nlohmann::json to_json(const Ensemble& e);
Ensemble ensemble_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EnsembleParams& p);
EnsembleParams ensemble_params_from_json(const nlohmann::json& j, EnsembleParams defaults = {});

}  // namespace densecotrain::ensemble
