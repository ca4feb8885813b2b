#include <algorithm>
#include <cmath>
#include <numeric>

#include "densecotrain/ensemble.hpp"
#include "densecotrain/errors.hpp"

namespace densecotrain::ensemble {

void Dataset::add(std::span<const double> x, int label) {
  if (dim_ == 0 && values_.empty()) dim_ = x.size();
  if (x.size() != dim_) throw ValidationError("feature vector length does not match dataset dimension");
  if (label < 0) throw ValidationError("labels must be non-negative");
  values_.insert(values_.end(), x.begin(), x.end());
  labels_.push_back(label);
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts;
  for (int l : labels_) {
    if (static_cast<std::size_t>(l) >= counts.size()) counts.resize(static_cast<std::size_t>(l) + 1, 0);
    ++counts[static_cast<std::size_t>(l)];
  }
  return counts;
}

double RegressionTree::predict(std::span<const double> x) const {
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

double leaf_weight(double grad_sum, double hess_sum, double l2_reg) {
  const double denom = hess_sum + l2_reg;
  return denom > 0.0 ? -grad_sum / denom : 0.0;  // no curvature: leave the margin alone
}

namespace {

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

double log_loss(const std::vector<double>& margins, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    const double m = margins[i];
    // log(1 + e^m) - y m, computed stably
    const double softplus = m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    total += softplus - (labels[i] == 1 ? m : 0.0);
  }
  return total / static_cast<double>(margins.size());
}

constexpr double kMinChildHessian = 1e-6;

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, const std::vector<double>& grad, const std::vector<double>& hess,
              const XgbParams& p)
      : data_(data), grad_(grad), hess_(hess), p_(p), side_(data.size(), 0) {}

  RegressionTree build() {
    const std::size_t dim = data_.dim();
    std::vector<std::vector<std::uint32_t>> sorted(dim);
    for (std::size_t f = 0; f < dim; ++f) {
      auto& idx = sorted[f];
      idx.resize(data_.size());
      std::iota(idx.begin(), idx.end(), 0u);
      std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
        return data_.row(a)[f] < data_.row(b)[f];
      });
    }
    grow(std::move(sorted), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::vector<std::uint32_t>> sorted, int depth) {
    const auto& rows = sorted.front();
    double G = 0.0, H = 0.0;
    for (std::uint32_t r : rows) {
      G += grad_[r];
      H += hess_[r];
    }
    const int node_id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes.back().value = leaf_weight(G, H, p_.l2_reg);
    if (depth >= p_.max_depth || rows.size() < 2 || H < 2.0 * kMinChildHessian) return node_id;

    const double parent_score = G * G / (H + p_.l2_reg);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      const auto& idx = sorted[f];
      double gl = 0.0, hl = 0.0;
      for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
        gl += grad_[idx[k]];
        hl += hess_[idx[k]];
        const double v = data_.row(idx[k])[f];
        const double next = data_.row(idx[k + 1])[f];
        if (!(next > v)) continue;
        const double hr = H - hl;
        if (hl < kMinChildHessian || hr < kMinChildHessian) continue;
        const double gr = G - gl;
        const double gain =
            0.5 * (gl * gl / (hl + p_.l2_reg) + gr * gr / (hr + p_.l2_reg) - parent_score);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (v + next);
        }
      }
    }
    if (best_feature < 0) return node_id;

    for (std::uint32_t r : rows) {
      side_[r] = data_.row(r)[static_cast<std::size_t>(best_feature)] < best_threshold ? 1 : 2;
    }
    std::vector<std::vector<std::uint32_t>> left(sorted.size()), right(sorted.size());
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      for (std::uint32_t r : sorted[f]) (side_[r] == 1 ? left[f] : right[f]).push_back(r);
    }
    sorted.clear();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(node_id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return node_id;
  }

  const Dataset& data_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  const XgbParams& p_;
  std::vector<std::uint8_t> side_;
  RegressionTree tree_;
};

}  // namespace

double GbtModel::margin(std::span<const double> x) const {
  double m = base_score;
  for (const auto& t : trees) m += learning_rate * t.predict(x);
  return m;
}

double GbtModel::probability(std::span<const double> x) const { return sigmoid(margin(x)); }

GbtModel train_gbt(const Dataset& data, const XgbParams& p, std::uint64_t /*seed*/) {
  if (!(p.learning_rate > 0.0)) throw ValidationError("gbt learning rate must be > 0");
  if (p.max_depth < 1) throw ValidationError("gbt max depth must be >= 1");
  if (!(p.l2_reg >= 0.0)) throw ValidationError("gbt l2 regularization must be >= 0");
  if (p.n_trees < 0) throw ValidationError("gbt tree count must be >= 0");
  const auto counts = data.class_counts();
  if (counts.size() != 2 || counts[0] == 0 || counts[1] == 0) {
    throw ValidationError("gbt training needs binary labels with at least one example of each class");
  }

  const std::size_t n = data.size();
  const double prior = static_cast<double>(counts[1]) / static_cast<double>(n);
  GbtModel model;
  model.base_score = std::log(prior / (1.0 - prior));
  model.learning_rate = p.learning_rate;

  std::vector<double> margins(n, model.base_score);
  std::vector<double> grad(n), hess(n);
  model.training_loss.push_back(log_loss(margins, data.labels()));
  for (int t = 0; t < p.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double pr = sigmoid(margins[i]);
      grad[i] = pr - (data.label(i) == 1 ? 1.0 : 0.0);
      hess[i] = std::max(pr * (1.0 - pr), 1e-16);
    }
    auto tree = TreeBuilder(data, grad, hess, p).build();
    for (std::size_t i = 0; i < n; ++i) margins[i] += p.learning_rate * tree.predict(data.row(i));
    model.trees.push_back(std::move(tree));
    model.training_loss.push_back(log_loss(margins, data.labels()));
  }
  return model;
}

}  // namespace densecotrain::ensemble
