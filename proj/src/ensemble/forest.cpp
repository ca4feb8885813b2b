#include <algorithm>
#include <cmath>
#include <numeric>

#include "densecotrain/ensemble.hpp"
#include "densecotrain/errors.hpp"

namespace densecotrain::ensemble {

int ClassificationTree::predict(std::span<const double> x) const {
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].label;
}

namespace {

double gini(const std::vector<double>& counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / total) * (c / total);
  return 1.0 - s;
}

int majority(const std::vector<double>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

class CartBuilder {
 public:
  CartBuilder(const Dataset& data, int max_depth, int features_per_split, Rng& rng, std::size_t n_classes)
      : data_(data), max_depth_(max_depth), mtry_(features_per_split), rng_(rng), k_(n_classes) {}

  ClassificationTree build(std::vector<std::size_t> rows) {
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::size_t> rows, int depth) {
    std::vector<double> counts(k_, 0.0);
    for (std::size_t r : rows) counts[static_cast<std::size_t>(data_.label(r))] += 1.0;
    const int node_id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes.back().label = majority(counts);

    const double n = static_cast<double>(rows.size());
    const double parent = gini(counts, n);
    if (depth >= max_depth_ || rows.size() < 2 || parent <= 0.0) return node_id;

    // Sample features without replacement, then visit them in index order.
    std::vector<std::size_t> features(data_.dim());
    std::iota(features.begin(), features.end(), 0);
    const auto m = static_cast<std::size_t>(std::clamp<int>(mtry_, 1, static_cast<int>(data_.dim())));
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, features.size() - 1);
      std::swap(features[i], features[pick(rng_)]);
    }
    features.resize(m);
    std::sort(features.begin(), features.end());

    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order(rows);
    std::vector<double> right(k_);
    for (std::size_t f : features) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return data_.row(a)[f] < data_.row(b)[f]; });
      std::vector<double> left(k_, 0.0);
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left[static_cast<std::size_t>(data_.label(order[i]))] += 1.0;
        const double v = data_.row(order[i])[f];
        const double next = data_.row(order[i + 1])[f];
        if (!(next > v)) continue;
        const double nl = static_cast<double>(i + 1);
        const double nr = n - nl;
        for (std::size_t c = 0; c < k_; ++c) right[c] = counts[c] - left[c];
        const double gain = parent - (nl / n) * gini(left, nl) - (nr / n) * gini(right, nr);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (v + next);
        }
      }
    }
    if (best_feature < 0) return node_id;

    std::vector<std::size_t> l, r;
    for (std::size_t row : rows) {
      (data_.row(row)[static_cast<std::size_t>(best_feature)] < best_threshold ? l : r).push_back(row);
    }
    rows.clear();
    const int li = grow(std::move(l), depth + 1);
    const int ri = grow(std::move(r), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(node_id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = li;
    node.right = ri;
    return node_id;
  }

  const Dataset& data_;
  int max_depth_;
  int mtry_;
  Rng& rng_;
  std::size_t k_;
  ClassificationTree tree_;
};

int default_mtry(std::size_t dim) {
  return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(dim)))));
}

}  // namespace

ClassificationTree train_cart_tree(const Dataset& data, std::span<const std::size_t> rows, int max_depth,
                                   int features_per_split, Rng& rng) {
  if (rows.empty()) throw ValidationError("cart tree needs at least one row");
  if (max_depth < 0) throw ValidationError("tree depth must be >= 0");
  const std::size_t k = std::max<std::size_t>(2, data.class_counts().size());
  if (features_per_split <= 0) features_per_split = default_mtry(data.dim());
  return CartBuilder(data, max_depth, features_per_split, rng, k)
      .build(std::vector<std::size_t>(rows.begin(), rows.end()));
}

double ForestModel::vote_fraction(std::span<const double> x, int label) const {
  if (trees.empty()) return 0.0;
  std::size_t votes = 0;
  for (const auto& t : trees) votes += t.predict(x) == label ? 1 : 0;
  return static_cast<double>(votes) / static_cast<double>(trees.size());
}

ForestModel train_rf(const Dataset& data, const RfParams& p, std::uint64_t seed, RfOptions options) {
  if (data.size() == 0) throw ValidationError("random forest needs a nonempty training set");
  if (p.n_trees < 1) throw ValidationError("random forest needs at least one tree");
  if (p.max_depth < 0) throw ValidationError("random forest depth must be >= 0");
  ForestModel forest;
  const std::size_t n = data.size();
  for (int t = 0; t < p.n_trees; ++t) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(t)}));
    std::vector<std::size_t> rows(n);
    if (options.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& r : rows) r = pick(rng);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    forest.trees.push_back(train_cart_tree(data, rows, p.max_depth, options.features_per_split, rng));
  }
  return forest;
}

}  // namespace densecotrain::ensemble
