#pragma once

// CART regression trees, bagged random forests and gradient boosting for
// squared loss.
//
// The boosting variant fits each stage's tree to the current residuals (the
// negative gradient of squared loss; unit curvature) and uses leaf weights
// sum(r) / (count + leaf_l2). Split gain is sum over children G^2 / (count + leaf_l2);
// with leaf_l2 = 0 this is exactly the minimum child-SSE criterion of CART.
// There is no column subsampling and no gain-threshold pruning in boosting.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "yieldbench/common.hpp"

namespace yieldbench {

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  template <class Row>
  double predict_row(const Row& x) const {
    std::size_t at = 0;
    while (!nodes[at].is_leaf()) {
      const auto& n = nodes[at];
      at = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left : n.right);
    }
    return nodes[at].value;
  }

  Vector predict(const Matrix& x) const {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x.row(i));
    return out;
  }

  int depth() const {
    std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
    int best = 0;
    while (!stack.empty()) {
      auto [at, dep] = stack.back();
      stack.pop_back();
      best = std::max(best, dep);
      if (!nodes[at].is_leaf()) {
        stack.push_back({static_cast<std::size_t>(nodes[at].left), dep + 1});
        stack.push_back({static_cast<std::size_t>(nodes[at].right), dep + 1});
      }
    }
    return best;
  }

  bool operator==(const Tree&) const = default;
};

struct TreeParams {
  int min_node_size = 1;
  int max_depth = -1;             // -1 = unlimited
  double leaf_l2 = 0.0;
  double feature_fraction = 1.0;  // per-split column sampling
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;  // reduction in (regularized) squared error versus the unsplit node
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const Vector& y, const TreeParams& p, Rng* rng) : x_(x), y_(y), p_(p), rng_(rng) {
    if (p_.min_node_size < 1) throw Error("tree: min_node_size must be >= 1");
    if (!(p_.leaf_l2 >= 0.0)) throw Error("tree: leaf_l2 must be >= 0");
    if (!(p_.feature_fraction > 0.0 && p_.feature_fraction <= 1.0)) throw Error("tree: feature_fraction must be in (0, 1]");
    all_features_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(all_features_.begin(), all_features_.end(), 0);
  }

  Tree build(std::vector<std::size_t> rows) {
    if (rows.empty()) throw Error("tree: no training rows");
    tree_.nodes.clear();
    grow(rows, 0);
    return std::move(tree_);
  }

  // Best split of a row subset; feature < 0 when no admissible split exists.
  SplitChoice best_split(const std::vector<std::size_t>& rows, std::span<const int> features) const {
    const double n = static_cast<double>(rows.size());
    const double lambda = p_.leaf_l2;
    // Centering at the node mean keeps the lambda = 0 criterion well conditioned.
    double shift = 0.0;
    if (lambda == 0.0) {
      for (auto i : rows) shift += y_(static_cast<Eigen::Index>(i));
      shift /= n;
    }
    double g_total = 0.0;
    for (auto i : rows) g_total += y_(static_cast<Eigen::Index>(i)) - shift;
    const double parent_score = g_total * g_total / (n + lambda);

    SplitChoice best;
    double best_score = -std::numeric_limits<double>::infinity();
    const std::size_t min_size = static_cast<std::size_t>(p_.min_node_size);
    std::vector<std::pair<double, double>> col(rows.size());
    for (int f : features) {
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(rows[k]);
        col[k] = {x_(i, f), y_(i) - shift};
      }
      std::sort(col.begin(), col.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double g_left = 0.0;
      for (std::size_t k = 0; k + 1 < col.size(); ++k) {
        g_left += col[k].second;
        const std::size_t n_left = k + 1;
        const std::size_t n_right = col.size() - n_left;
        if (col[k].first == col[k + 1].first) continue;
        if (n_left < min_size || n_right < min_size) continue;
        const double g_right = g_total - g_left;
        const double score = g_left * g_left / (static_cast<double>(n_left) + lambda) +
                             g_right * g_right / (static_cast<double>(n_right) + lambda);
        if (score > best_score) {
          best_score = score;
          best.feature = f;
          best.threshold = 0.5 * (col[k].first + col[k + 1].first);
          // Guard against the midpoint rounding onto the right value.
          if (!(best.threshold < col[k + 1].first)) best.threshold = col[k].first;
          best.gain = score - parent_score;
        }
      }
    }
    return best;
  }

 private:
  int grow(const std::vector<std::size_t>& rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});

    double g = 0.0;
    bool constant = true;
    const double first = y_(static_cast<Eigen::Index>(rows[0]));
    for (auto i : rows) {
      const double v = y_(static_cast<Eigen::Index>(i));
      g += v;
      constant = constant && v == first;
    }
    tree_.nodes[id].value = g / (static_cast<double>(rows.size()) + p_.leaf_l2);

    const bool depth_reached = p_.max_depth >= 0 && depth >= p_.max_depth;
    if (constant || depth_reached || rows.size() < 2 * static_cast<std::size_t>(p_.min_node_size)) return id;

    auto split = best_split(rows, sample_features());
    if (split.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto i : rows)
      (x_(static_cast<Eigen::Index>(i), split.feature) <= split.threshold ? left : right).push_back(i);

    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree_.nodes[id];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  std::vector<int> sample_features() {
    if (p_.feature_fraction >= 1.0 || rng_ == nullptr) return all_features_;
    const std::size_t d = all_features_.size();
    const auto m = std::min(d, static_cast<std::size_t>(std::ceil(p_.feature_fraction * static_cast<double>(d))));
    std::vector<int> pool = all_features_;
    for (std::size_t k = 0; k < m; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, d - 1);
      std::swap(pool[k], pool[pick(*rng_)]);
    }
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  const Matrix& x_;
  const Vector& y_;
  TreeParams p_;
  Rng* rng_;
  std::vector<int> all_features_;
  Tree tree_;
};

inline std::vector<std::size_t> all_rows(Eigen::Index n) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace detail

// Exhaustive CART fit: midpoint thresholds between consecutive distinct sorted
// values, minimum total child SSE, ties to (lower feature, lower threshold).
// Stops on depth, on node size < 2 * min_node_size, or on zero node SSE.
inline Tree fit_regression_tree(const Matrix& x, const Vector& y, int min_node_size = 1, int max_depth = -1) {
  if (x.rows() < 1 || x.rows() != y.size()) throw DimensionError("fit_regression_tree: bad X/y shapes");
  TreeParams p;
  p.min_node_size = min_node_size;
  p.max_depth = max_depth;
  return detail::TreeBuilder(x, y, p, nullptr).build(detail::all_rows(x.rows()));
}

inline SplitChoice find_best_split(const Matrix& x, const Vector& y, int min_node_size = 1) {
  TreeParams p;
  p.min_node_size = min_node_size;
  detail::TreeBuilder b(x, y, p, nullptr);
  std::vector<int> feats(static_cast<std::size_t>(x.cols()));
  std::iota(feats.begin(), feats.end(), 0);
  return b.best_split(detail::all_rows(x.rows()), feats);
}

enum class EnsembleMode { single, bagged, boosted };

inline std::string_view to_string(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::single: return "single";
    case EnsembleMode::bagged: return "bagged";
    case EnsembleMode::boosted: return "boosted";
  }
  return "?";
}

struct EnsembleModel {
  EnsembleMode mode = EnsembleMode::single;
  std::vector<Tree> trees;
  double base_score = 0.0;     // boosted only
  double learning_rate = 1.0;  // boosted only
  std::vector<std::uint64_t> tree_seeds;

  bool operator==(const EnsembleModel&) const = default;
};

inline Vector predict_ensemble(const EnsembleModel& m, const Matrix& x, Eigen::Index expected_cols = -1) {
  if (expected_cols >= 0 && x.cols() != expected_cols)
    throw DimensionError("predict_ensemble: expected " + std::to_string(expected_cols) + " columns, got " +
                         std::to_string(x.cols()));
  if (m.mode == EnsembleMode::single && m.trees.size() != 1)
    throw Error("predict_ensemble: single mode needs exactly one tree");
  if (m.mode == EnsembleMode::bagged && m.trees.empty()) throw Error("predict_ensemble: empty forest");
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = x;
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double* r = rows.data() + i * rows.cols();
    double acc = 0.0;
    if (m.mode == EnsembleMode::boosted) {
      acc = m.base_score;
      for (const auto& t : m.trees) acc += m.learning_rate * t.predict_row(r);
    } else {
      for (const auto& t : m.trees) acc += t.predict_row(r);
      if (m.mode == EnsembleMode::bagged) acc /= static_cast<double>(m.trees.size());
    }
    out(i) = acc;
  }
  return out;
}

struct ForestParams {
  int n_trees = 100;
  int min_node_size = 5;
  int max_depth = -1;
  double feature_fraction = 1.0 / 3.0;
  bool bootstrap = true;
  std::uint64_t seed = 1;
  int threads = 1;
};

// Each tree draws its bootstrap sample and split-level column subsets from its
// own seed derive_seed(seed, tree index), so results do not depend on threads.
inline EnsembleModel fit_random_forest(const Matrix& x, const Vector& y, const ForestParams& p) {
  if (p.n_trees < 1) throw Error("fit_random_forest: n_trees must be >= 1");
  if (x.rows() < 1 || x.rows() != y.size()) throw DimensionError("fit_random_forest: bad X/y shapes");
  EnsembleModel m;
  m.mode = EnsembleMode::bagged;
  m.trees.resize(static_cast<std::size_t>(p.n_trees));
  for (int t = 0; t < p.n_trees; ++t) m.tree_seeds.push_back(derive_seed(p.seed, static_cast<std::uint64_t>(t)));

  TreeParams tp;
  tp.min_node_size = p.min_node_size;
  tp.max_depth = p.max_depth;
  tp.feature_fraction = p.feature_fraction;
  const auto n = static_cast<std::size_t>(x.rows());

  auto fit_one = [&](std::size_t t) {
    Rng rng(m.tree_seeds[t]);
    std::vector<std::size_t> rows;
    if (p.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      rows.resize(n);
      for (auto& r : rows) r = pick(rng);
      std::sort(rows.begin(), rows.end());
    } else {
      rows = detail::all_rows(x.rows());
    }
    m.trees[t] = detail::TreeBuilder(x, y, tp, &rng).build(std::move(rows));
  };

  const int workers = std::clamp(p.threads, 1, p.n_trees);
  if (workers == 1) {
    for (std::size_t t = 0; t < m.trees.size(); ++t) fit_one(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < m.trees.size(); t = next++) fit_one(t);
      });
    for (auto& th : pool) th.join();
  }
  return m;
}

struct BoostParams {
  int n_trees = 200;
  double learning_rate = 0.05;
  int max_depth = 4;
  int min_node_size = 5;
  double leaf_l2 = 1.0;
};

struct BoostFit {
  EnsembleModel model;
  std::vector<double> train_mse;  // after each stage (index 0 = base score only)
};

inline BoostFit fit_gbt_traced(const Matrix& x, const Vector& y, const BoostParams& p) {
  if (!(p.learning_rate > 0.0 && p.learning_rate <= 1.0)) throw Error("fit_gbt: learning_rate must be in (0, 1]");
  if (!(p.leaf_l2 >= 0.0)) throw Error("fit_gbt: leaf_l2 must be >= 0");
  if (p.n_trees < 0) throw Error("fit_gbt: n_trees must be >= 0");
  if (x.rows() < 1 || x.rows() != y.size()) throw DimensionError("fit_gbt: bad X/y shapes");
  BoostFit fit;
  auto& m = fit.model;
  m.mode = EnsembleMode::boosted;
  m.base_score = y.mean();
  m.learning_rate = p.learning_rate;

  TreeParams tp;
  tp.min_node_size = p.min_node_size;
  tp.max_depth = p.max_depth;
  tp.leaf_l2 = p.leaf_l2;
  Vector pred = Vector::Constant(x.rows(), m.base_score);
  fit.train_mse.push_back((y - pred).squaredNorm() / static_cast<double>(y.size()));
  const auto rows = detail::all_rows(x.rows());
  for (int s = 0; s < p.n_trees; ++s) {
    Vector resid = y - pred;
    Tree t = detail::TreeBuilder(x, resid, tp, nullptr).build(rows);
    pred += p.learning_rate * t.predict(x);
    m.trees.push_back(std::move(t));
    fit.train_mse.push_back((y - pred).squaredNorm() / static_cast<double>(y.size()));
  }
  return fit;
}

inline EnsembleModel fit_gbt(const Matrix& x, const Vector& y, const BoostParams& p) {
  return fit_gbt_traced(x, y, p).model;
}

}  // namespace yieldbench
