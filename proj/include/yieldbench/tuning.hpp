#pragma once

// K-fold cross-validation and grid / randomized hyperparameter search.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "yieldbench/common.hpp"

namespace yieldbench {

using ParamMap = std::map<std::string, double>;

struct Domain {
  enum class Kind { grid, uniform, log_uniform, int_uniform };
  Kind kind = Kind::grid;
  std::vector<double> values;  // grid
  double low = 0.0, high = 0.0;

  static Domain grid(std::vector<double> v) { return {Kind::grid, std::move(v), 0, 0}; }
  static Domain uniform(double lo, double hi) { return {Kind::uniform, {}, lo, hi}; }
  static Domain log_uniform(double lo, double hi) { return {Kind::log_uniform, {}, lo, hi}; }
  static Domain int_uniform(double lo, double hi) { return {Kind::int_uniform, {}, lo, hi}; }

  void validate(const std::string& name) const {
    if (kind == Kind::grid) {
      if (values.empty()) throw Error("search space: grid for " + name + " is empty");
      return;
    }
    if (!std::isfinite(low) || !std::isfinite(high) || low > high)
      throw Error("search space: bad bounds for " + name);
    if (kind == Kind::log_uniform && !(low > 0.0)) throw Error("search space: log-uniform bounds must be > 0: " + name);
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::grid: {
        std::uniform_int_distribution<std::size_t> u(0, values.size() - 1);
        return values[u(rng)];
      }
      case Kind::uniform: return std::uniform_real_distribution<double>(low, high)(rng);
      case Kind::log_uniform:
        return std::exp(std::uniform_real_distribution<double>(std::log(low), std::log(high))(rng));
      case Kind::int_uniform:
        return static_cast<double>(std::uniform_int_distribution<long long>(static_cast<long long>(std::ceil(low)),
                                                                            static_cast<long long>(std::floor(high)))(rng));
    }
    return 0.0;
  }
};

using SearchSpace = std::map<std::string, Domain>;

// Seeded permutation cut into k groups whose sizes differ by at most one.
inline std::vector<int> make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw Error("make_folds: k must be >= 2");
  if (n < static_cast<std::size_t>(k)) throw Error("make_folds: fewer rows than folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return fold;
}

// Fits on (x_train, y_train) and predicts x_valid. The seed is per trial.
using FitPredict =
    std::function<Vector(const ParamMap&, const Matrix& x_train, const Vector& y_train, const Matrix& x_valid,
                         std::uint64_t seed)>;

struct TrialRecord {
  std::size_t index = 0;
  ParamMap config;
  std::vector<double> fold_rmse;
  double mean_rmse = 0.0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

struct SearchResult {
  TrialRecord best;
  std::vector<TrialRecord> trials;
  bool grid = false;
};

inline TrialRecord cross_validate(const FitPredict& fit_predict, const ParamMap& config, const Matrix& x,
                                  const Vector& y, std::span<const int> folds, std::uint64_t seed) {
  if (folds.size() != static_cast<std::size_t>(x.rows())) throw DimensionError("cross_validate: folds length mismatch");
  const int k = folds.empty() ? 0 : *std::max_element(folds.begin(), folds.end()) + 1;
  TrialRecord t;
  t.config = config;
  t.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? va : tr).push_back(i);
    if (tr.empty() || va.empty()) throw Error("cross_validate: empty fold");
    const Vector pred = fit_predict(config, select_rows(x, tr), select_rows(y, tr), select_rows(x, va), seed);
    const Vector yv = select_rows(y, va);
    t.fold_rmse.push_back(std::sqrt((pred - yv).squaredNorm() / static_cast<double>(va.size())));
  }
  t.mean_rmse = std::accumulate(t.fold_rmse.begin(), t.fold_rmse.end(), 0.0) / static_cast<double>(k);
  t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

// Throws if any row belongs to the held-out year or later.
inline void check_no_test_rows(std::span<const int> row_years, int test_year) {
  for (int y : row_years)
    if (y >= test_year)
      throw Error("search: row from year " + std::to_string(y) + " leaks into tuning for test year " +
                  std::to_string(test_year));
}

// Grid mode (every domain a grid) enumerates the Cartesian product in
// lexicographic order of parameter names; otherwise `budget` configurations
// are drawn. Trial i uses seed derive_seed(seed, i). Best = lowest mean CV
// RMSE, ties to the earlier trial.
inline SearchResult search(const FitPredict& fit_predict, const SearchSpace& space, std::size_t budget,
                           const Matrix& x, const Vector& y, std::span<const int> folds, std::uint64_t seed) {
  if (space.empty()) throw Error("search: empty search space");
  if (budget < 1) throw Error("search: budget must be >= 1");
  for (const auto& [name, dom] : space) dom.validate(name);

  SearchResult res;
  res.grid = std::all_of(space.begin(), space.end(), [](const auto& kv) { return kv.second.kind == Domain::Kind::grid; });
  std::vector<ParamMap> configs;
  if (res.grid) {
    configs.emplace_back();
    for (const auto& [name, dom] : space) {
      std::vector<ParamMap> next;
      for (const auto& c : configs)
        for (double v : dom.values) {
          auto e = c;
          e[name] = v;
          next.push_back(std::move(e));
        }
      configs = std::move(next);
    }
  } else {
    Rng rng(seed);
    for (std::size_t i = 0; i < budget; ++i) {
      ParamMap c;
      for (const auto& [name, dom] : space) c[name] = dom.sample(rng);
      configs.push_back(std::move(c));
    }
  }

  for (std::size_t i = 0; i < configs.size(); ++i) {
    auto t = cross_validate(fit_predict, configs[i], x, y, folds, derive_seed(seed, i));
    t.index = i;
    if (res.trials.empty() || t.mean_rmse < res.best.mean_rmse) res.best = t;
    res.trials.push_back(std::move(t));
  }
  return res;
}

}  // namespace yieldbench
