#pragma once

// Model-agnostic Shapley attribution.
//
// The value of a coalition S for instance x is
//   v(S) = mean_{b in B} f(x_S, b_{not S})
// i.e. absent features are filled from each background row in turn and the
// predictions are averaged. exact_shapley() enumerates all 2^d coalitions;
// kernel_shap() solves the Shapley-kernel weighted least-squares problem with
// sum(phi) = f(x) - E_B[f] imposed exactly, enumerating coalitions when the
// budget allows and otherwise sampling them in complementary pairs.
//
// A model is any callable `Vector(const Matrix&)` that predicts row-wise.

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "yieldbench/common.hpp"
#include "yieldbench/dataio.hpp"
#include "yieldbench/metrics.hpp"

namespace yieldbench {

struct Attribution {
  std::vector<double> phi;
  double base_value = 0.0;  // E_B[f]
  double prediction = 0.0;  // f(x)
  std::size_t instance_ref = 0;
  std::size_t budget_used = 0;  // coalitions evaluated, including the empty and full ones
  bool exact = false;

  double efficiency_gap() const {
    return std::abs(base_value + std::accumulate(phi.begin(), phi.end(), 0.0) - prediction);
  }
};

using Coalition = std::vector<bool>;  // true = feature taken from the explained instance

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Shapley kernel weight of a proper, non-empty coalition of size s out of d.
inline double shapley_kernel_weight(int d, int s) {
  return (d - 1) / (binomial(d, s) * s * (d - s));
}

namespace detail {

// Evaluates v(S) for a list of coalitions, batching model calls.
template <class Model>
std::vector<double> coalition_values(const Model& f, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                     const Matrix& background, const std::vector<Coalition>& coalitions) {
  const Eigen::Index nb = background.rows();
  const Eigen::Index d = background.cols();
  const std::size_t per_chunk = std::max<std::size_t>(1, 16384 / static_cast<std::size_t>(nb));
  std::vector<double> out(coalitions.size());
  for (std::size_t start = 0; start < coalitions.size(); start += per_chunk) {
    const std::size_t end = std::min(coalitions.size(), start + per_chunk);
    Matrix batch(static_cast<Eigen::Index>(end - start) * nb, d);
    for (std::size_t c = start; c < end; ++c) {
      const auto base = static_cast<Eigen::Index>(c - start) * nb;
      batch.middleRows(base, nb) = background;
      for (Eigen::Index j = 0; j < d; ++j)
        if (coalitions[c][static_cast<std::size_t>(j)]) batch.block(base, j, nb, 1).setConstant(x(j));
    }
    const Vector pred = f(batch);
    for (std::size_t c = start; c < end; ++c)
      out[c] = pred.segment(static_cast<Eigen::Index>(c - start) * nb, nb).mean();
  }
  return out;
}

inline void check_background(const Matrix& background, Eigen::Index d) {
  if (background.rows() < 1) throw Error("shapley: background set is empty");
  if (background.cols() != d) throw DimensionError("shapley: background and instance dimensions differ");
}

}  // namespace detail

inline constexpr int kMaxExactFeatures = 13;

// Classical enumeration over all 2^d coalitions with weights |S|!(d-|S|-1)!/d!.
template <class Model>
Attribution exact_shapley(const Model& f, const Eigen::Ref<const Eigen::RowVectorXd>& x, const Matrix& background) {
  const int d = static_cast<int>(x.size());
  if (d < 1) throw Error("exact_shapley: no features");
  if (d > kMaxExactFeatures)
    throw Error("exact_shapley: " + std::to_string(d) + " features exceeds the enumeration cap of " +
                std::to_string(kMaxExactFeatures));
  detail::check_background(background, x.size());
  const std::size_t n_masks = std::size_t{1} << d;
  std::vector<Coalition> coalitions(n_masks, Coalition(static_cast<std::size_t>(d)));
  for (std::size_t m = 0; m < n_masks; ++m)
    for (int j = 0; j < d; ++j) coalitions[m][static_cast<std::size_t>(j)] = (m >> j) & 1U;
  const auto v = detail::coalition_values(f, x, background, coalitions);

  std::vector<double> w(static_cast<std::size_t>(d));
  for (int s = 0; s < d; ++s) w[static_cast<std::size_t>(s)] = 1.0 / (d * binomial(d - 1, s));

  Attribution a;
  a.phi.assign(static_cast<std::size_t>(d), 0.0);
  for (std::size_t m = 0; m < n_masks; ++m) {
    const int s = std::popcount(m);
    for (int j = 0; j < d; ++j) {
      if ((m >> j) & 1U) continue;
      a.phi[static_cast<std::size_t>(j)] += w[static_cast<std::size_t>(s)] * (v[m | (std::size_t{1} << j)] - v[m]);
    }
  }
  a.base_value = v[0];
  a.prediction = v[n_masks - 1];
  a.budget_used = n_masks;
  a.exact = true;
  return a;
}

struct KernelShapOptions {
  std::size_t budget = 0;  // coalition evaluations including empty and full; 0 = 2d + 2048
  std::uint64_t seed = 1;
  double l1_regularizer = 0.0;
};

// Coalitions and their regression weights for kernel SHAP.
struct CoalitionDesign {
  std::vector<Coalition> coalitions;  // proper, non-empty
  std::vector<double> weights;
  bool exhaustive = false;
};

// Sizes s and d - s are handled together, smallest first. A size pair is
// enumerated when the remaining budget covers all of its coalitions; the rest
// of the budget is spent on seeded draws of (size, subset) with the subset's
// complement added alongside. Enumerated coalitions carry their Shapley kernel
// weight; sampled ones share the kernel mass of the non-enumerated sizes in
// proportion to how often they were drawn.
inline CoalitionDesign design_coalitions(int d, std::size_t budget, std::uint64_t seed) {
  CoalitionDesign out;
  if (d < 2) {
    out.exhaustive = true;
    return out;
  }
  const std::size_t proper = budget - 2;
  if (d < 63 && (std::size_t{1} << d) <= budget) {
    const std::size_t n_masks = std::size_t{1} << d;
    for (std::size_t m = 1; m + 1 < n_masks; ++m) {
      Coalition c(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) c[static_cast<std::size_t>(j)] = (m >> j) & 1U;
      out.weights.push_back(shapley_kernel_weight(d, std::popcount(m)));
      out.coalitions.push_back(std::move(c));
    }
    out.exhaustive = true;
    return out;
  }

  const int n_sizes = d / 2;  // size pairs (s, d - s) for s = 1..floor(d/2)
  auto pair_count = [&](int s) { return binomial(d, s) * (2 * s == d ? 1.0 : 2.0); };
  auto pair_mass = [&](int s) { return pair_count(s) * shapley_kernel_weight(d, s); };

  double remaining = static_cast<double>(proper);
  int next_size = 1;
  for (; next_size <= n_sizes; ++next_size) {
    double mass_left = 0.0;
    for (int s = next_size; s <= n_sizes; ++s) mass_left += pair_mass(s);
    const double share = pair_mass(next_size) / mass_left * remaining;
    if (share + 1e-8 < pair_count(next_size) || pair_count(next_size) > remaining) break;
    // Enumerate every subset of this size (and its complement).
    std::vector<int> idx(static_cast<std::size_t>(next_size));
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
      Coalition c(static_cast<std::size_t>(d), false);
      for (int j : idx) c[static_cast<std::size_t>(j)] = true;
      out.weights.push_back(shapley_kernel_weight(d, next_size));
      out.coalitions.push_back(c);
      if (2 * next_size != d) {
        c.flip();
        out.weights.push_back(shapley_kernel_weight(d, next_size));
        out.coalitions.push_back(std::move(c));
      }
      int k = next_size - 1;
      while (k >= 0 && idx[static_cast<std::size_t>(k)] == d - next_size + k) --k;
      if (k < 0) break;
      ++idx[static_cast<std::size_t>(k)];
      for (int t = k + 1; t < next_size; ++t) idx[static_cast<std::size_t>(t)] = idx[static_cast<std::size_t>(t - 1)] + 1;
    }
    remaining -= pair_count(next_size);
  }
  if (next_size > n_sizes) {
    out.exhaustive = true;
    return out;
  }

  std::vector<double> size_prob;
  double sampled_mass = 0.0;
  for (int s = next_size; s <= n_sizes; ++s) {
    size_prob.push_back(pair_mass(s));
    sampled_mass += pair_mass(s);
  }
  std::discrete_distribution<int> pick_size(size_prob.begin(), size_prob.end());
  Rng rng(seed);
  std::map<Coalition, std::size_t> drawn;  // coalition -> index in `order`
  std::vector<Coalition> order;
  std::vector<double> counts;
  double total_draws = 0.0;
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  auto add = [&](Coalition c) {
    total_draws += 1.0;
    auto it = drawn.find(c);
    if (it != drawn.end()) {
      counts[it->second] += 1.0;
      return;
    }
    drawn.emplace(c, order.size());
    order.push_back(std::move(c));
    counts.push_back(1.0);
  };
  const std::size_t target = static_cast<std::size_t>(remaining);
  const std::size_t max_draws = 100 * std::max<std::size_t>(target, 1);
  for (std::size_t draw = 0; draw < max_draws && order.size() + 1 < target + 1; ++draw) {
    const int s = next_size + pick_size(rng);
    for (int k = 0; k < s; ++k) {
      std::uniform_int_distribution<int> u(k, d - 1);
      std::swap(perm[static_cast<std::size_t>(k)], perm[static_cast<std::size_t>(u(rng))]);
    }
    Coalition c(static_cast<std::size_t>(d), false);
    for (int k = 0; k < s; ++k) c[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = true;
    if (2 * s != d) {
      if (order.size() + 2 > target && !drawn.contains(c)) break;
      Coalition comp = c;
      comp.flip();
      add(std::move(c));
      add(std::move(comp));
    } else {
      add(std::move(c));
    }
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.coalitions.push_back(std::move(order[k]));
    out.weights.push_back(sampled_mass * counts[k] / total_draws);
  }
  return out;
}

namespace detail {

// Weighted lasso by cyclic coordinate descent on sqrt(w)-scaled rows:
//   minimize 1/2 sum_i w_i (y_i - a_i' phi)^2 + lambda ||phi||_1
inline Vector weighted_lasso(const Matrix& a, const Vector& y, const Vector& w, double lambda) {
  const Vector sw = w.array().sqrt();
  const Matrix as = a.array().colwise() * sw.array();
  Vector resid = y.array() * sw.array();
  Vector phi = Vector::Zero(a.cols());
  const Vector col_sq = as.colwise().squaredNorm().transpose();
  for (int it = 0; it < 10000; ++it) {
    double change = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (col_sq(j) == 0.0) continue;
      const double old = phi(j);
      const double rho = as.col(j).dot(resid) + col_sq(j) * old;
      const double z = rho > lambda ? rho - lambda : (rho < -lambda ? rho + lambda : 0.0);
      const double next = z / col_sq(j);
      if (next != old) {
        resid -= (next - old) * as.col(j);
        phi(j) = next;
        change = std::max(change, std::abs(next - old));
      }
    }
    if (change < 1e-12) break;
  }
  return phi;
}

}  // namespace detail

template <class Model>
Attribution kernel_shap(const Model& f, const Eigen::Ref<const Eigen::RowVectorXd>& x, const Matrix& background,
                        const KernelShapOptions& opt = {}) {
  const int d = static_cast<int>(x.size());
  if (d < 1) throw Error("kernel_shap: no features");
  detail::check_background(background, x.size());
  const std::size_t budget = opt.budget ? opt.budget : static_cast<std::size_t>(2 * d + 2048);
  if (budget < static_cast<std::size_t>(d) + 2)
    throw Error("kernel_shap: budget " + std::to_string(budget) + " < d + 2 = " + std::to_string(d + 2) +
                " leaves the regression underdetermined");
  if (!(opt.l1_regularizer >= 0.0)) throw Error("kernel_shap: regularizer must be >= 0");

  auto design = design_coalitions(d, budget, opt.seed);
  std::vector<Coalition> evals = design.coalitions;
  evals.emplace_back(static_cast<std::size_t>(d), false);
  evals.emplace_back(static_cast<std::size_t>(d), true);
  const auto v = detail::coalition_values(f, x, background, evals);

  Attribution a;
  a.base_value = v[v.size() - 2];
  a.prediction = v.back();
  a.budget_used = evals.size();
  a.exact = design.exhaustive;
  const double delta = a.prediction - a.base_value;
  a.phi.assign(static_cast<std::size_t>(d), 0.0);
  if (d == 1) {
    a.phi[0] = delta;
    return a;
  }

  // Eliminate the last feature: phi_last = delta - sum(others).
  const std::size_t m = design.coalitions.size();
  const auto last = static_cast<std::size_t>(d - 1);
  Matrix z(static_cast<Eigen::Index>(m), d - 1);
  Vector target(static_cast<Eigen::Index>(m));
  Vector w(static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < m; ++k) {
    const auto& c = design.coalitions[k];
    const double zl = c[last] ? 1.0 : 0.0;
    for (int j = 0; j < d - 1; ++j) z(static_cast<Eigen::Index>(k), j) = (c[static_cast<std::size_t>(j)] ? 1.0 : 0.0) - zl;
    target(static_cast<Eigen::Index>(k)) = v[k] - a.base_value - zl * delta;
    w(static_cast<Eigen::Index>(k)) = design.weights[k];
  }
  Vector phi;
  if (opt.l1_regularizer > 0.0) {
    phi = detail::weighted_lasso(z, target, w, opt.l1_regularizer);
  } else {
    const Vector sw = w.array().sqrt();
    const Matrix zs = z.array().colwise() * sw.array();
    const Vector ts = target.array() * sw.array();
    phi = zs.completeOrthogonalDecomposition().solve(ts);
  }
  double rest = 0.0;
  for (int j = 0; j < d - 1; ++j) {
    a.phi[static_cast<std::size_t>(j)] = phi(j);
    rest += phi(j);
  }
  a.phi[last] = delta - rest;
  return a;
}

// Uniform sample of background rows without replacement, returned sorted.
inline std::vector<std::size_t> sample_background(std::span<const std::size_t> pool, std::size_t size,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> rows(pool.begin(), pool.end());
  if (size >= rows.size()) return rows;
  Rng rng(seed);
  for (std::size_t k = 0; k < size; ++k) {
    std::uniform_int_distribution<std::size_t> u(k, rows.size() - 1);
    std::swap(rows[k], rows[u(rng)]);
  }
  rows.resize(size);
  std::sort(rows.begin(), rows.end());
  return rows;
}

// ---------------------------------------------------------------------------
// Aggregation and presentation

struct ImportanceEntry {
  std::size_t feature = 0;
  std::string name;
  double mean_abs_phi = 0.0;
  int sign = 0;  // sign of corr(feature value, phi) across instances; 0 if undefined
};

using ImportanceRanking = std::vector<ImportanceEntry>;

// Mean |phi| per feature, descending (ties to the lower feature index).
// `values` holds the explained instances' feature values, one row per attribution.
inline ImportanceRanking global_importance(std::span<const Attribution> attributions, const Matrix& values,
                                           std::span<const std::string> names, std::size_t top_k = 0) {
  if (attributions.empty()) throw Error("global_importance: no attributions");
  const std::size_t d = attributions[0].phi.size();
  if (static_cast<std::size_t>(values.rows()) != attributions.size() || static_cast<std::size_t>(values.cols()) != d ||
      names.size() != d)
    throw DimensionError("global_importance: attributions, values and names disagree");
  ImportanceRanking out(d);
  std::vector<double> phi_col(attributions.size()), val_col(attributions.size());
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < attributions.size(); ++i) {
      if (attributions[i].phi.size() != d) throw DimensionError("global_importance: ragged attributions");
      phi_col[i] = attributions[i].phi[j];
      val_col[i] = values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      s += std::abs(phi_col[i]);
    }
    bool undefined = false;
    const double r = pearson(val_col, phi_col, &undefined);
    out[j] = {j, names[j], s / static_cast<double>(attributions.size()), undefined ? 0 : (r > 0) - (r < 0)};
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.mean_abs_phi > b.mean_abs_phi; });
  if (top_k > 0 && top_k < out.size()) out.resize(top_k);
  return out;
}

struct ForceItem {
  std::size_t feature = 0;
  std::string name;
  double value = 0.0;
  double phi = 0.0;
  bool positive = false;
};

struct ForcePlotData {
  double base_value = 0.0;
  double output = 0.0;  // base + sum(phi)
  std::vector<ForceItem> items;  // |phi| descending
};

inline ForcePlotData force_plot_data(const Attribution& a, std::span<const double> values,
                                     std::span<const std::string> names) {
  if (values.size() != a.phi.size() || names.size() != a.phi.size())
    throw DimensionError("force_plot_data: attribution, values and names disagree");
  ForcePlotData out;
  out.base_value = a.base_value;
  out.output = a.base_value;
  for (std::size_t j = 0; j < a.phi.size(); ++j) {
    out.items.push_back({j, names[j], values[j], a.phi[j], a.phi[j] > 0.0});
    out.output += a.phi[j];
  }
  std::stable_sort(out.items.begin(), out.items.end(),
                   [](const auto& x, const auto& y) { return std::abs(x.phi) > std::abs(y.phi); });
  return out;
}

// ---------------------------------------------------------------------------
// Feature selection

// Column indices of the top ceil(p * d) ranked features, in table order.
inline std::vector<std::size_t> select_top_fraction(const ImportanceRanking& ranking, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("select_features: fraction must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ranking.size()) - 1e-9));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < keep && k < ranking.size(); ++k) out.push_back(ranking[k].feature);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::size_t> select_group(std::span<const FeatureDescriptor> descriptors, FeatureGroup group) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < descriptors.size(); ++j)
    if (descriptors[j].group == group) out.push_back(j);
  return out;
}

// A table with only the given columns.
inline FeatureTable restrict_columns(const FeatureTable& t, std::span<const std::size_t> keep) {
  FeatureTable out;
  out.region_id = t.region_id;
  out.year = t.year;
  out.padded = t.padded;
  out.target = t.target;
  out.rows.resize(t.rows.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.descriptors.push_back(t.descriptors[keep[k]]);
    out.rows.col(static_cast<Eigen::Index>(k)) = t.rows.col(static_cast<Eigen::Index>(keep[k]));
  }
  return out;
}

// Same columns, but every column not in `keep` set to `fill` (0 = the training
// mean on z-scored data). Used for models with a fixed input layout.
inline Matrix mask_columns(const Matrix& x, std::span<const std::size_t> keep, double fill = 0.0) {
  std::vector<bool> kept(static_cast<std::size_t>(x.cols()), false);
  for (auto k : keep) kept.at(k) = true;
  Matrix out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (!kept[static_cast<std::size_t>(j)]) out.col(j).setConstant(fill);
  return out;
}

}  // namespace yieldbench
