#pragma once

// Evaluation metrics, residual normality, hexagonal binning of
// (truth, prediction) pairs and feature correlation matrices.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "yieldbench/common.hpp"
#include "yieldbench/dataio.hpp"

namespace yieldbench {

struct MetricSet {
  double mae = 0.0;
  double rmse = 0.0;
  // sqrt(1 - SSE/SST). Not Pearson's r: it is clamped to 0 (and flagged) when
  // SSE > SST, where the square root would be imaginary.
  double sqrt_r2 = 0.0;
  double pearson_r = 0.0;
  double r_squared = 0.0;
  double sse = 0.0;
  double sst = 0.0;
  std::size_t n = 0;
  bool sqrt_r2_clamped = false;
  bool pearson_undefined = false;  // constant truth or prediction; reported as 0
  bool constant_truth = false;
};

inline double pearson(std::span<const double> a, std::span<const double> b, bool* undefined = nullptr) {
  if (a.size() != b.size()) throw DimensionError("pearson: length mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0 || a.size() < 2) {
    if (undefined) *undefined = true;
    return 0.0;
  }
  if (undefined) *undefined = false;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline MetricSet evaluate(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw DimensionError("evaluate: prediction and truth lengths differ");
  if (truth.empty()) throw Error("evaluate: no samples");
  MetricSet m;
  m.n = truth.size();
  const double n = static_cast<double>(m.n);
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= n;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) {
    const double e = truth[i] - pred[i];
    abs_sum += std::abs(e);
    m.sse += e * e;
    m.sst += (truth[i] - mean) * (truth[i] - mean);
  }
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(m.sse / n);
  m.constant_truth = m.sst == 0.0;
  if (m.constant_truth) {
    m.sqrt_r2 = 0.0;
    m.sqrt_r2_clamped = true;
    m.r_squared = 0.0;
  } else {
    const double ratio = m.sse / m.sst;
    m.r_squared = 1.0 - ratio;
    m.sqrt_r2_clamped = ratio > 1.0;
    m.sqrt_r2 = m.sqrt_r2_clamped ? 0.0 : std::sqrt(1.0 - ratio);
  }
  m.pearson_r = pearson(pred, truth, &m.pearson_undefined);
  return m;
}

inline MetricSet evaluate(const Vector& pred, const Vector& truth) {
  return evaluate(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                  std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())));
}

// ---------------------------------------------------------------------------
// Percentage error |A - P| / A * 100

struct PercentageErrors {
  std::vector<double> values;  // NaN where excluded
  std::vector<bool> excluded;  // actual == 0
  std::size_t n_excluded = 0;
};

inline double percentage_error(double actual, double predicted) {
  if (actual == 0.0) throw Error("percentage_error: actual value is zero");
  return std::abs((actual - predicted) / actual) * 100.0;
}

inline PercentageErrors percentage_errors(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw DimensionError("percentage_errors: length mismatch");
  PercentageErrors out;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool bad = actual[i] == 0.0;
    out.excluded.push_back(bad);
    out.values.push_back(bad ? std::numeric_limits<double>::quiet_NaN() : percentage_error(actual[i], predicted[i]));
    out.n_excluded += bad ? 1 : 0;
  }
  return out;
}

struct RegionError {
  std::string region_id;
  double percentage_error = 0.0;  // mean over the region's instances
  std::size_t count = 0;
};

// Per-region mean percentage error, ordered by region id. Excluded instances
// (actual == 0) do not contribute; regions with no valid instance are omitted.
inline std::vector<RegionError> per_region_error(std::span<const std::string> regions, std::span<const double> actual,
                                                 std::span<const double> predicted) {
  if (regions.size() != actual.size()) throw DimensionError("per_region_error: length mismatch");
  auto pe = percentage_errors(actual, predicted);
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (pe.excluded[i]) continue;
    auto& a = acc[regions[i]];
    a.first += pe.values[i];
    ++a.second;
  }
  std::vector<RegionError> out;
  for (const auto& [r, a] : acc) out.push_back({r, a.first / static_cast<double>(a.second), a.second});
  return out;
}

// ---------------------------------------------------------------------------
// Anderson-Darling normality test, mean and variance estimated from the sample

struct NormalityTest {
  double a2 = 0.0;       // raw statistic
  double a2_star = 0.0;  // A^2 (1 + 0.75/n + 2.25/n^2)
  double p_value = 0.0;
  std::string band;
  std::size_t n = 0;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline std::string p_value_band(double p) {
  if (p < 0.001) return "p<0.001";
  if (p < 0.01) return "0.001<=p<0.01";
  if (p < 0.05) return "0.01<=p<0.05";
  if (p < 0.10) return "0.05<=p<0.10";
  return "p>=0.10";
}

inline NormalityTest anderson_darling_normality(std::span<const double> residuals) {
  const std::size_t n = residuals.size();
  if (n < 8) throw Error("anderson_darling: need at least 8 residuals");
  std::vector<double> x(residuals.begin(), residuals.end());
  std::sort(x.begin(), x.end());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw Error("anderson_darling: residuals have zero variance");

  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = normal_cdf((x[i] - mean) / sd);
    const double upper_tail = normal_cdf(-(x[n - 1 - i] - mean) / sd);
    s += (2.0 * static_cast<double>(i) + 1.0) * (std::log(lo) + std::log(upper_tail));
  }
  NormalityTest t;
  t.n = n;
  const double nn = static_cast<double>(n);
  t.a2 = -nn - s / nn;
  t.a2_star = t.a2 * (1.0 + 0.75 / nn + 2.25 / (nn * nn));
  const double a = t.a2_star;
  double p;
  if (a > 13.0)
    p = 0.0;
  else if (a >= 0.6)
    p = std::exp(1.2937 - 5.709 * a + 0.0186 * a * a);
  else if (a >= 0.34)
    p = std::exp(0.9177 - 4.279 * a - 1.38 * a * a);
  else if (a >= 0.2)
    p = 1.0 - std::exp(-8.318 + 42.796 * a - 59.938 * a * a);
  else
    p = 1.0 - std::exp(-13.436 + 101.14 * a - 223.73 * a * a);
  t.p_value = std::clamp(p, 0.0, 1.0);
  t.band = p_value_band(t.p_value);
  return t;
}

// ---------------------------------------------------------------------------
// Pointy-top hexagonal binning in axial coordinates (q, r)

struct HexBin {
  int q = 0;
  int r = 0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t count = 0;
  bool operator==(const HexBin&) const = default;
};

inline std::pair<int, int> hex_axial(double x, double y, double size) {
  const double fq = (std::numbers::sqrt3 / 3.0 * x - y / 3.0) / size;
  const double fr = (2.0 / 3.0 * y) / size;
  const double fs = -fq - fr;
  double q = std::round(fq), r = std::round(fr), s = std::round(fs);
  const double dq = std::abs(q - fq), dr = std::abs(r - fr), ds = std::abs(s - fs);
  if (dq > dr && dq > ds)
    q = -r - s;
  else if (dr > ds)
    r = -q - s;
  return {static_cast<int>(q), static_cast<int>(r)};
}

inline std::pair<double, double> hex_center(int q, int r, double size) {
  return {size * std::numbers::sqrt3 * (q + r / 2.0), size * 1.5 * r};
}

// x = truth, y = prediction. Bins are ordered by (r, q).
inline std::vector<HexBin> hexbin(std::span<const double> pred, std::span<const double> truth, double hex_size) {
  if (!(hex_size > 0.0)) throw Error("hexbin: hex_size must be > 0");
  if (pred.size() != truth.size()) throw DimensionError("hexbin: length mismatch");
  std::map<std::pair<int, int>, std::size_t> counts;  // keyed (r, q)
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto [q, r] = hex_axial(truth[i], pred[i], hex_size);
    ++counts[{r, q}];
  }
  std::vector<HexBin> out;
  for (const auto& [key, c] : counts) {
    auto [cx, cy] = hex_center(key.second, key.first, hex_size);
    out.push_back({key.second, key.first, cx, cy, c});
  }
  return out;
}

inline double default_hex_size(std::span<const double> truth) {
  if (truth.empty()) return 1.0;
  auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
  const double range = *hi - *lo;
  return range > 0.0 ? range / 20.0 : 1.0;
}

// ---------------------------------------------------------------------------
// Pearson correlation matrix

struct CorrelationMatrix {
  std::vector<std::string> names;
  Matrix values;
  std::vector<bool> constant;  // rows/cols reported as 0
};

inline CorrelationMatrix correlation_matrix(const Matrix& x, std::vector<std::string> names) {
  if (x.rows() < 2) throw Error("correlation_matrix: need at least 2 rows");
  if (static_cast<std::size_t>(x.cols()) != names.size()) throw DimensionError("correlation_matrix: names mismatch");
  CorrelationMatrix cm;
  cm.names = std::move(names);
  const Eigen::Index d = x.cols();
  Matrix centered = x.rowwise() - x.colwise().mean();
  Vector norms = centered.colwise().norm().transpose();
  cm.constant.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    bool constant = true;
    for (Eigen::Index i = 1; i < x.rows() && constant; ++i) constant = x(i, j) == x(0, j);
    cm.constant[static_cast<std::size_t>(j)] = constant;
  }
  cm.values = Matrix::Zero(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    if (cm.constant[static_cast<std::size_t>(a)]) continue;
    cm.values(a, a) = 1.0;
    for (Eigen::Index b = a + 1; b < d; ++b) {
      if (cm.constant[static_cast<std::size_t>(b)]) continue;
      const double r = std::clamp(centered.col(a).dot(centered.col(b)) / (norms(a) * norms(b)), -1.0, 1.0);
      cm.values(a, b) = cm.values(b, a) = r;
    }
  }
  return cm;
}

// Optionally collapses each weather variable to its mean over weeks first.
inline CorrelationMatrix correlation_matrix(const FeatureTable& t, bool average_weather_weeks = true) {
  if (!average_weather_weeks) return correlation_matrix(t.rows, t.feature_names());
  std::vector<std::string> names;
  std::vector<Vector> cols;
  std::map<WeatherVar, std::pair<Vector, int>> weather;
  for (std::size_t j = 0; j < t.d(); ++j) {
    const auto& d = t.descriptors[j];
    const auto col = t.rows.col(static_cast<Eigen::Index>(j));
    if (d.group == FeatureGroup::weather) {
      auto& acc = weather[*d.weather_var];
      if (acc.second == 0) acc.first = Vector::Zero(t.rows.rows());
      acc.first += col;
      ++acc.second;
    } else {
      names.push_back(d.name);
      cols.emplace_back(col);
    }
  }
  for (auto v : kWeatherVars) {
    auto it = weather.find(v);
    if (it == weather.end()) continue;
    names.emplace_back(to_string(v));
    cols.push_back(it->second.first / it->second.second);
  }
  Matrix m(t.rows.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = cols[j];
  return correlation_matrix(m, std::move(names));
}

}  // namespace yieldbench
