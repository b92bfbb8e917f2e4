#pragma once

// Dataset schema, CSV ingestion, weekly aggregation of daily weather, z-score
// scaling, temporal hold-out splitting and the synthetic benchmark generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "yieldbench/common.hpp"

namespace yieldbench {

enum class FeatureGroup { weather, soil, phenology };

enum class WeatherVar { tmin, tmax, precip, radiation, rh, wind };

inline constexpr std::array<WeatherVar, 6> kWeatherVars = {
    WeatherVar::tmin, WeatherVar::tmax,  WeatherVar::precip,
    WeatherVar::radiation, WeatherVar::rh, WeatherVar::wind};

inline constexpr std::size_t kNumWeatherVars = kWeatherVars.size();

inline constexpr std::array<std::string_view, 3> kPhenologyColumns = {"sowing_doy", "flowering_doy",
                                                                      "harvest_doy"};
inline constexpr std::array<std::string_view, 4> kSoilColumns = {"LL", "DUL", "SAT", "BD"};
inline constexpr std::size_t kNumStaticFeatures = kPhenologyColumns.size() + kSoilColumns.size();

inline constexpr int kDefaultWeeks = 45;

inline std::string_view to_string(WeatherVar v) {
  switch (v) {
    case WeatherVar::tmin: return "tmin";
    case WeatherVar::tmax: return "tmax";
    case WeatherVar::precip: return "precip";
    case WeatherVar::radiation: return "radiation";
    case WeatherVar::rh: return "rh";
    case WeatherVar::wind: return "wind";
  }
  return "?";
}

inline std::string_view to_string(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::weather: return "weather";
    case FeatureGroup::soil: return "soil";
    case FeatureGroup::phenology: return "phenology";
  }
  return "?";
}

inline std::optional<FeatureGroup> parse_group(std::string_view s) {
  if (s == "weather") return FeatureGroup::weather;
  if (s == "soil") return FeatureGroup::soil;
  if (s == "phenology") return FeatureGroup::phenology;
  return std::nullopt;
}

struct FeatureDescriptor {
  std::string name;
  FeatureGroup group = FeatureGroup::soil;
  std::optional<WeatherVar> weather_var;
  std::optional<int> week_index;  // 1-based

  bool operator==(const FeatureDescriptor&) const = default;
};

inline std::string weather_column_name(WeatherVar v, int week) {
  return std::string(to_string(v)) + "_w" + std::to_string(week);
}

// Column layout used by the CSV format: phenology, soil, then weather
// variable-major ({var}_w1..{var}_wW for each of the six variables).
inline std::vector<FeatureDescriptor> default_schema(int weeks = kDefaultWeeks) {
  if (weeks < 1) throw Error("schema: weeks must be >= 1");
  std::vector<FeatureDescriptor> out;
  for (auto name : kPhenologyColumns) out.push_back({std::string(name), FeatureGroup::phenology, {}, {}});
  for (auto name : kSoilColumns) out.push_back({std::string(name), FeatureGroup::soil, {}, {}});
  for (auto v : kWeatherVars)
    for (int w = 1; w <= weeks; ++w) out.push_back({weather_column_name(v, w), FeatureGroup::weather, v, w});
  return out;
}

inline void validate_descriptors(std::span<const FeatureDescriptor> descriptors) {
  std::set<std::string_view> seen;
  for (const auto& d : descriptors) {
    if (!seen.insert(d.name).second) throw SchemaError(d.name, "duplicate feature name: " + d.name);
    bool weather = d.group == FeatureGroup::weather;
    if (weather != d.weather_var.has_value() || weather != d.week_index.has_value())
      throw SchemaError(d.name, "feature " + d.name +
                                    ": weather features need weather_var and week_index, others neither");
    if (d.week_index && *d.week_index < 1) throw SchemaError(d.name, "week index must be >= 1: " + d.name);
  }
}

struct FeatureTable {
  std::vector<FeatureDescriptor> descriptors;
  Matrix rows;  // n x d
  Vector target;
  std::vector<std::string> region_id;
  std::vector<int> year;
  std::vector<bool> padded;  // season shorter than the weekly window; last mean repeated

  std::size_t n() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t d() const { return descriptors.size(); }

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t j = 0; j < descriptors.size(); ++j)
      if (descriptors[j].name == name) return j;
    return std::nullopt;
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    out.reserve(descriptors.size());
    for (const auto& d : descriptors) out.push_back(d.name);
    return out;
  }

  FeatureTable subset_rows(std::span<const std::size_t> idx) const {
    FeatureTable t;
    t.descriptors = descriptors;
    t.rows = select_rows(rows, idx);
    t.target = select_rows(target, idx);
    for (auto i : idx) {
      t.region_id.push_back(region_id[i]);
      t.year.push_back(year[i]);
      t.padded.push_back(padded.empty() ? false : padded[i]);
    }
    return t;
  }

  void validate() const {
    validate_descriptors(descriptors);
    if (static_cast<std::size_t>(rows.cols()) != descriptors.size())
      throw DimensionError("table: column count does not match descriptors");
    if (static_cast<std::size_t>(target.size()) != n() || region_id.size() != n() || year.size() != n())
      throw DimensionError("table: per-row vectors have inconsistent lengths");
    if (!rows.allFinite() || !target.allFinite()) throw Error("table: non-finite value");
    std::set<std::pair<std::string, int>> keys;
    for (std::size_t i = 0; i < n(); ++i)
      if (!keys.insert({region_id[i], year[i]}).second)
        throw DuplicateError("duplicate (region, year): (" + region_id[i] + ", " + std::to_string(year[i]) + ")");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  for (auto& s : out) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace detail

// Reads a table. Columns are matched by header name (order-independent); extra
// columns are ignored. Data rows are numbered from 1 in error messages.
inline FeatureTable read_table(std::istream& in, std::vector<FeatureDescriptor> schema) {
  validate_descriptors(schema);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("", "csv: empty input");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
  auto header = detail::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < header.size(); ++k) pos.emplace(header[k], k);

  auto locate = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw SchemaError(name, "csv: missing column \"" + name + "\"");
    return it->second;
  };
  const std::size_t region_col = locate("region_id");
  const std::size_t year_col = locate("year");
  const std::size_t yield_col = locate("yield_t_ha");
  std::vector<std::size_t> feature_cols;
  for (const auto& d : schema) feature_cols.push_back(locate(d.name));

  FeatureTable t;
  t.descriptors = std::move(schema);
  std::vector<std::vector<double>> data;
  std::vector<double> target;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(row, "", "csv row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                    " cells, got " + std::to_string(cells.size()));
    auto number = [&](std::size_t col) {
      double v;
      if (!parse_double(cells[col], v) || !std::isfinite(v))
        throw ParseError(row, header[col],
                         "csv row " + std::to_string(row) + ", column \"" + header[col] + "\": not a number: \"" +
                             cells[col] + "\"");
      return v;
    };
    double y = number(year_col);
    if (y != std::floor(y)) throw ParseError(row, "year", "csv row " + std::to_string(row) + ": year not an integer");
    t.region_id.push_back(cells[region_col]);
    t.year.push_back(static_cast<int>(y));
    target.push_back(number(yield_col));
    std::vector<double> values;
    values.reserve(feature_cols.size());
    for (auto c : feature_cols) values.push_back(number(c));
    data.push_back(std::move(values));
  }
  t.rows.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(t.descriptors.size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data[i].size(); ++j)
      t.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i][j];
  t.target = to_vector(target);
  t.padded.assign(data.size(), false);
  t.validate();
  return t;
}

inline FeatureTable load_table(const std::string& path, std::vector<FeatureDescriptor> schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_table(in, std::move(schema));
}

inline void write_table(std::ostream& out, const FeatureTable& t) {
  out << "region_id,year,yield_t_ha";
  for (const auto& d : t.descriptors) out << ',' << d.name;
  out << '\n';
  for (std::size_t i = 0; i < t.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << t.region_id[i] << ',' << t.year[i] << ',' << format_double(t.target(r));
    for (Eigen::Index j = 0; j < t.rows.cols(); ++j) out << ',' << format_double(t.rows(r, j));
    out << '\n';
  }
}

inline void save_table(const std::string& path, const FeatureTable& t) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_table(out, t);
}

// ---------------------------------------------------------------------------
// Daily -> weekly aggregation

struct DailyWeatherSeries {
  std::array<std::vector<double>, kNumWeatherVars> values;  // indexed by WeatherVar
  int season_start_doy = 1;

  std::size_t length() const { return values[0].size(); }
};

struct WeeklyWeather {
  std::array<std::vector<double>, kNumWeatherVars> values;  // each of length W
  bool padded = false;
};

// Weekly means of a single daily sequence. Week k < W covers days 7(k-1)+1..7k,
// week W also absorbs trailing days; a partial final week counts as observed.
// Weeks beyond the observed span repeat the last observed mean and set `padded`.
inline std::vector<double> weekly_means(std::span<const double> daily, int weeks, bool* padded = nullptr) {
  if (daily.empty()) throw Error("aggregate: empty daily series");
  if (daily.size() < 7) throw Error("aggregate: daily series shorter than one week");
  if (weeks < 1) throw Error("aggregate: weeks must be >= 1");
  const std::size_t W = static_cast<std::size_t>(weeks);
  std::vector<double> out;
  out.reserve(W);
  for (std::size_t k = 0; k < W; ++k) {
    std::size_t begin = 7 * k;
    if (begin >= daily.size()) break;
    std::size_t end = (k + 1 == W) ? daily.size() : std::min(daily.size(), 7 * (k + 1));
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += daily[i];
    out.push_back(s / static_cast<double>(end - begin));
  }
  bool pad = out.size() < W;
  while (out.size() < W) out.push_back(out.back());
  if (padded) *padded = pad;
  return out;
}

inline WeeklyWeather aggregate_daily_to_weekly(const DailyWeatherSeries& series, int weeks) {
  const std::size_t len = series.length();
  for (const auto& v : series.values)
    if (v.size() != len) throw Error("aggregate: weather variables have unequal lengths");
  WeeklyWeather out;
  for (std::size_t v = 0; v < kNumWeatherVars; ++v) {
    bool pad = false;
    out.values[v] = weekly_means(series.values[v], weeks, &pad);
    out.padded = out.padded || pad;
  }
  return out;
}

// ---------------------------------------------------------------------------
// z-score scaling

struct ScalerParams {
  std::vector<double> mean;
  std::vector<double> stddev;  // population (divide by n)
  std::vector<bool> constant;  // exactly where stddev == 0
};

inline ScalerParams fit_scaler(const Matrix& x, std::span<const std::size_t> fit_rows) {
  if (fit_rows.empty()) throw Error("fit_scaler: no rows to fit on");
  const auto d = static_cast<std::size_t>(x.cols());
  ScalerParams p;
  p.mean.assign(d, 0.0);
  p.stddev.assign(d, 0.0);
  p.constant.assign(d, false);
  const double n = static_cast<double>(fit_rows.size());
  for (std::size_t j = 0; j < d; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    double s = 0.0;
    for (auto i : fit_rows) s += x(static_cast<Eigen::Index>(i), c);
    const double m = s / n;
    double ss = 0.0;
    bool all_equal = true;
    const double first = x(static_cast<Eigen::Index>(fit_rows[0]), c);
    for (auto i : fit_rows) {
      const double v = x(static_cast<Eigen::Index>(i), c);
      ss += (v - m) * (v - m);
      all_equal = all_equal && v == first;
    }
    p.mean[j] = all_equal ? first : m;
    p.stddev[j] = all_equal ? 0.0 : std::sqrt(ss / n);
    p.constant[j] = p.stddev[j] == 0.0;
  }
  return p;
}

inline ScalerParams fit_scaler(const FeatureTable& t, std::span<const std::size_t> fit_rows) {
  return fit_scaler(t.rows, fit_rows);
}

inline Matrix apply_scaler(const Matrix& x, const ScalerParams& p) {
  if (static_cast<std::size_t>(x.cols()) != p.mean.size())
    throw DimensionError("apply_scaler: column count does not match scaler");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (p.constant[k])
      out.col(j).setZero();
    else
      out.col(j) = (x.col(j).array() - p.mean[k]) / p.stddev[k];
  }
  return out;
}

inline FeatureTable apply_scaler(const FeatureTable& t, const ScalerParams& p) {
  FeatureTable out = t;
  out.rows = apply_scaler(t.rows, p);
  return out;
}

// Inverse on non-constant columns; constant columns map back to their mean.
inline Matrix unscale(const Matrix& z, const ScalerParams& p) {
  if (static_cast<std::size_t>(z.cols()) != p.mean.size())
    throw DimensionError("unscale: column count does not match scaler");
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    out.col(j) = (z.col(j).array() * p.stddev[k]) + p.mean[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temporal hold-out

struct TemporalSplit {
  std::vector<std::size_t> train;  // year < test_year
  std::vector<std::size_t> test;   // year == test_year
};

inline TemporalSplit temporal_split(std::span<const int> years, int test_year) {
  TemporalSplit s;
  for (std::size_t i = 0; i < years.size(); ++i) {
    if (years[i] < test_year)
      s.train.push_back(i);
    else if (years[i] == test_year)
      s.test.push_back(i);
  }
  if (s.test.empty()) throw Error("temporal_split: test year " + std::to_string(test_year) + " not in table");
  return s;
}

inline TemporalSplit temporal_split(const FeatureTable& t, int test_year) { return temporal_split(t.year, test_year); }

// ---------------------------------------------------------------------------
// Synthetic benchmark with a known yield function

struct GroundTruthTerm {
  enum class Kind { linear, product, hinge_above, hinge_below };
  Kind kind = Kind::linear;
  std::vector<std::string> features;  // 1 feature, or 2 for product
  double coef = 0.0;
  double center_a = 0.0;   // linear/product: x - center
  double center_b = 0.0;   // product: second factor center
  double threshold = 0.0;  // hinge_above: max(0, x - t); hinge_below: max(0, t - x)
};

struct SynthSpec {
  int n_regions = 60;
  int first_year = 2008;
  int last_year = 2019;
  int weeks = kDefaultWeeks;
  std::uint64_t seed = 1;
  double noise_sigma = 0.3;
  double base_yield = 7.5;
  std::vector<GroundTruthTerm> terms;
  std::vector<std::string> null_features;
};

// Feature windows are expressed as fractions of the season so the same effect
// structure exists for any W (W = 1 collapses every window onto week 1).
inline std::vector<int> season_window(int weeks, double from, double to) {
  int a = std::clamp(static_cast<int>(std::floor(from * weeks)) + 1, 1, weeks);
  int b = std::clamp(static_cast<int>(std::ceil(to * weeks)), a, weeks);
  std::vector<int> out;
  for (int w = a; w <= b; ++w) out.push_back(w);
  return out;
}

// Default effect structure: late-season heat stress (hinge on tmax), winter
// frost damage (hinge on tmin), a rainfall x water-holding-capacity
// interaction, a radiation response and a sowing-date effect. Relative
// humidity and wind have no effect.
inline std::vector<GroundTruthTerm> default_ground_truth(int weeks) {
  using K = GroundTruthTerm::Kind;
  std::vector<GroundTruthTerm> terms;
  auto heat = season_window(weeks, 0.68, 0.84);
  for (int w : heat)
    terms.push_back({K::hinge_above, {weather_column_name(WeatherVar::tmax, w)}, -3.0 / heat.size(), 0, 0, 21.0});
  auto frost = season_window(weeks, 0.20, 0.40);
  for (int w : frost)
    terms.push_back({K::hinge_below, {weather_column_name(WeatherVar::tmin, w)}, -2.4 / frost.size(), 0, 0, -4.0});
  auto rain = season_window(weeks, 0.50, 0.70);
  for (int w : rain)
    terms.push_back({K::product, {weather_column_name(WeatherVar::precip, w), "DUL"}, 24.0 / rain.size(), 1.8, 0.30});
  auto light = season_window(weeks, 0.60, 0.90);
  for (int w : light)
    terms.push_back({K::linear, {weather_column_name(WeatherVar::radiation, w)}, 0.05 / light.size(), 14.0});
  terms.push_back({K::linear, {"sowing_doy"}, -0.02, 280.0});
  terms.push_back({K::hinge_below, {"SAT"}, -9.0, 0, 0, 0.45});
  return terms;
}

inline std::vector<std::string> default_null_features(int weeks) {
  std::vector<std::string> out;
  for (auto v : {WeatherVar::rh, WeatherVar::wind})
    for (int w = 1; w <= weeks; ++w) out.push_back(weather_column_name(v, w));
  return out;
}

inline SynthSpec default_synth_spec(int weeks = kDefaultWeeks, std::uint64_t seed = 1) {
  SynthSpec s;
  s.weeks = weeks;
  s.seed = seed;
  s.terms = default_ground_truth(weeks);
  s.null_features = default_null_features(weeks);
  return s;
}

// Evaluates the ground-truth yield function g on the columns of a table.
class GroundTruth {
 public:
  GroundTruth(const SynthSpec& spec, std::span<const FeatureDescriptor> descriptors) : base_(spec.base_yield) {
    std::unordered_map<std::string_view, std::size_t> idx;
    for (std::size_t j = 0; j < descriptors.size(); ++j) idx.emplace(descriptors[j].name, j);
    std::set<std::string_view> nulls(spec.null_features.begin(), spec.null_features.end());
    for (const auto& n : spec.null_features)
      if (!idx.contains(n)) throw SchemaError(n, "synth: null feature not in schema: " + n);
    for (const auto& t : spec.terms) {
      std::size_t want = t.kind == GroundTruthTerm::Kind::product ? 2 : 1;
      if (t.features.size() != want) throw Error("synth: term has wrong number of features");
      Bound b{t, {}};
      for (const auto& f : t.features) {
        auto it = idx.find(f);
        if (it == idx.end()) throw SchemaError(f, "synth: term references unknown feature " + f);
        if (nulls.contains(f)) throw SchemaError(f, "synth: null feature " + f + " used by a ground-truth term");
        b.cols.push_back(it->second);
      }
      terms_.push_back(std::move(b));
    }
  }

  template <class Row>
  double operator()(const Row& x) const {
    double g = base_;
    for (const auto& [t, cols] : terms_) {
      const double a = x[static_cast<Eigen::Index>(cols[0])];
      switch (t.kind) {
        case GroundTruthTerm::Kind::linear: g += t.coef * (a - t.center_a); break;
        case GroundTruthTerm::Kind::product:
          g += t.coef * (a - t.center_a) * (x[static_cast<Eigen::Index>(cols[1])] - t.center_b);
          break;
        case GroundTruthTerm::Kind::hinge_above: g += t.coef * std::max(0.0, a - t.threshold); break;
        case GroundTruthTerm::Kind::hinge_below: g += t.coef * std::max(0.0, t.threshold - a); break;
      }
    }
    return g;
  }

  Vector evaluate(const Matrix& x) const {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = (*this)(x.row(i));
    return out;
  }

 private:
  struct Bound {
    GroundTruthTerm term;
    std::vector<std::size_t> cols;
  };
  double base_;
  std::vector<Bound> terms_;
};

namespace detail {

// Climatological daily mean of each variable at a day of year.
inline double climate(WeatherVar v, int doy) {
  const double phase = 2.0 * std::numbers::pi * (doy - 105) / 365.0;
  const double s = std::sin(phase);
  switch (v) {
    case WeatherVar::tmin: return 4.0 + 8.0 * s;
    case WeatherVar::tmax: return 13.0 + 9.5 * s;
    case WeatherVar::precip: return 1.9 + 0.3 * s;
    case WeatherVar::radiation: return 10.5 + 8.5 * s;
    case WeatherVar::rh: return 80.0 - 8.0 * s;
    case WeatherVar::wind: return 3.8 - 0.6 * s;
  }
  return 0.0;
}

// Scales of (daily noise, region-year smooth anomaly, shared year anomaly).
inline std::array<double, 3> noise_scales(WeatherVar v) {
  switch (v) {
    case WeatherVar::tmin: return {2.0, 2.2, 0.6};
    case WeatherVar::tmax: return {2.2, 2.4, 0.6};
    case WeatherVar::precip: return {1.5, 0.9, 0.2};
    case WeatherVar::radiation: return {2.5, 1.8, 0.4};
    case WeatherVar::rh: return {5.0, 4.0, 1.0};
    case WeatherVar::wind: return {1.0, 0.7, 0.2};
  }
  return {0, 0, 0};
}

}  // namespace detail

// Weather is simulated day by day from the sowing date to the harvest date and
// aggregated to weekly means, so seasons shorter than 7W days exercise the
// trailing-week rule. Deterministic per seed.
inline FeatureTable generate_synthetic(const SynthSpec& spec) {
  if (spec.n_regions < 1 || spec.last_year < spec.first_year) throw Error("synth: empty region/year range");
  if (spec.weeks < 1) throw Error("synth: weeks must be >= 1");
  FeatureTable t;
  t.descriptors = default_schema(spec.weeks);
  const GroundTruth truth(spec, t.descriptors);
  const int n_years = spec.last_year - spec.first_year + 1;
  const std::size_t n = static_cast<std::size_t>(spec.n_regions) * static_cast<std::size_t>(n_years);
  const std::size_t W = static_cast<std::size_t>(spec.weeks);
  t.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t.descriptors.size()));
  t.target.resize(static_cast<Eigen::Index>(n));

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Shared year anomalies, one per (year, variable).
  std::vector<std::array<double, kNumWeatherVars>> year_anom(static_cast<std::size_t>(n_years));
  {
    Rng rng(derive_seed(spec.seed, 0));
    for (auto& a : year_anom)
      for (std::size_t v = 0; v < kNumWeatherVars; ++v) a[v] = gauss(rng) * detail::noise_scales(kWeatherVars[v])[2];
  }

  std::size_t row = 0;
  for (int r = 0; r < spec.n_regions; ++r) {
    Rng region_rng(derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(r)));
    const double temp_offset = 1.2 * gauss(region_rng);
    const double ll = 0.08 + 0.08 * unif(region_rng);
    const double dul = ll + 0.12 + 0.10 * unif(region_rng);
    const double sat = dul + 0.06 + 0.12 * unif(region_rng);
    const double bd = 1.2 + 0.4 * unif(region_rng);
    const double sow_base = 280.0 + 6.0 * gauss(region_rng);
    char name[16];
    std::snprintf(name, sizeof(name), "R%03d", r + 1);

    for (int yi = 0; yi < n_years; ++yi, ++row) {
      Rng rng(derive_seed(spec.seed, 100000 + static_cast<std::uint64_t>(r) * 1000 + static_cast<std::uint64_t>(yi)));
      const int sowing = static_cast<int>(std::lround(sow_base + 5.0 * gauss(rng)));
      const int flowering = static_cast<int>(std::lround(155.0 - 0.4 * temp_offset * 5.0 + 5.0 * gauss(rng)));
      const int harvest = static_cast<int>(std::lround(205.0 + 6.0 * gauss(rng)));
      const int season_days = (365 - sowing) + harvest;

      DailyWeatherSeries series;
      series.season_start_doy = sowing;
      for (std::size_t v = 0; v < kNumWeatherVars; ++v) {
        const auto var = kWeatherVars[v];
        const auto scales = detail::noise_scales(var);
        const double offset =
            (var == WeatherVar::tmin || var == WeatherVar::tmax) ? temp_offset : 0.0;
        // Smooth region-year anomaly: AR(1) on weekly steps, interpolated daily.
        double anomaly = scales[1] * gauss(rng);
        auto& daily = series.values[v];
        daily.resize(static_cast<std::size_t>(season_days));
        for (int day = 0; day < season_days; ++day) {
          if (day % 7 == 0 && day > 0) anomaly = 0.8 * anomaly + 0.6 * scales[1] * gauss(rng);
          const int doy = (sowing + day - 1) % 365 + 1;
          double value = detail::climate(var, doy) + offset + year_anom[static_cast<std::size_t>(yi)][v] + anomaly +
                         scales[0] * gauss(rng);
          if (var == WeatherVar::precip || var == WeatherVar::radiation || var == WeatherVar::wind)
            value = std::max(0.0, value);
          if (var == WeatherVar::rh) value = std::clamp(value, 20.0, 100.0);
          daily[static_cast<std::size_t>(day)] = value;
        }
      }
      auto weekly = aggregate_daily_to_weekly(series, spec.weeks);

      const auto ri = static_cast<Eigen::Index>(row);
      std::size_t col = 0;
      for (double v : {double(sowing), double(flowering), double(harvest), ll, dul, sat, bd})
        t.rows(ri, static_cast<Eigen::Index>(col++)) = v;
      for (std::size_t v = 0; v < kNumWeatherVars; ++v)
        for (std::size_t w = 0; w < W; ++w) t.rows(ri, static_cast<Eigen::Index>(col++)) = weekly.values[v][w];

      t.target(ri) = truth(t.rows.row(ri)) + spec.noise_sigma * gauss(rng);
      t.region_id.emplace_back(name);
      t.year.push_back(spec.first_year + yi);
      t.padded.push_back(weekly.padded);
    }
  }
  t.validate();
  return t;
}

}  // namespace yieldbench
