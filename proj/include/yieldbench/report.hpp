#pragma once

// Evaluation report: one row per (model, test year) with train and test
// metrics, residual normality, hexbin counts and per-region errors.
//
// JSON objects are written with sorted keys, so identical reports serialize to
// identical bytes.

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "yieldbench/metrics.hpp"
#include "yieldbench/tuning.hpp"

namespace yieldbench {

inline constexpr int kReportSchemaVersion = 1;

struct ReportRow {
  std::string model;
  ParamMap params;
  std::vector<int> train_years;
  int test_year = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  MetricSet train;
  MetricSet test;
  std::optional<NormalityTest> residual_test;  // absent with fewer than 8 test rows
  std::vector<double> test_residuals;          // truth - prediction
  double hex_size = 1.0;
  std::vector<HexBin> hexbin;
  std::vector<RegionError> per_region_error;
};

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::uint64_t seed = 0;
  std::string data;  // description of the data source
  std::vector<ReportRow> rows;
};

namespace detail {

using json = nlohmann::json;

inline json metrics_to_json(const MetricSet& m) {
  return {{"mae", m.mae},
          {"rmse", m.rmse},
          {"sqrt_r2", m.sqrt_r2},
          {"pearson_r", m.pearson_r},
          {"r_squared", m.r_squared},
          {"sse", m.sse},
          {"sst", m.sst},
          {"n", m.n},
          {"sqrt_r2_clamped", m.sqrt_r2_clamped},
          {"pearson_undefined", m.pearson_undefined},
          {"constant_truth", m.constant_truth}};
}

inline MetricSet metrics_from_json(const json& j) {
  MetricSet m;
  m.mae = j.at("mae").get<double>();
  m.rmse = j.at("rmse").get<double>();
  m.sqrt_r2 = j.at("sqrt_r2").get<double>();
  m.pearson_r = j.at("pearson_r").get<double>();
  m.r_squared = j.at("r_squared").get<double>();
  m.sse = j.at("sse").get<double>();
  m.sst = j.at("sst").get<double>();
  m.n = j.at("n").get<std::size_t>();
  m.sqrt_r2_clamped = j.at("sqrt_r2_clamped").get<bool>();
  m.pearson_undefined = j.at("pearson_undefined").get<bool>();
  m.constant_truth = j.at("constant_truth").get<bool>();
  return m;
}

}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& r) {
  using detail::json;
  if (r.rows.empty()) throw Error("report: no results to write");
  json rows = json::array();
  for (const auto& row : r.rows) {
    json hex = json::array();
    for (const auto& b : row.hexbin) hex.push_back({{"q", b.q}, {"r", b.r}, {"cx", b.cx}, {"cy", b.cy}, {"count", b.count}});
    json regions = json::array();
    for (const auto& e : row.per_region_error)
      regions.push_back({{"region_id", e.region_id}, {"percentage_error", e.percentage_error}, {"count", e.count}});
    json resid = nullptr;
    if (row.residual_test)
      resid = {{"statistic", "anderson_darling"},
               {"a2", row.residual_test->a2},
               {"a2_star", row.residual_test->a2_star},
               {"p_value", row.residual_test->p_value},
               {"band", row.residual_test->band},
               {"n", row.residual_test->n}};
    rows.push_back({{"model", row.model},
                    {"params", row.params},
                    {"train_years", row.train_years},
                    {"test_year", row.test_year},
                    {"n_train", row.n_train},
                    {"n_test", row.n_test},
                    {"train", detail::metrics_to_json(row.train)},
                    {"test", detail::metrics_to_json(row.test)},
                    {"residual_test", resid},
                    {"test_residuals", row.test_residuals},
                    {"hex_size", row.hex_size},
                    {"hexbin", hex},
                    {"per_region_error", regions}});
  }
  return {{"schema_version", r.schema_version}, {"seed", r.seed}, {"data", r.data}, {"rows", rows}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kReportSchemaVersion)
    throw Error("report: unsupported schema_version " + std::to_string(r.schema_version));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.data = j.at("data").get<std::string>();
  for (const auto& jr : j.at("rows")) {
    ReportRow row;
    row.model = jr.at("model").get<std::string>();
    row.params = jr.at("params").get<ParamMap>();
    row.train_years = jr.at("train_years").get<std::vector<int>>();
    row.test_year = jr.at("test_year").get<int>();
    row.n_train = jr.at("n_train").get<std::size_t>();
    row.n_test = jr.at("n_test").get<std::size_t>();
    row.train = detail::metrics_from_json(jr.at("train"));
    row.test = detail::metrics_from_json(jr.at("test"));
    if (const auto& rt = jr.at("residual_test"); !rt.is_null()) {
      NormalityTest t;
      t.a2 = rt.at("a2").get<double>();
      t.a2_star = rt.at("a2_star").get<double>();
      t.p_value = rt.at("p_value").get<double>();
      t.band = rt.at("band").get<std::string>();
      t.n = rt.at("n").get<std::size_t>();
      row.residual_test = t;
    }
    row.test_residuals = jr.at("test_residuals").get<std::vector<double>>();
    row.hex_size = jr.at("hex_size").get<double>();
    for (const auto& b : jr.at("hexbin"))
      row.hexbin.push_back({b.at("q").get<int>(), b.at("r").get<int>(), b.at("cx").get<double>(),
                            b.at("cy").get<double>(), b.at("count").get<std::size_t>()});
    for (const auto& e : jr.at("per_region_error"))
      row.per_region_error.push_back({e.at("region_id").get<std::string>(), e.at("percentage_error").get<double>(),
                                      e.at("count").get<std::size_t>()});
    r.rows.push_back(std::move(row));
  }
  if (r.rows.empty()) throw Error("report: no rows");
  return r;
}

inline std::string report_dump(const EvalReport& r) { return report_to_json(r).dump(2) + "\n"; }

inline std::string years_label(const std::vector<int>& years) {
  if (years.empty()) return "-";
  if (years.size() == 1) return std::to_string(years.front());
  return std::to_string(years.front()) + "-" + std::to_string(years.back());
}

// Fixed-width text table, one line per report row.
inline std::string format_report_table(const EvalReport& r) {
  if (r.rows.empty()) throw Error("report: no results to format");
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-10s %-5s %9s %9s %9s %9s %9s %9s %9s %s\n", "model", "train", "test",
                "trn_rmse", "trn_mae", "trn_r", "tst_rmse", "tst_mae", "tst_r", "pearson", "residual AD");
  out << line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-6s %-10s %-5d %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %s\n", row.model.c_str(),
                  years_label(row.train_years).c_str(), row.test_year, row.train.rmse, row.train.mae, row.train.sqrt_r2,
                  row.test.rmse, row.test.mae, row.test.sqrt_r2, row.test.pearson_r,
                  row.residual_test ? row.residual_test->band.c_str() : "n/a");
    out << line;
  }
  return out.str();
}

// region_id,test_year,model,percentage_error,count
inline std::string per_region_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "region_id,test_year,model,percentage_error,count\n";
  for (const auto& row : r.rows)
    for (const auto& e : row.per_region_error)
      out << e.region_id << ',' << row.test_year << ',' << row.model << ',' << format_double(e.percentage_error) << ','
          << e.count << '\n';
  return out.str();
}

}  // namespace yieldbench
