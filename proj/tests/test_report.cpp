#include <gtest/gtest.h>

#include "yieldbench/report.hpp"

using namespace yieldbench;

namespace {

ReportRow sample_row(const std::string& model, int year, double shift) {
  std::vector<double> truth = {6.1, 7.4, 5.9, 8.2, 7.7, 6.6, 7.0, 6.8, 7.9, 5.5};
  std::vector<double> pred;
  for (double t : truth) pred.push_back(t + shift * std::sin(t));
  std::vector<std::string> regions = {"r1", "r2", "r1", "r3", "r2", "r3", "r1", "r2", "r3", "r1"};
  ReportRow row;
  row.model = model;
  row.params = {{"lambda", 0.1}};
  row.train_years = {2008, 2009, 2010};
  row.test_year = year;
  row.n_train = 30;
  row.n_test = truth.size();
  row.train = evaluate(truth, truth);
  row.test = evaluate(pred, truth);
  for (std::size_t i = 0; i < truth.size(); ++i) row.test_residuals.push_back(truth[i] - pred[i]);
  row.residual_test = anderson_darling_normality(row.test_residuals);
  row.hex_size = default_hex_size(truth);
  row.hexbin = hexbin(pred, truth, row.hex_size);
  row.per_region_error = per_region_error(regions, truth, pred);
  return row;
}

}  // namespace

TEST(Report, EmptyResultsRejected) {
  EvalReport r;
  EXPECT_THROW(report_to_json(r), Error);
  EXPECT_THROW(format_report_table(r), Error);
}

TEST(Report, SingleRowTable) {
  EvalReport r;
  r.rows.push_back(sample_row("ridge", 2011, 0.3));
  const auto table = format_report_table(r);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
  EXPECT_NE(table.find("ridge"), std::string::npos);
  EXPECT_NE(table.find("2008-2010"), std::string::npos);
}

TEST(Report, JsonRoundTrip) {
  EvalReport r;
  r.seed = 17;
  r.data = "synthetic";
  r.rows.push_back(sample_row("ridge", 2011, 0.3));
  r.rows.push_back(sample_row("gbt", 2011, 0.1));
  r.rows.back().residual_test.reset();
  const auto text = report_dump(r);
  auto back = report_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(report_dump(back), text);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].test.rmse, r.rows[0].test.rmse);
  EXPECT_EQ(back.rows[0].hexbin, r.rows[0].hexbin);
  EXPECT_EQ(back.rows[0].residual_test->p_value, r.rows[0].residual_test->p_value);
  EXPECT_FALSE(back.rows[1].residual_test.has_value());
  EXPECT_EQ(back.rows[1].per_region_error.size(), 3u);
}

TEST(Report, StableKeysAndVersion) {
  EvalReport r;
  r.rows.push_back(sample_row("lasso", 2012, 0.2));
  const auto j = report_to_json(r);
  EXPECT_EQ(j.at("schema_version"), kReportSchemaVersion);
  std::vector<std::string> keys;
  for (auto it = j.at("rows")[0].begin(); it != j.at("rows")[0].end(); ++it) keys.push_back(it.key());
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(report_dump(r), report_dump(r));
  auto bad = j;
  bad["schema_version"] = 7;
  EXPECT_THROW(report_from_json(bad), Error);
}

TEST(Report, PerRegionCsv) {
  EvalReport r;
  r.rows.push_back(sample_row("rf", 2013, 0.2));
  const auto csv = per_region_csv(r);
  EXPECT_EQ(csv.rfind("region_id,test_year,model,percentage_error,count\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("r2,2013,rf,"), std::string::npos);
}
