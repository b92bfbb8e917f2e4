#include <gtest/gtest.h>

#include <cmath>

#include "oracles/oracle_values.hpp"
#include "yieldbench/metrics.hpp"

using namespace yieldbench;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(mean, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST(Metrics, PerfectFit) {
  std::vector<double> y = {1, 2, 3, 4};
  auto m = evaluate(y, y);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_DOUBLE_EQ(m.sqrt_r2, 1.0);
  EXPECT_DOUBLE_EQ(m.pearson_r, 1.0);
  EXPECT_DOUBLE_EQ(m.r_squared, 1.0);
  EXPECT_FALSE(m.sqrt_r2_clamped);
}

TEST(Metrics, WorseThanMeanIsClamped) {
  std::vector<double> pred = {2, 3, 4}, truth = {1, 2, 3};
  auto m = evaluate(pred, truth);
  EXPECT_DOUBLE_EQ(m.mae, 1.0);
  EXPECT_DOUBLE_EQ(m.rmse, 1.0);
  EXPECT_DOUBLE_EQ(m.sse, 3.0);
  EXPECT_DOUBLE_EQ(m.sst, 2.0);
  EXPECT_EQ(m.sqrt_r2, 0.0);
  EXPECT_TRUE(m.sqrt_r2_clamped);
  EXPECT_DOUBLE_EQ(m.pearson_r, 1.0);
  EXPECT_DOUBLE_EQ(m.r_squared, -0.5);
}

TEST(Metrics, MeanPredictorHasZeroCorrelationCoefficient) {
  std::vector<double> truth = {3, 5, 7, 9};
  std::vector<double> pred(4, 6.0);
  auto m = evaluate(pred, truth);
  EXPECT_NEAR(m.sqrt_r2, 0.0, 1e-12);
  EXPECT_FALSE(m.sqrt_r2_clamped);
  EXPECT_EQ(m.pearson_r, 0.0);
  EXPECT_TRUE(m.pearson_undefined);
}

TEST(Metrics, ConstantTruthFlagged) {
  std::vector<double> truth(5, 2.0), pred = {1, 2, 3, 2, 2};
  auto m = evaluate(pred, truth);
  EXPECT_TRUE(m.constant_truth);
  EXPECT_EQ(m.sqrt_r2, 0.0);
}

TEST(Metrics, RejectsBadInput) {
  std::vector<double> a = {1, 2}, b = {1};
  EXPECT_THROW(evaluate(a, b), DimensionError);
  std::vector<double> e;
  EXPECT_THROW(evaluate(e, e), Error);
}

TEST(Metrics, IdentitiesOnRandomPairs) {
  Rng rng(7);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 40);
    std::vector<double> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = 5.0 + 2.0 * g(rng);
      pred[i] = truth[i] + (trial % 5) * 0.5 * g(rng);
    }
    auto m = evaluate(pred, truth);
    EXPECT_LE(m.mae, m.rmse + 1e-12);
    EXPECT_GE(m.sqrt_r2, 0.0);
    EXPECT_LE(m.sqrt_r2, 1.0);
    EXPECT_GE(m.pearson_r, -1.0);
    EXPECT_LE(m.pearson_r, 1.0);
    if (!m.sqrt_r2_clamped && !m.constant_truth) {
      EXPECT_NEAR(m.sqrt_r2 * m.sqrt_r2 + m.sse / m.sst, 1.0, 1e-9);
    }
  }
}

TEST(Pearson, AffineInvariance) {
  auto a = normals(50, 1), b = normals(50, 2);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += a[i];
  const double r = pearson(a, b);
  std::vector<double> a2(a), b2(b);
  for (auto& x : a2) x = 3.0 * x - 7.0;
  for (auto& x : b2) x = 0.5 * x + 100.0;
  EXPECT_NEAR(pearson(a2, b2), r, 1e-12);
  for (auto& x : a2) x = -x;
  EXPECT_NEAR(pearson(a2, b2), -r, 1e-12);
}

TEST(Pearson, MatchesScipy) {
  EXPECT_NEAR(pearson(oracle::pearson_a, oracle::pearson_b), oracle::pearson_r, 1e-12);
}

TEST(PercentageError, Examples) {
  EXPECT_DOUBLE_EQ(percentage_error(8.0, 6.0), 25.0);
  EXPECT_DOUBLE_EQ(percentage_error(8.0, 10.0), 25.0);
  EXPECT_EQ(percentage_error(4.2, 4.2), 0.0);
  EXPECT_THROW(percentage_error(0.0, 1.0), Error);

  std::vector<double> actual = {8.0, 0.0, 5.0}, pred = {6.0, 1.0, 5.0};
  auto pe = percentage_errors(actual, pred);
  EXPECT_EQ(pe.n_excluded, 1u);
  EXPECT_TRUE(pe.excluded[1]);
  EXPECT_TRUE(std::isnan(pe.values[1]));
  EXPECT_DOUBLE_EQ(pe.values[0], 25.0);
  EXPECT_EQ(pe.values[2], 0.0);
}

TEST(PercentageError, PerRegionMeans) {
  std::vector<std::string> regions = {"b", "a", "b", "a", "c"};
  std::vector<double> actual = {10, 8, 10, 8, 0};
  std::vector<double> pred = {9, 6, 12, 8, 3};
  auto out = per_region_error(regions, actual, pred);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].region_id, "a");
  EXPECT_DOUBLE_EQ(out[0].percentage_error, 12.5);
  EXPECT_EQ(out[0].count, 2u);
  EXPECT_EQ(out[1].region_id, "b");
  EXPECT_DOUBLE_EQ(out[1].percentage_error, 15.0);
}

TEST(AndersonDarling, MatchesStatsmodels) {
  struct Case {
    const std::vector<double>& x;
    double a2, p;
  };
  for (const Case& c : {Case{oracle::ad_normal_x, oracle::ad_normal_a2, oracle::ad_normal_p},
                        Case{oracle::ad_expo_x, oracle::ad_expo_a2, oracle::ad_expo_p},
                        Case{oracle::ad_uniform_x, oracle::ad_uniform_a2, oracle::ad_uniform_p},
                        Case{oracle::ad_lognormal_x, oracle::ad_lognormal_a2, oracle::ad_lognormal_p}}) {
    auto t = anderson_darling_normality(c.x);
    EXPECT_NEAR(t.a2, c.a2, 1e-8 * std::max(1.0, c.a2));
    EXPECT_NEAR(t.p_value, c.p, 1e-9);
    EXPECT_EQ(t.n, c.x.size());
  }
}

TEST(AndersonDarling, NormalVersusUniform) {
  auto t = anderson_darling_normality(normals(500, 11, 3.0, 2.0));
  EXPECT_GT(t.p_value, 0.05);
  Rng rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> flat(500);
  for (auto& x : flat) x = u(rng);
  auto tu = anderson_darling_normality(flat);
  EXPECT_LT(tu.p_value, 0.01);
  EXPECT_EQ(p_value_band(tu.p_value).substr(0, 1), tu.p_value < 0.001 ? "p" : "0");
}

TEST(AndersonDarling, Bands) {
  EXPECT_EQ(p_value_band(0.0005), "p<0.001");
  EXPECT_EQ(p_value_band(0.005), "0.001<=p<0.01");
  EXPECT_EQ(p_value_band(0.03), "0.01<=p<0.05");
  EXPECT_EQ(p_value_band(0.07), "0.05<=p<0.10");
  EXPECT_EQ(p_value_band(0.5), "p>=0.10");
}

TEST(AndersonDarling, TooFewResiduals) {
  std::vector<double> x = {1, 2, 3};
  EXPECT_THROW(anderson_darling_normality(x), Error);
}

TEST(Hexbin, IdenticalPointsShareOneBin) {
  std::vector<double> v(25, 3.7);
  auto bins = hexbin(v, v, 0.5);
  ASSERT_EQ(bins.size(), 1u);
  EXPECT_EQ(bins[0].count, 25u);
}

TEST(Hexbin, CountsAreConserved) {
  auto truth = normals(300, 3, 6.0, 1.5), pred = normals(300, 4, 6.0, 1.5);
  auto bins = hexbin(pred, truth, default_hex_size(truth));
  std::size_t total = 0;
  for (const auto& b : bins) {
    total += b.count;
    EXPECT_GT(b.count, 0u);
  }
  EXPECT_EQ(total, 300u);
  for (std::size_t k = 1; k < bins.size(); ++k)
    EXPECT_TRUE(std::pair(bins[k - 1].r, bins[k - 1].q) < std::pair(bins[k].r, bins[k].q));
}

TEST(Hexbin, DistantPointsSeparate) {
  const double size = 0.3;
  std::vector<double> truth = {0.0, 10 * size}, pred = {0.0, 0.0};
  EXPECT_EQ(hexbin(pred, truth, size).size(), 2u);
  std::vector<double> truth2 = {0.0, 0.0}, pred2 = {0.0, 10 * size};
  EXPECT_EQ(hexbin(pred2, truth2, size).size(), 2u);
}

TEST(Hexbin, CentreMapsBackToItsCell) {
  for (int q = -3; q <= 3; ++q)
    for (int r = -3; r <= 3; ++r) {
      auto [cx, cy] = hex_center(q, r, 0.7);
      EXPECT_EQ(hex_axial(cx, cy, 0.7), std::pair(q, r));
    }
}

TEST(Hexbin, RejectsBadSize) {
  std::vector<double> v = {1.0};
  EXPECT_THROW(hexbin(v, v, 0.0), Error);
}

TEST(Correlation, DiagonalScaledAndNegatedColumns) {
  Rng rng(5);
  std::normal_distribution<double> g;
  Matrix x(40, 4);
  for (Eigen::Index i = 0; i < 40; ++i) {
    x(i, 0) = g(rng);
    x(i, 1) = 2.0 * x(i, 0);
    x(i, 2) = -x(i, 0);
    x(i, 3) = g(rng);
  }
  auto cm = correlation_matrix(x, {"a", "b", "c", "d"});
  for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(cm.values(j, j), 1.0);
  EXPECT_NEAR(cm.values(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(cm.values(0, 2), -1.0, 1e-12);
  EXPECT_TRUE(cm.values.isApprox(cm.values.transpose()));
  EXPECT_LE(cm.values.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Correlation, ConstantColumnReportedAsZero) {
  Matrix x(5, 2);
  x << 1, 3, 2, 3, 3, 3, 4, 3, 5, 3;
  auto cm = correlation_matrix(x, {"v", "k"});
  EXPECT_TRUE(cm.constant[1]);
  EXPECT_EQ(cm.values(1, 1), 0.0);
  EXPECT_EQ(cm.values(0, 1), 0.0);
}

TEST(Correlation, WeeklyWeatherCollapsed) {
  auto t = generate_synthetic(default_synth_spec(kDefaultWeeks, 3));
  auto cm = correlation_matrix(t, true);
  EXPECT_EQ(cm.names.size(), kNumStaticFeatures + kNumWeatherVars);
  EXPECT_EQ(cm.names.back(), "wind");
  auto full = correlation_matrix(t, false);
  EXPECT_EQ(full.names.size(), t.d());
}
