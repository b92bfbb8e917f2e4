#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles/oracle_values.hpp"
#include "yieldbench/explain.hpp"

using namespace yieldbench;

namespace {

Matrix gaussian(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Nonlinear model with interactions, used in several tests.
Vector interacting(const Matrix& x) {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double s = x(i, 0) * x(i, 1) + 2.0 * std::max(0.0, x(i, 2)) + std::sin(x(i, 3)) - 0.5 * x(i, 4) * x(i, 4);
    for (Eigen::Index j = 5; j < x.cols(); ++j) s += 0.3 * j * std::tanh(x(i, j)) * x(i, j - 5);
    out(i) = s;
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
  return m;
}

}  // namespace

TEST(Shapley, KernelWeights) {
  EXPECT_EQ(binomial(5, 2), 10.0);
  EXPECT_EQ(binomial(5, 7), 0.0);
  EXPECT_DOUBLE_EQ(shapley_kernel_weight(4, 1), 3.0 / (4.0 * 1 * 3));
  EXPECT_DOUBLE_EQ(shapley_kernel_weight(4, 2), 3.0 / (6.0 * 2 * 2));
}

TEST(Shapley, LinearModelClosedForm) {
  Vector w(4);
  w << 1.5, -2.0, 0.0, 0.7;
  auto f = [&](const Matrix& x) -> Vector { return (x * w).array() + 3.0; };
  Matrix bg = gaussian(20, 4, 1);
  Matrix x = gaussian(1, 4, 2);
  auto a = exact_shapley(f, x.row(0), bg);
  auto k = kernel_shap(f, x.row(0), bg, {.budget = 64, .seed = 3});
  const Eigen::RowVectorXd mean = bg.colwise().mean();
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(a.phi[static_cast<std::size_t>(j)], w(j) * (x(0, j) - mean(j)), 1e-12);
    EXPECT_NEAR(k.phi[static_cast<std::size_t>(j)], w(j) * (x(0, j) - mean(j)), 1e-10);
  }
  EXPECT_NEAR(a.base_value, f(bg).mean(), 1e-12);
  EXPECT_NEAR(a.prediction, f(x)(0), 1e-12);
}

TEST(Shapley, EfficiencyHolds) {
  Matrix bg = gaussian(15, 8, 4);
  Matrix xs = gaussian(5, 8, 5);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    auto a = exact_shapley(interacting, xs.row(i), bg);
    EXPECT_LT(a.efficiency_gap(), 1e-10);
    EXPECT_TRUE(a.exact);
    EXPECT_EQ(a.budget_used, 256u);
    for (std::size_t budget : {18u, 40u, 100u}) {
      auto k = kernel_shap(interacting, xs.row(i), bg, {.budget = budget, .seed = 7});
      EXPECT_LT(k.efficiency_gap(), 1e-10) << budget;
      EXPECT_LE(k.budget_used, budget);
    }
  }
}

TEST(Shapley, SymmetricDuplicatedColumns) {
  auto f = [](const Matrix& x) -> Vector {
    return (x.col(0) + x.col(1)).array().square() + x.col(2).array();
  };
  Matrix bg = gaussian(10, 3, 6);
  bg.col(1) = bg.col(0);
  Eigen::RowVectorXd x(3);
  x << 1.3, 1.3, -0.4;
  auto a = exact_shapley(f, x, bg);
  EXPECT_NEAR(a.phi[0], a.phi[1], 1e-12);
  auto k = kernel_shap(f, x, bg, {.budget = 8});
  EXPECT_NEAR(k.phi[0], k.phi[1], 1e-10);
}

TEST(Shapley, SingleFeature) {
  auto f = [](const Matrix& x) -> Vector { return x.col(0).array().exp(); };
  Matrix bg = gaussian(6, 1, 8);
  Eigen::RowVectorXd x(1);
  x << 0.4;
  const double expect = std::exp(0.4) - f(bg).mean();
  EXPECT_NEAR(exact_shapley(f, x, bg).phi[0], expect, 1e-12);
  EXPECT_NEAR(kernel_shap(f, x, bg, {.budget = 3}).phi[0], expect, 1e-12);
}

TEST(Shapley, AdditiveModelSeparates) {
  auto g0 = [](double v) { return v * v; };
  auto g1 = [](double v) { return std::sin(v); };
  auto g2 = [](double v) { return 3.0 * std::max(0.0, v); };
  auto f = [&](const Matrix& x) -> Vector {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = g0(x(i, 0)) + g1(x(i, 1)) + g2(x(i, 2));
    return out;
  };
  Matrix bg = gaussian(12, 3, 9);
  Eigen::RowVectorXd x(3);
  x << -0.8, 1.1, 0.5;
  auto a = exact_shapley(f, x, bg);
  double m0 = 0, m1 = 0, m2 = 0;
  for (Eigen::Index i = 0; i < bg.rows(); ++i) {
    m0 += g0(bg(i, 0)) / 12.0;
    m1 += g1(bg(i, 1)) / 12.0;
    m2 += g2(bg(i, 2)) / 12.0;
  }
  EXPECT_NEAR(a.phi[0], g0(-0.8) - m0, 1e-12);
  EXPECT_NEAR(a.phi[1], g1(1.1) - m1, 1e-12);
  EXPECT_NEAR(a.phi[2], g2(0.5) - m2, 1e-12);
}

TEST(Shapley, MatchesPermutationOracle) {
  Matrix bg(4, 5);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) bg(i, j) = oracle::shap_bg[static_cast<std::size_t>(i * 5 + j)];
  Eigen::RowVectorXd x = Eigen::Map<const Eigen::RowVectorXd>(oracle::shap_x.data(), 5);
  auto a = exact_shapley(interacting, x, bg);
  EXPECT_LT(max_abs_diff(a.phi, oracle::shap_phi), 1e-12);
  EXPECT_NEAR(a.base_value, oracle::shap_base, 1e-12);
}

TEST(Shapley, KernelEnumerationMatchesExact) {
  for (int d : {2, 3, 5, 8, 10}) {
    Matrix bg = gaussian(8, std::max(d, 5), 10 + static_cast<std::uint64_t>(d)).leftCols(d);
    Matrix x = gaussian(1, d, 20 + static_cast<std::uint64_t>(d));
    auto f = [d](const Matrix& m) -> Vector {
      Matrix full = Matrix::Zero(m.rows(), std::max(d, 5));
      full.leftCols(d) = m;
      return interacting(full);
    };
    auto a = exact_shapley(f, x.row(0), bg);
    auto k = kernel_shap(f, x.row(0), bg, {.budget = std::size_t{1} << d, .seed = 1});
    EXPECT_LT(max_abs_diff(a.phi, k.phi), 1e-8) << "d=" << d;
  }
}

TEST(Shapley, SamplingErrorShrinksWithBudget) {
  const int d = 8;
  Matrix bg = gaussian(10, d, 30);
  Matrix x = gaussian(1, d, 31);
  auto exact = exact_shapley(interacting, x.row(0), bg);
  std::vector<double> medians;
  for (std::size_t budget : {std::size_t{2 * d}, std::size_t{8 * d}, std::size_t{1} << d}) {
    std::vector<double> errs;
    for (std::uint64_t s = 1; s <= 20; ++s)
      errs.push_back(max_abs_diff(kernel_shap(interacting, x.row(0), bg, {.budget = budget, .seed = s}).phi, exact.phi));
    std::nth_element(errs.begin(), errs.begin() + 10, errs.end());
    medians.push_back(errs[10]);
  }
  EXPECT_LE(medians[1], medians[0]);
  EXPECT_LE(medians[2], medians[1]);
  EXPECT_LT(medians[2], 1e-8);
}

TEST(Shapley, BackgroundOrderInvariant) {
  Matrix bg = gaussian(9, 6, 40);
  Matrix x = gaussian(1, 6, 41);
  Matrix rev = bg.colwise().reverse();
  auto a = exact_shapley(interacting, x.row(0), bg);
  auto b = exact_shapley(interacting, x.row(0), rev);
  EXPECT_LT(max_abs_diff(a.phi, b.phi), 1e-12);
  auto ka = kernel_shap(interacting, x.row(0), bg, {.budget = 30, .seed = 5});
  auto kb = kernel_shap(interacting, x.row(0), rev, {.budget = 30, .seed = 5});
  EXPECT_LT(max_abs_diff(ka.phi, kb.phi), 1e-10);
}

TEST(Shapley, NullFeatureGetsZero) {
  auto f = [](const Matrix& x) -> Vector {
    return x.col(0).array() * x.col(1).array() + x.col(3).array().cos();
  };
  Matrix bg = gaussian(10, 4, 50);
  Matrix xs = gaussian(6, 4, 51);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    EXPECT_LT(std::abs(exact_shapley(f, xs.row(i), bg).phi[2]), 1e-12);
    EXPECT_LT(std::abs(kernel_shap(f, xs.row(i), bg, {.budget = 16}).phi[2]), 1e-8);
  }
}

TEST(Shapley, DeterministicForSeed) {
  Matrix bg = gaussian(10, 12, 60);
  Matrix x = gaussian(1, 12, 61);
  auto a = kernel_shap(interacting, x.row(0), bg, {.budget = 100, .seed = 9});
  auto b = kernel_shap(interacting, x.row(0), bg, {.budget = 100, .seed = 9});
  EXPECT_EQ(a.phi, b.phi);
}

TEST(Shapley, Errors) {
  Matrix bg = gaussian(5, 4, 70);
  Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(4);
  EXPECT_THROW(kernel_shap(interacting, x, bg, {.budget = 5}), Error);
  EXPECT_THROW(exact_shapley(interacting, x, Matrix(0, 4)), Error);
  EXPECT_THROW(exact_shapley(interacting, x, Matrix::Zero(3, 5)), DimensionError);
  Matrix wide = gaussian(2, 14, 71);
  EXPECT_THROW(exact_shapley(interacting, wide.row(0), wide), Error);
}

TEST(Shapley, DesignPairsComplements) {
  auto design = design_coalitions(10, 60, 3);
  EXPECT_FALSE(design.exhaustive);
  EXPECT_LE(design.coalitions.size(), 58u);
  EXPECT_EQ(design.coalitions.size(), design.weights.size());
  std::set<Coalition> seen(design.coalitions.begin(), design.coalitions.end());
  EXPECT_EQ(seen.size(), design.coalitions.size());
  for (const auto& c : design.coalitions) {
    const auto s = std::count(c.begin(), c.end(), true);
    EXPECT_GT(s, 0);
    EXPECT_LT(s, 10);
    if (s == 5) continue;
    Coalition comp = c;
    comp.flip();
    EXPECT_TRUE(seen.contains(comp));
  }
  EXPECT_TRUE(design_coalitions(6, 64, 1).exhaustive);
  EXPECT_EQ(design_coalitions(6, 64, 1).coalitions.size(), 62u);
}

TEST(Background, SampleIsSortedSubset) {
  std::vector<std::size_t> pool(50);
  std::iota(pool.begin(), pool.end(), 100);
  auto s = sample_background(pool, 10, 4);
  ASSERT_EQ(s.size(), 10u);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  for (auto v : s) EXPECT_TRUE(v >= 100 && v < 150);
  EXPECT_EQ(s, sample_background(pool, 10, 4));
  EXPECT_EQ(sample_background(pool, 80, 4).size(), 50u);
}

TEST(Importance, RankingExample) {
  std::vector<Attribution> attrs(2);
  attrs[0].phi = {1.0, -2.0};
  attrs[1].phi = {-1.0, 2.0};
  Matrix values(2, 2);
  values << 1, 0, 0, 1;
  std::vector<std::string> names = {"a", "b"};
  auto r = global_importance(attrs, values, names);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].feature, 1u);
  EXPECT_EQ(r[0].name, "b");
  EXPECT_DOUBLE_EQ(r[0].mean_abs_phi, 2.0);
  EXPECT_DOUBLE_EQ(r[1].mean_abs_phi, 1.0);
  EXPECT_EQ(global_importance(attrs, values, names, 1).size(), 1u);
}

TEST(Importance, SignFollowsMonotoneEffect) {
  auto f = [](const Matrix& x) -> Vector { return 2.0 * x.col(0) - x.col(1).array().cube().matrix(); };
  Matrix bg = gaussian(10, 2, 80);
  Matrix xs = gaussian(20, 2, 81);
  std::vector<Attribution> attrs;
  for (Eigen::Index i = 0; i < xs.rows(); ++i) attrs.push_back(exact_shapley(f, xs.row(i), bg));
  std::vector<std::string> names = {"up", "down"};
  auto r = global_importance(attrs, xs, names);
  for (const auto& e : r) EXPECT_EQ(e.sign, e.feature == 0 ? 1 : -1);
}

TEST(Importance, TiesKeepFeatureOrder) {
  std::vector<Attribution> attrs(1);
  attrs[0].phi = {0.5, 0.5, -0.5};
  Matrix values = Matrix::Zero(1, 3);
  std::vector<std::string> names = {"a", "b", "c"};
  auto r = global_importance(attrs, values, names);
  EXPECT_EQ(r[0].feature, 0u);
  EXPECT_EQ(r[1].feature, 1u);
  EXPECT_EQ(r[2].feature, 2u);
  EXPECT_THROW(global_importance(std::span<const Attribution>{}, values, names), Error);
}

TEST(ForcePlot, Example) {
  Attribution a;
  a.phi = {0.3, -0.5};
  a.base_value = 6.0;
  a.prediction = 5.8;
  std::vector<double> values = {1.0, 2.0};
  std::vector<std::string> names = {"x0", "x1"};
  auto fp = force_plot_data(a, values, names);
  EXPECT_DOUBLE_EQ(fp.base_value, 6.0);
  EXPECT_DOUBLE_EQ(fp.output, 5.8);
  ASSERT_EQ(fp.items.size(), 2u);
  EXPECT_EQ(fp.items[0].name, "x1");
  EXPECT_FALSE(fp.items[0].positive);
  EXPECT_TRUE(fp.items[1].positive);
  EXPECT_DOUBLE_EQ(fp.items[1].value, 1.0);
}

TEST(Selection, TopFraction) {
  ImportanceRanking r;
  for (std::size_t f : {3u, 0u, 2u, 1u}) r.push_back({f, "f" + std::to_string(f), 1.0, 0});
  EXPECT_EQ(select_top_fraction(r, 0.5), (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(select_top_fraction(r, 0.75), (std::vector<std::size_t>{0, 2, 3}));
  EXPECT_EQ(select_top_fraction(r, 0.3), (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(select_top_fraction(r, 0.25), (std::vector<std::size_t>{3}));
  EXPECT_EQ(select_top_fraction(r, 1.0).size(), 4u);
  EXPECT_THROW(select_top_fraction(r, 0.0), Error);
  EXPECT_THROW(select_top_fraction(r, 1.5), Error);
}

TEST(Selection, Groups) {
  auto schema = default_schema(kDefaultWeeks);
  EXPECT_EQ(select_group(schema, FeatureGroup::weather).size(), 6u * kDefaultWeeks);
  EXPECT_EQ(select_group(schema, FeatureGroup::soil).size() + select_group(schema, FeatureGroup::phenology).size(),
            kNumStaticFeatures);
}

TEST(Selection, RestrictAndMask) {
  auto t = generate_synthetic(default_synth_spec(4, 2));
  std::vector<std::size_t> keep = {0, 5, 9};
  auto r = restrict_columns(t, keep);
  EXPECT_EQ(r.d(), 3u);
  EXPECT_EQ(r.descriptors[1].name, t.descriptors[5].name);
  EXPECT_EQ(r.rows.col(2), t.rows.col(9));
  EXPECT_EQ(r.target, t.target);
  Matrix m = mask_columns(t.rows, keep, 0.0);
  EXPECT_EQ(m.cols(), t.rows.cols());
  EXPECT_EQ(m.col(5), t.rows.col(5));
  EXPECT_TRUE(m.col(1).isZero(0.0));
}
