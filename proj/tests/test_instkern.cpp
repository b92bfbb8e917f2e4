#include <gtest/gtest.h>

#include <numeric>

#include "oracles/oracle_values.hpp"
#include "yieldbench/instkern.hpp"

using namespace yieldbench;

namespace {

Matrix as_matrix(const std::vector<double>& flat, Eigen::Index cols) {
  const Eigen::Index rows = static_cast<Eigen::Index>(flat.size()) / cols;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = flat[static_cast<std::size_t>(i * cols + j)];
  return m;
}

Matrix gaussian(int n, int d, Rng& rng) {
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Plain scan: sort all rows by (distance, index) and average the first k.
double brute_knn(const Matrix& x, const Vector& y, int k, const Eigen::RowVectorXd& q) {
  std::vector<std::pair<double, Eigen::Index>> d;
  for (Eigen::Index i = 0; i < x.rows(); ++i) d.push_back({(x.row(i) - q).norm(), i});
  std::sort(d.begin(), d.end());
  double s = 0.0;
  for (int j = 0; j < k; ++j) s += y(d[static_cast<std::size_t>(j)].second);
  return s / k;
}

}  // namespace

TEST(Distance, Examples) {
  std::vector<double> a = {0, 0}, b = {3, 4};
  EXPECT_DOUBLE_EQ(euclidean_distance(a, b), 5.0);
  EXPECT_DOUBLE_EQ(euclidean_distance(b, b), 0.0);
  std::vector<double> p = {1, 2, 3}, q = {2, 3, 4};
  EXPECT_DOUBLE_EQ(euclidean_distance(p, q), std::sqrt(3.0));
  EXPECT_THROW(euclidean_distance(a, p), DimensionError);
}

TEST(Knn, NearestByDistance) {
  Matrix x(2, 1);
  x << 0, 10;
  Vector y(2);
  y << 1, 5;
  Matrix q(1, 1);
  q << 1;
  EXPECT_DOUBLE_EQ(fit_knn(x, y, 1).predict(q)(0), 1.0);
}

TEST(Knn, FullNeighbourhoodGivesMean) {
  Rng rng(1);
  Matrix x = gaussian(12, 3, rng);
  Vector y = gaussian(12, 1, rng).col(0);
  auto m = fit_knn(x, y, 12);
  Matrix q = gaussian(4, 3, rng);
  for (double v : to_std(m.predict(q))) EXPECT_NEAR(v, y.mean(), 1e-12);
}

TEST(Knn, TieGoesToLowerIndex) {
  Matrix x(3, 1);
  x << 2, -2, 0;
  Vector y(3);
  y << 7, 9, 100;
  Matrix q(1, 1);
  q << 0;
  auto m = fit_knn(x.topRows(2), y.head(2), 1);
  EXPECT_DOUBLE_EQ(m.predict(q)(0), 7.0);
  Matrix x2(2, 1);
  x2 << -2, 2;
  Vector y2(2);
  y2 << 9, 7;
  EXPECT_DOUBLE_EQ(fit_knn(x2, y2, 1).predict(q)(0), 9.0);
}

TEST(Knn, TrainingPointReturnsItsTarget) {
  Rng rng(2);
  Matrix x = gaussian(30, 4, rng);
  Vector y = gaussian(30, 1, rng).col(0);
  auto m = fit_knn(x, y, 1);
  EXPECT_EQ(m.predict(x), y);
}

TEST(Knn, MatchesBruteForceScan) {
  for (std::uint64_t s = 0; s < 40; ++s) {
    Rng rng(s);
    const int n = 5 + static_cast<int>(s * 5 % 196);
    const int d = 1 + static_cast<int>(s % 4);
    Matrix x = gaussian(n, d, rng);
    if (s % 3 == 0) x = x.array().round();  // force many distance ties
    Vector y = gaussian(n, 1, rng).col(0);
    const int k = 1 + static_cast<int>(s % 7) % n;
    auto m = fit_knn(x, y, k);
    Matrix q = gaussian(10, d, rng);
    if (s % 3 == 0) q = q.array().round();
    Vector p = m.predict(q);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      EXPECT_NEAR(p(i), brute_knn(x, y, k, q.row(i)), 1e-12) << "seed " << s;
      EXPECT_GE(p(i), y.minCoeff());
      EXPECT_LE(p(i), y.maxCoeff());
    }
  }
}

TEST(Knn, MatchesScikitLearn) {
  auto m = fit_knn(as_matrix(oracle::knn_x, 2), to_vector(oracle::knn_y), 3);
  Vector p = m.predict(as_matrix(oracle::knn_q, 2));
  for (std::size_t i = 0; i < oracle::knn_pred.size(); ++i) EXPECT_NEAR(p(static_cast<Eigen::Index>(i)), oracle::knn_pred[i], 1e-12);
}

TEST(Svr, ConstantTargets) {
  Rng rng(3);
  Matrix x = gaussian(40, 3, rng);
  Vector y = Vector::Constant(40, 2.5);
  SvrParams p;
  p.epsilon = 0.1;
  auto m = fit_svr(x, y, p);
  EXPECT_LT(m.weights.cwiseAbs().maxCoeff(), 1e-3);
  for (double v : to_std(predict_linear(m, x))) EXPECT_NEAR(v, 2.5, 1e-3);
}

TEST(Svr, ExactlyLinearDataInsideTube) {
  Matrix x(21, 1);
  for (int i = 0; i < 21; ++i) x(i, 0) = -1.0 + 0.1 * i;
  Vector y = 2.0 * x.col(0);
  SvrParams p;
  p.c = 10.0;
  p.epsilon = 0.1;
  p.iterations = 20000;
  auto m = fit_svr(x, y, p);
  Vector r = y - predict_linear(m, x);
  EXPECT_LE(r.cwiseAbs().maxCoeff(), 0.1 + 1e-3);
}

TEST(Svr, ObjectiveTraceNonIncreasingAndBelowStart) {
  Rng rng(4);
  Matrix x = gaussian(60, 5, rng);
  Vector y = x * Vector::LinSpaced(5, -1, 1) + 0.3 * gaussian(60, 1, rng).col(0);
  auto fit = fit_svr_traced(x, y, {});
  for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
    EXPECT_LE(fit.objective_trace[t], fit.objective_trace[t - 1]);
  EXPECT_LE(fit.model.objective, fit.objective_trace.front());
  EXPECT_LT(fit.model.objective, 0.5 * fit.objective_trace.front());
}

TEST(Svr, ApproachesConvexSolverOptimum) {
  Matrix x = as_matrix(oracle::svr_x, 3);
  SvrParams p;
  p.c = 1.0;
  p.epsilon = 0.1;
  p.iterations = 50000;
  auto m = fit_svr(x, to_vector(oracle::svr_y), p);
  EXPECT_GE(m.objective, oracle::svr_objective - 1e-6);
  EXPECT_LT(m.objective - oracle::svr_objective, 1e-3 * oracle::svr_objective);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(m.weights(j), oracle::svr_w[static_cast<std::size_t>(j)], 0.05);
}

TEST(Svr, RejectsNonPositiveC) {
  Matrix x = Matrix::Ones(3, 1);
  Vector y = Vector::Ones(3);
  SvrParams p;
  p.c = 0.0;
  EXPECT_THROW(fit_svr(x, y, p), Error);
}
