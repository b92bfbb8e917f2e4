#include <gtest/gtest.h>

#include "oracles/oracle_values.hpp"
#include "yieldbench/neural.hpp"

using namespace yieldbench;
using namespace yieldbench::nn;

namespace {

void expect_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

// Finite-difference check of one layer against a random linear functional of
// its output; returns the max relative error over inputs and parameters.
template <class L>
double layer_fd_error(const L& layer, int in_size, int out_size, std::size_t n_params, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> p(n_params), x(static_cast<std::size_t>(in_size)), c(static_cast<std::size_t>(out_size));
  for (auto* v : {&p, &x, &c})
    for (auto& e : *v) e = g(rng);
  auto f = [&](const std::vector<double>& pp, const std::vector<double>& xx) {
    std::vector<double> out(static_cast<std::size_t>(out_size));
    layer.forward(pp.data(), xx.data(), out.data());
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
    return s;
  };
  std::vector<double> dp(n_params, 0.0), dx(static_cast<std::size_t>(in_size));
  layer.backward(p.data(), x.data(), c.data(), dx.data(), dp.data());
  const double h = 1e-6;
  double worst = 0.0;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7}); };
  for (std::size_t k = 0; k < x.size(); ++k) {
    auto up = x, dn = x;
    up[k] += h;
    dn[k] -= h;
    worst = std::max(worst, rel(dx[k], (f(p, up) - f(p, dn)) / (2 * h)));
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto up = p, dn = p;
    up[k] += h;
    dn[k] -= h;
    worst = std::max(worst, rel(dp[k], (f(up, x) - f(dn, x)) / (2 * h)));
  }
  return worst;
}

CnnArchitecture tiny_cnn() {
  return {{LayerSpec::conv(3, 3, 1), LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::conv(4, 2, 1), LayerSpec::relu(),
           LayerSpec::flatten()},
          {5, 4},
          {8, 6}};
}

Matrix random_rows(int n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Matrix x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  return x;
}

}  // namespace

TEST(Conv1d, DirectConvolution) {
  Conv1d c{1, 1, 2, 1, 4, valid_length(4, 2, 1)};
  EXPECT_EQ(c.out_len, 3);
  std::vector<double> p = {1, 1, 0}, in = {1, 2, 3, 4}, out(3);
  c.forward(p.data(), in.data(), out.data());
  EXPECT_EQ(out, std::vector<double>({3, 5, 7}));
  p = {0, 0, 2.5};
  c.forward(p.data(), in.data(), out.data());
  EXPECT_EQ(out, std::vector<double>({2.5, 2.5, 2.5}));
}

TEST(Conv1d, LengthFormula) {
  EXPECT_EQ(valid_length(45, 5, 1), 41);
  EXPECT_EQ(valid_length(41, 2, 2), 20);
  EXPECT_EQ(valid_length(9, 3, 2), 4);
  EXPECT_LT(valid_length(3, 5, 1), 1);
}

TEST(Conv1d, MatchesTorchForwardAndBackward) {
  Conv1d c{2, 3, 3, 2, 9, valid_length(9, 3, 2)};
  std::vector<double> p = oracle::conv_w;
  p.insert(p.end(), oracle::conv_b.begin(), oracle::conv_b.end());
  std::vector<double> out(static_cast<std::size_t>(3 * c.out_len));
  c.forward(p.data(), oracle::conv_in.data(), out.data());
  expect_close(out, oracle::conv_out, 1e-12);
  std::vector<double> dp(p.size(), 0.0), din(oracle::conv_in.size());
  c.backward(p.data(), oracle::conv_in.data(), oracle::conv_gout.data(), din.data(), dp.data());
  expect_close(din, oracle::conv_gin, 1e-12);
  expect_close(std::vector<double>(dp.begin(), dp.begin() + 18), oracle::conv_gw, 1e-12);
  expect_close(std::vector<double>(dp.begin() + 18, dp.end()), oracle::conv_gb, 1e-12);
}

TEST(AvgPool1d, WindowMeans) {
  AvgPool1d p{1, 2, 2, 4, valid_length(4, 2, 2)};
  std::vector<double> in = {1, 3, 5, 7}, out(2);
  p.forward(nullptr, in.data(), out.data());
  EXPECT_EQ(out, std::vector<double>({2, 6}));
  in = {4, 4, 4, 4};
  p.forward(nullptr, in.data(), out.data());
  EXPECT_EQ(out, std::vector<double>({4, 4}));
  EXPECT_EQ(valid_length(41, 2, 2), 20);
}

TEST(AvgPool1d, MatchesTorch) {
  AvgPool1d p{2, 3, 2, 7, valid_length(7, 3, 2)};
  std::vector<double> out(static_cast<std::size_t>(2 * p.out_len)), din(14);
  p.forward(nullptr, oracle::pool_in.data(), out.data());
  expect_close(out, oracle::pool_out, 1e-12);
  p.backward(nullptr, oracle::pool_in.data(), oracle::pool_gout.data(), din.data(), nullptr);
  expect_close(din, oracle::pool_gin, 1e-12);
}

TEST(Dense, MatVecExamples) {
  Dense d{2, 1};
  std::vector<double> p = {2, -1, 1}, x = {3, 4}, y(1);
  d.forward(p.data(), x.data(), y.data());
  EXPECT_EQ(y[0], 3.0);
  Dense id{3, 3};
  std::vector<double> pi = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0}, x3 = {1.5, -2, 7}, y3(3);
  id.forward(pi.data(), x3.data(), y3.data());
  EXPECT_EQ(y3, x3);
  std::vector<double> pz = {0, 0, 0, 0, 0, 0, 0, 0, 0, 4, 4, 4};
  id.forward(pz.data(), x3.data(), y3.data());
  EXPECT_EQ(y3, std::vector<double>({4, 4, 4}));
}

TEST(Dense, MatchesTorch) {
  Dense d{4, 3};
  std::vector<double> p = oracle::dense_w;
  p.insert(p.end(), oracle::dense_b.begin(), oracle::dense_b.end());
  std::vector<double> out(3), dp(p.size(), 0.0), din(4);
  d.forward(p.data(), oracle::dense_in.data(), out.data());
  expect_close(out, oracle::dense_out, 1e-12);
  d.backward(p.data(), oracle::dense_in.data(), oracle::dense_gout.data(), din.data(), dp.data());
  expect_close(din, oracle::dense_gin, 1e-12);
  expect_close(std::vector<double>(dp.begin(), dp.begin() + 12), oracle::dense_gw, 1e-12);
  expect_close(std::vector<double>(dp.begin() + 12, dp.end()), oracle::dense_gb, 1e-12);
}

TEST(GradientCheck, EachLayerKindInIsolation) {
  Conv1d c{2, 3, 3, 2, 11, valid_length(11, 3, 2)};
  EXPECT_LT(layer_fd_error(c, 22, 3 * c.out_len, c.param_count(), 1), 1e-4);
  AvgPool1d p{2, 3, 2, 11, valid_length(11, 3, 2)};
  EXPECT_LT(layer_fd_error(p, 22, 2 * p.out_len, 0, 2), 1e-4);
  Dense d{6, 4};
  EXPECT_LT(layer_fd_error(d, 6, 4, d.param_count(), 3), 1e-4);
  Flatten f{7};
  EXPECT_LT(layer_fd_error(f, 7, 7, 0, 4), 1e-4);
  Relu r{9};
  EXPECT_LT(layer_fd_error(r, 9, 9, 0, 5), 1e-4);
}

TEST(Build, DefaultBranchLengths) {
  auto net = Network::cnn(default_cnn_architecture(), layout_from_descriptors(default_schema()), 1);
  std::vector<int> lengths;
  for (const auto& s : net.branch().shapes())
    if (lengths.empty() || lengths.back() != s.length) lengths.push_back(s.length);
  EXPECT_EQ(lengths, std::vector<int>({45, 41, 20, 18, 9, 7, 112}));
  EXPECT_EQ(net.branch().output_shape().size(), 112);
  EXPECT_EQ(net.head().input_shape().size(), 6 * 112 + 16);
  EXPECT_EQ(net.param_count(), net.flat_parameters().size());
}

TEST(Build, SameSeedSameWeights) {
  auto layout = layout_from_descriptors(default_schema());
  auto a = Network::cnn(default_cnn_architecture(), layout, 7);
  auto b = Network::cnn(default_cnn_architecture(), layout, 7);
  auto c = Network::cnn(default_cnn_architecture(), layout, 8);
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  EXPECT_NE(a.flat_parameters(), c.flat_parameters());
}

TEST(Build, InitBoundsAndZeroBias) {
  auto net = Network::dense({{5}}, 4, 3);
  const auto& p = net.head().params();
  const double bound = std::sqrt(6.0 / 4.0);
  for (int i = 0; i < 20; ++i) EXPECT_LE(std::abs(p[static_cast<std::size_t>(i)]), bound);
  for (int i = 20; i < 25; ++i) EXPECT_EQ(p[static_cast<std::size_t>(i)], 0.0);
}

TEST(Build, ShortInputNamesFirstLayer) {
  try {
    Network::cnn(default_cnn_architecture(), layout_from_descriptors(default_schema(3)), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("weather_branch layer 1 (conv1d)"), std::string::npos) << e.what();
  }
}

TEST(Build, BranchConcatenationOrder) {
  auto desc = default_schema(12);
  auto layout = layout_from_descriptors(desc);
  auto net = Network::cnn(tiny_cnn(), layout, 5);
  Matrix x = random_rows(1, desc.size(), 9);
  auto base = net.head_input(x.row(0));
  // Swap the tmin and precip series; branch outputs swap slots, everything else stays.
  Matrix swapped = x;
  for (std::size_t w = 0; w < 12; ++w)
    std::swap(swapped(0, static_cast<Eigen::Index>(layout.weather[0][w])),
              swapped(0, static_cast<Eigen::Index>(layout.weather[2][w])));
  auto other = net.head_input(swapped.row(0));
  const std::size_t width = static_cast<std::size_t>(net.branch().output_shape().size());
  for (std::size_t k = 0; k < width; ++k) {
    EXPECT_EQ(base[k], other[2 * width + k]);
    EXPECT_EQ(base[2 * width + k], other[k]);
    EXPECT_EQ(base[width + k], other[width + k]);
  }
  for (std::size_t k = 6 * width; k < base.size(); ++k) EXPECT_EQ(base[k], other[k]);
}

TEST(GradientCheck, TinyCnnBelowTolerance) {
  auto desc = default_schema(12);
  auto net = Network::cnn(tiny_cnn(), layout_from_descriptors(desc), 11);
  ASSERT_LE(net.param_count(), 5000u);
  Matrix x = random_rows(4, desc.size(), 12);
  Vector y = random_rows(4, 1, 13).col(0);
  auto r = finite_difference_check(net, x, y, 1e-5);
  EXPECT_EQ(r.params_checked, net.param_count());
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradientCheck, LinearNetIsExact) {
  auto net = Network::dense({{}}, 5, 3);
  Matrix x = random_rows(6, 5, 4);
  Vector y = random_rows(6, 1, 5).col(0);
  EXPECT_LT(finite_difference_check(net, x, y, 1e-5).max_rel_error, 1e-8);
}

TEST(Train, ZeroEpochsLeavesWeights) {
  auto net = Network::dense({{8}}, 3, 1);
  Matrix x = random_rows(20, 3, 2);
  Vector y = x.col(0);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  auto t = train_network(net, x, y, cfg);
  EXPECT_EQ(t.net.flat_parameters(), net.flat_parameters());
  EXPECT_TRUE(t.history.train_loss.empty());
}

TEST(Train, ConstantTarget) {
  auto net = Network::dense({{8}}, 3, 1);
  Matrix x = random_rows(64, 3, 3);
  Vector y = Vector::Constant(64, 6.5);
  TrainConfig cfg;
  cfg.max_epochs = 1000;
  cfg.adam.lr = 1e-2;
  cfg.validation_fraction = 0.0;
  auto t = train_network(net, x, y, cfg);
  for (double v : to_std(t.predict(random_rows(5, 3, 4)))) EXPECT_NEAR(v, 6.5, 1e-2);
}

TEST(Train, DeterministicHistory) {
  auto desc = default_schema(12);
  auto net = Network::cnn(tiny_cnn(), layout_from_descriptors(desc), 3);
  Matrix x = random_rows(50, desc.size(), 6);
  Vector y = x.col(10) + x.col(0);
  TrainConfig cfg;
  cfg.max_epochs = 8;
  auto a = train_network(net, x, y, cfg);
  auto b = train_network(net, x, y, cfg);
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  EXPECT_EQ(a.history.val_loss, b.history.val_loss);
  EXPECT_EQ(a.net.flat_parameters(), b.net.flat_parameters());
}

TEST(Train, NoiselessLinearDataLossBelowThreshold) {
  auto net = Network::dense(default_dense_architecture(), 6, 2);
  Matrix x = random_rows(200, 6, 7);
  Vector y = x * Vector::LinSpaced(6, -1.0, 1.5);
  TrainConfig cfg;
  cfg.validation_fraction = 0.0;
  auto t = train_network(net, x, y, cfg);
  EXPECT_LT(*std::min_element(t.history.train_loss.begin(), t.history.train_loss.end()), 1e-3);
}

TEST(Train, DivergenceReportsLearningRate) {
  auto net = Network::dense({{16}}, 3, 1);
  Matrix x = 1e200 * random_rows(40, 3, 8);
  Vector y = x.col(0);
  TrainConfig cfg;
  cfg.adam.lr = 1e3;
  cfg.max_epochs = 20;
  try {
    train_network(net, x, y, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("learning rate"), std::string::npos) << e.what();
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.adam.lr = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.adam.lr = 1e-3;
  cfg.validation_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
}
