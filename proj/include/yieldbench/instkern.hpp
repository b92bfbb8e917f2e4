#pragma once

// K-nearest-neighbour regression and linear epsilon-insensitive SVR.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "yieldbench/common.hpp"
#include "yieldbench/linmod.hpp"

namespace yieldbench {

inline double euclidean_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("euclidean_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (q[i] - p[i]) * (q[i] - p[i]);
  return std::sqrt(s);
}

class KnnModel {
 public:
  KnnModel() = default;
  KnnModel(Matrix x, Vector y, int k) : x_(std::move(x)), y_(std::move(y)), k_(k) {
    if (x_.rows() != y_.size()) throw DimensionError("knn: X and y row counts differ");
    if (k_ < 1 || k_ > x_.rows()) throw Error("knn: k must be in [1, n]");
  }

  int k() const { return k_; }
  const Matrix& train_x() const { return x_; }
  const Vector& train_y() const { return y_; }

  // Unweighted mean of the k nearest rows; distance ties go to the lower row index.
  double predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& q) const {
    if (q.size() != x_.cols()) throw DimensionError("knn: query has wrong dimension");
    const auto n = static_cast<std::size_t>(x_.rows());
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i)
      dist[i] = {(x_.row(static_cast<Eigen::Index>(i)) - q).squaredNorm(), i};
    const auto k = static_cast<std::size_t>(k_);
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += y_(static_cast<Eigen::Index>(dist[i].second));
    return s / static_cast<double>(k);
  }

  Vector predict(const Matrix& q) const {
    Vector out(q.rows());
    for (Eigen::Index i = 0; i < q.rows(); ++i) out(i) = predict_one(q.row(i));
    return out;
  }

 private:
  Matrix x_;
  Vector y_;
  int k_ = 1;
};

inline KnnModel fit_knn(const Matrix& x, const Vector& y, int k) { return KnnModel(x, y, k); }

struct SvrParams {
  double c = 1.0;
  double epsilon = 0.1;
  double step = 0.0;  // base step size; 0 = derived from the data scale
  int iterations = 5000;
};

namespace detail {

inline double svr_objective(const Matrix& x, const Vector& y, const Vector& w, double b, const SvrParams& p) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double r = y(i) - x.row(i).dot(w) - b;
    loss += std::max(0.0, std::abs(r) - p.epsilon);
  }
  return 0.5 * w.squaredNorm() + p.c * loss;
}

}  // namespace detail

struct SvrFit {
  LinearModel model;
  std::vector<double> objective_trace;  // best-so-far objective, sampled every iteration
};

// Full-batch subgradient descent on
//   1/2 ||w||^2 + C sum_i max(0, |y_i - w'x_i - b| - eps)
// with step_t = step / sqrt(t). The subgradient of the loss at |r| = eps is
// taken as 0. Returns the best iterate seen.
inline SvrFit fit_svr_traced(const Matrix& x, const Vector& y, const SvrParams& p) {
  if (!(p.c > 0.0)) throw Error("fit_svr: C must be > 0");
  if (!(p.epsilon >= 0.0)) throw Error("fit_svr: epsilon must be >= 0");
  if (x.rows() < 1 || x.rows() != y.size()) throw DimensionError("fit_svr: bad X/y shapes");
  const Eigen::Index d = x.cols();
  const double n = static_cast<double>(x.rows());

  double step0 = p.step;
  if (step0 <= 0.0) {
    const double scale = 1.0 + x.rowwise().squaredNorm().mean();
    step0 = 1.0 / (1.0 + p.c * n * std::sqrt(scale));
  }

  Vector w = Vector::Zero(d);
  double b = y.mean();
  Vector best_w = w;
  double best_b = b;
  double best = detail::svr_objective(x, y, w, b, p);

  SvrFit fit;
  fit.objective_trace.reserve(static_cast<std::size_t>(std::max(0, p.iterations)) + 1);
  fit.objective_trace.push_back(best);
  Vector grad_w(d);
  for (int t = 1; t <= p.iterations; ++t) {
    grad_w = w;
    double grad_b = 0.0;
    Vector resid = y - x * w;
    resid.array() -= b;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double r = resid(i);
      if (std::abs(r) > p.epsilon) {
        const double s = r > 0 ? 1.0 : -1.0;
        grad_w.noalias() -= p.c * s * x.row(i).transpose();
        grad_b -= p.c * s;
      }
    }
    const double eta = step0 / std::sqrt(static_cast<double>(t));
    w -= eta * grad_w;
    b -= eta * grad_b;
    const double obj = detail::svr_objective(x, y, w, b, p);
    if (obj < best) {
      best = obj;
      best_w = w;
      best_b = b;
    }
    fit.objective_trace.push_back(best);
  }
  fit.model.kind = LinearKind::svr;
  fit.model.weights = best_w;
  fit.model.intercept = best_b;
  fit.model.lambda = 1.0 / p.c;
  fit.model.iterations = p.iterations;
  fit.model.objective = best;
  return fit;
}

inline LinearModel fit_svr(const Matrix& x, const Vector& y, const SvrParams& p) {
  return fit_svr_traced(x, y, p).model;
}

}  // namespace yieldbench
