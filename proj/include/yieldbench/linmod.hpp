#pragma once

// Ridge (direct symmetric solve) and lasso (cyclic coordinate descent).
//
// Penalty conventions:
//   ridge:  minimize ||y - Xw - b||^2 + lambda ||w||^2
//           i.e. (Xc'Xc + lambda I) w = Xc'yc on centered data
//   lasso:  minimize (1/2n) ||y - Xw - b||^2 + lambda ||w||_1
//           so that lambda_max = max_j |Xc_j' yc| / n zeroes every weight.
// The intercept is never penalized; it is recovered from the column means.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "yieldbench/common.hpp"

namespace yieldbench {

enum class LinearKind { ridge, lasso, svr };

inline std::string_view to_string(LinearKind k) {
  switch (k) {
    case LinearKind::ridge: return "ridge";
    case LinearKind::lasso: return "lasso";
    case LinearKind::svr: return "svr";
  }
  return "?";
}

struct LinearModel {
  LinearKind kind = LinearKind::ridge;
  Vector weights;
  double intercept = 0.0;
  double lambda = 0.0;
  // Solver diagnostics (lasso / svr).
  bool converged = true;
  int iterations = 0;
  double objective = 0.0;
};

inline Vector predict_linear(const LinearModel& m, const Matrix& x) {
  if (x.cols() != m.weights.size())
    throw DimensionError("predict_linear: expected " + std::to_string(m.weights.size()) + " columns, got " +
                         std::to_string(x.cols()));
  return (x * m.weights).array() + m.intercept;
}

namespace detail {

struct Centered {
  Matrix x;
  Vector y;
  Eigen::RowVectorXd x_mean;
  double y_mean = 0.0;
};

inline Centered center(const Matrix& x, const Vector& y, bool fit_intercept) {
  Centered c;
  if (fit_intercept) {
    c.x_mean = x.colwise().mean();
    c.y_mean = y.mean();
    c.x = x.rowwise() - c.x_mean;
    c.y = y.array() - c.y_mean;
  } else {
    c.x_mean = Eigen::RowVectorXd::Zero(x.cols());
    c.x = x;
    c.y = y;
  }
  return c;
}

inline void check_xy(const Matrix& x, const Vector& y, const char* who) {
  if (x.rows() < 1) throw Error(std::string(who) + ": need at least one row");
  if (x.rows() != y.size()) throw DimensionError(std::string(who) + ": X and y row counts differ");
}

}  // namespace detail

inline LinearModel fit_ridge(const Matrix& x, const Vector& y, double lambda, bool fit_intercept = true) {
  detail::check_xy(x, y, "fit_ridge");
  if (!(lambda >= 0.0)) throw Error("fit_ridge: lambda must be >= 0");
  auto c = detail::center(x, y, fit_intercept);
  Matrix gram = c.x.transpose() * c.x;
  gram.diagonal().array() += lambda;
  Vector rhs = c.x.transpose() * c.y;

  Eigen::LDLT<Matrix> ldlt(gram);
  const Vector diag = ldlt.vectorD();
  const double dmax = diag.size() ? diag.cwiseAbs().maxCoeff() : 0.0;
  const double dmin = diag.size() ? diag.minCoeff() : 1.0;
  if (ldlt.info() != Eigen::Success || (diag.size() && dmin <= 1e-12 * std::max(1.0, dmax)))
    throw Error("fit_ridge: normal equations are singular; use lambda > 0");

  LinearModel m;
  m.kind = LinearKind::ridge;
  m.lambda = lambda;
  m.weights = ldlt.solve(rhs);
  m.intercept = c.y_mean - c.x_mean.dot(m.weights);
  return m;
}

struct LassoOptions {
  double tol = 1e-8;
  int max_iter = 10000;
  bool fit_intercept = true;
};

inline double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// Smallest lambda at which every lasso weight is zero.
inline double lasso_lambda_max(const Matrix& x, const Vector& y, bool fit_intercept = true) {
  auto c = detail::center(x, y, fit_intercept);
  return (c.x.transpose() * c.y).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

inline LinearModel fit_lasso(const Matrix& x, const Vector& y, double lambda, const LassoOptions& opt = {}) {
  detail::check_xy(x, y, "fit_lasso");
  if (!(lambda >= 0.0)) throw Error("fit_lasso: lambda must be >= 0");
  if (!(opt.tol > 0.0)) throw Error("fit_lasso: tol must be > 0");
  auto c = detail::center(x, y, opt.fit_intercept);
  const double n = static_cast<double>(x.rows());
  const Eigen::Index d = x.cols();

  Vector col_sq = c.x.colwise().squaredNorm().transpose() / n;
  Vector w = Vector::Zero(d);
  Vector resid = c.y;

  LinearModel m;
  m.kind = LinearKind::lasso;
  m.lambda = lambda;
  if (lambda >= (c.x.transpose() * c.y).cwiseAbs().maxCoeff() / n) {
    m.weights = w;
    m.intercept = c.y_mean;
    m.objective = resid.squaredNorm() / (2.0 * n);
    return m;
  }
  m.converged = false;
  for (int it = 1; it <= opt.max_iter; ++it) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq(j) == 0.0) continue;
      const double old = w(j);
      const double rho = c.x.col(j).dot(resid) / n + col_sq(j) * old;
      const double next = soft_threshold(rho, lambda) / col_sq(j);
      if (next != old) {
        resid.noalias() -= (next - old) * c.x.col(j);
        w(j) = next;
        max_change = std::max(max_change, std::abs(next - old));
      }
    }
    m.iterations = it;
    if (max_change < opt.tol) {
      m.converged = true;
      break;
    }
  }
  m.weights = w;
  m.intercept = c.y_mean - c.x_mean.dot(w);
  m.objective = resid.squaredNorm() / (2.0 * n) + lambda * w.lpNorm<1>();
  return m;
}

}  // namespace yieldbench
