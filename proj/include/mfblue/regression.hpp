#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "mfblue/errors.hpp"
#include "mfblue/types.hpp"

namespace mfblue {

/// Least-squares fit of the joint linear model Q_0 = a_S + Q_S^T b_S + eps
/// on exploration data, together with the residual variance estimate.
struct RegressionFit {
  ModelSubset subset;
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  double residual_variance = 0.0;
  int q = 0;
};

namespace detail {

/// Design matrix (1, Q_S) for subset S from joint exploration rows.
inline Eigen::MatrixXd design_matrix(const ExplorationData& data, const ModelSubset& s) {
  const int q = data.q();
  Eigen::MatrixXd z(q, s.size() + 1);
  z.col(0).setOnes();
  for (int j = 0; j < s.size(); ++j) {
    const int col = s[j];
    if (col >= data.num_models())
      throw NotASubset("model index " + std::to_string(col) + " outside ensemble");
    z.col(j + 1) = data.samples.col(col);
  }
  return z;
}

}  // namespace detail

/// Fits Q_0 on (1, Q_S) by Householder QR. The residual variance uses the
/// unbiased divisor q - |S| - 1. Rank deficiency is declared when the
/// triangular factor's condition number exceeds 1e12.
inline RegressionFit fit_linear_model(const ExplorationData& data, const ModelSubset& s) {
  if (s.empty() || s.contains(0)) throw NotASubset("regression subset must be within {1..n}");
  const int q = data.q();
  const int p = s.size() + 1;
  if (q < s.size() + 2)
    throw InsufficientSamples("need q >= |S|+2 = " + std::to_string(s.size() + 2) +
                              " exploration samples, have " + std::to_string(q));

  const Eigen::MatrixXd z = detail::design_matrix(data, s);
  const Eigen::VectorXd z0 = data.samples.col(0);

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
  const Eigen::MatrixXd r =
      qr.matrixQR().topRows(p).template triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(p - 1);
  if (!(smin > 0.0) || smax / smin > 1e12)
    throw RankDeficient("design matrix for subset " + s.to_string() +
                        " is rank deficient (condition > 1e12)");

  const Eigen::VectorXd beta = qr.solve(z0);
  const Eigen::VectorXd residuals = z0 - z * beta;

  RegressionFit fit;
  fit.subset = s;
  fit.intercept = beta[0];
  fit.coefficients = beta.tail(s.size());
  fit.residual_variance = residuals.squaredNorm() / static_cast<double>(q - s.size() - 1);
  fit.q = q;
  return fit;
}

/// Sample means, covariance (divisor q-1), and mean realized costs for a
/// subset of model indices drawn from {0..n}.
inline MomentSet empirical_moments(const ExplorationData& data, const ModelSubset& s) {
  const int q = data.q();
  if (q < 2) throw InsufficientSamples("empirical moments need q >= 2");
  if (s.empty()) throw NotASubset("empty subset");
  const int k = s.size();

  Eigen::MatrixXd x(q, k);
  Eigen::VectorXd mean_costs(k);
  for (int j = 0; j < k; ++j) {
    const int col = s[j];
    if (col >= data.num_models())
      throw NotASubset("model index " + std::to_string(col) + " outside ensemble");
    x.col(j) = data.samples.col(col);
    mean_costs[j] = data.costs.col(col).mean();
  }

  MomentSet out;
  out.indices = s;
  out.means = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - out.means.transpose();
  out.covariance = centered.transpose() * centered / static_cast<double>(q - 1);
  out.mean_costs = mean_costs;
  return out;
}

/// tr(y_S y_S^T Pi_S^{-1}) for the second-moment matrix Pi_S = E[Y_S Y_S^T]
/// of the augmented regressor Y_S = (1, Q_S^T)^T. Equals 1 whenever Pi_S
/// comes from a positive-definite covariance, independent of the mean.
inline double schur_trace_identity(const Eigen::VectorXd& y_s, const Eigen::MatrixXd& pi_s) {
  const auto p = y_s.size();
  if (pi_s.rows() != p || pi_s.cols() != p)
    throw DimensionMismatch("schur_trace_identity: y_S and Pi_S sizes disagree");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pi_s);
  const double lmax = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double lmin = eig.eigenvalues().cwiseAbs().minCoeff();
  if (!(lmin > 0.0) || lmax / lmin > 1e12 || eig.eigenvalues().minCoeff() <= 0.0)
    throw SingularMatrix("Pi_S is singular or indefinite");
  return y_s.dot(eig.operatorInverseSqrt() * (eig.operatorInverseSqrt() * y_s));
}

}  // namespace mfblue
