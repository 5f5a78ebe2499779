#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "mfblue/errors.hpp"
#include "mfblue/regression.hpp"
#include "mfblue/types.hpp"

namespace mfblue {

namespace detail {

inline Eigen::MatrixXd spd_inverse(const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& eig) {
  return eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

/// Inverse of the covariance block for one group, with a condition guard.
inline Eigen::MatrixXd group_covariance_inverse(const MomentSet& moments,
                                                const ModelSubset& group) {
  const Eigen::MatrixXd sigma_t = moments.covariance_block(group);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma_t);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > 0.0) || lmax / lmin > 1e12)
    throw SingularGroupCovariance("covariance of group " + group.to_string() +
                                  " is singular (condition > 1e12)");
  return spd_inverse(eig);
}

/// Adds weight * R_T^T M R_T into an accumulator laid out on `universe`.
inline void scatter_add(Eigen::MatrixXd& acc, const ModelSubset& universe,
                        const ModelSubset& group, const Eigen::MatrixXd& m, double weight) {
  for (int i = 0; i < group.size(); ++i) {
    const int gi = universe.position_of(group[i]);
    for (int j = 0; j < group.size(); ++j)
      acc(gi, universe.position_of(group[j])) += weight * m(i, j);
  }
}

inline void scatter_add_vector(Eigen::VectorXd& acc, const ModelSubset& universe,
                               const ModelSubset& group, const Eigen::VectorXd& v) {
  for (int i = 0; i < group.size(); ++i) acc[universe.position_of(group[i])] += v[i];
}

struct NormalMatrixSolve {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  Eigen::MatrixXd psi;
};

/// Assembles Psi = sum_T m_T R_T^T Sigma_T^{-1} R_T and factors it,
/// throwing if the positive-count groups fail to identify every index.
inline NormalMatrixSolve factor_normal_matrix(const MomentSet& moments,
                                              const SampleAllocation& alloc) {
  const int k = moments.size();
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(k, k);
  for (const auto& [group, m] : alloc) {
    if (m <= 0.0) continue;
    if (!group.is_subset_of(moments.indices))
      throw NotASubset("allocation group " + group.to_string() + " outside universe " +
                       moments.indices.to_string());
    scatter_add(psi, moments.indices, group, group_covariance_inverse(moments, group), m);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(psi);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > 0.0) || lmax / lmin > 1e12)
    throw SingularNormalMatrix(
        "allocation does not identify all indices of " + moments.indices.to_string() +
        " (normal matrix singular)");
  NormalMatrixSolve out;
  out.psi = psi;
  out.ldlt.compute(psi);
  return out;
}

}  // namespace detail

/// The normal equations of the grouped linear model: Psi mu = rhs.
struct BlueSystem {
  ModelSubset universe;
  Eigen::MatrixXd normal_matrix;
  Eigen::VectorXd rhs;
};

inline BlueSystem build_blue_system(const MomentSet& moments, const SampleAllocation& alloc,
                                    const GroupedSamples& samples) {
  const int k = moments.size();
  BlueSystem sys;
  sys.universe = moments.indices;
  sys.normal_matrix = Eigen::MatrixXd::Zero(k, k);
  sys.rhs = Eigen::VectorXd::Zero(k);
  for (const auto& [group, m] : alloc) {
    if (m <= 0.0) continue;
    if (m != std::floor(m)) throw OutOfDomain("blue system needs an integer allocation");
    auto it = samples.per_group.find(group);
    if (it == samples.per_group.end())
      throw DimensionMismatch("no samples provided for group " + group.to_string());
    const Eigen::MatrixXd& w = it->second;
    if (w.rows() != static_cast<long>(m) || w.cols() != group.size())
      throw DimensionMismatch("group " + group.to_string() + " expects " +
                              std::to_string(static_cast<long>(m)) + "x" +
                              std::to_string(group.size()) + " samples");
    const Eigen::MatrixXd sigma_inv = detail::group_covariance_inverse(moments, group);
    detail::scatter_add(sys.normal_matrix, moments.indices, group, sigma_inv, m);
    const Eigen::VectorXd col_sums = w.colwise().sum();
    detail::scatter_add_vector(sys.rhs, moments.indices, group, sigma_inv * col_sums);
  }
  return sys;
}

/// Multilevel BLUE of the mean vector: the reweighted least-squares
/// solution of the stacked grouped observation model.
inline Eigen::VectorXd blue_estimate(const MomentSet& moments, const SampleAllocation& alloc,
                                     const GroupedSamples& samples) {
  BlueSystem sys = build_blue_system(moments, alloc, samples);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sys.normal_matrix);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > 0.0) || lmax / lmin > 1e12)
    throw SingularNormalMatrix("allocation does not identify all indices of " +
                               moments.indices.to_string());
  return detail::spd_inverse(eig) * sys.rhs;
}

/// Variance of the a-sketch of the BLUE under a (possibly continuous)
/// allocation: a^T Psi^{-1} a.
inline double blue_sketch_variance(const MomentSet& moments, const SampleAllocation& alloc,
                                   const Eigen::VectorXd& a) {
  if (a.size() != moments.size())
    throw DimensionMismatch("sketch length does not match universe size");
  auto solve = detail::factor_normal_matrix(moments, alloc);
  return a.dot(solve.ldlt.solve(a));
}

/// Variance of the inner product of two independent random vectors given
/// their first two moments:
///   tr(Cov[Y] Cov[X]) + E[Y]^T Cov[X] E[Y] + E[X]^T Cov[Y] E[X].
inline double inner_product_variance(const Eigen::VectorXd& mean_x, const Eigen::MatrixXd& cov_x,
                                     const Eigen::VectorXd& mean_y,
                                     const Eigen::MatrixXd& cov_y) {
  const auto d = mean_x.size();
  if (mean_y.size() != d || cov_x.rows() != d || cov_x.cols() != d || cov_y.rows() != d ||
      cov_y.cols() != d)
    throw DimensionMismatch("inner_product_variance: dimensions disagree");
  return (cov_y * cov_x).trace() + mean_y.dot(cov_x * mean_y) + mean_x.dot(cov_y * mean_x);
}

/// Discrepancy between the regression form a_S + mu_hat_S^T b_S and its
/// control-variate form mu_bar_0 - b_S^T (mu_bar_S - mu_hat_S). These are
/// algebraically identical for a least-squares fit, so the return value
/// is roundoff-sized for any consistent inputs.
inline double lrmc_acv_identity_check(const ExplorationData& data, const RegressionFit& fit,
                                      const Eigen::VectorXd& mu_hat_s) {
  if (mu_hat_s.size() != fit.subset.size())
    throw DimensionMismatch("mu_hat_S length does not match fitted subset");
  const double mu_bar_0 = data.samples.col(0).mean();
  Eigen::VectorXd mu_bar_s(fit.subset.size());
  for (int j = 0; j < fit.subset.size(); ++j) mu_bar_s[j] = data.samples.col(fit.subset[j]).mean();
  const double regression_form = fit.intercept + mu_hat_s.dot(fit.coefficients);
  const double acv_form = mu_bar_0 - fit.coefficients.dot(mu_bar_s - mu_hat_s);
  return std::abs(regression_form - acv_form);
}

/// Result of comparing the joint-sample BLUE against the idealized
/// regression estimator built from the same exploration and exploitation
/// samples.
struct BlueLrmcGap {
  double gap = 0.0;           ///< |first BLUE component - idealized estimator|
  double delta_norm = 0.0;    ///< ||Delta||_2 with Delta = q Xi^{-1} Sigma_S^{-1}
  double mu_gap_norm = 0.0;   ///< ||mu_bar_S - mu_hat_S||_2
  bool delta_large = false;   ///< set when ||Delta||_2 >= 1/2
};

/// Evaluates both sides of the estimator-matching bound: the BLUE that
/// treats the q exploration rows as one full-ensemble group plus the
/// exploitation groups over S, versus mu_bar_0 - b_S^T(mu_bar_S - mu_hat_S)
/// where mu_hat_S is the exploitation-only BLUE of the S-means.
///
/// The gap is O(||Delta||_2 ||mu_bar_S - mu_hat_S||_2); q = 0 denotes the
/// limit with the exploration weight removed, where the two estimators
/// coincide exactly.
inline BlueLrmcGap blue_vs_lrmcstar_gap(const MomentSet& moments, int q, const ModelSubset& s,
                                        const SampleAllocation& alloc,
                                        const GroupedSamples& samples,
                                        const ExplorationData& exploration,
                                        const Eigen::VectorXd& b_s) {
  if (q < 0) throw OutOfDomain("exploration weight q must be nonnegative");
  if (!s.is_subset_of(moments.indices) || s.contains(0))
    throw NotASubset("S must be a low-fidelity subset of the universe");
  if (b_s.size() != s.size()) throw DimensionMismatch("b_S length does not match |S|");

  const MomentSet moments_s = moments.restricted(s);

  // Exploitation-only system over S: Xi and chi.
  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(s.size(), s.size());
  Eigen::VectorXd chi = Eigen::VectorXd::Zero(s.size());
  for (const auto& [group, m] : alloc) {
    if (m <= 0.0) continue;
    if (!group.is_subset_of(s))
      throw NotASubset("exploitation group " + group.to_string() + " must lie inside S");
    const Eigen::MatrixXd sigma_inv = detail::group_covariance_inverse(moments, group);
    detail::scatter_add(xi, s, group, sigma_inv, m);
    auto it = samples.per_group.find(group);
    if (it == samples.per_group.end())
      throw DimensionMismatch("no samples for group " + group.to_string());
    detail::scatter_add_vector(chi, s, group, sigma_inv * it->second.colwise().sum().transpose());
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_xi(xi);
  if (!(eig_xi.eigenvalues().minCoeff() > 0.0) ||
      eig_xi.eigenvalues().maxCoeff() / eig_xi.eigenvalues().minCoeff() > 1e12)
    throw SingularNormalMatrix("exploitation allocation does not identify S");
  const Eigen::VectorXd mu_hat_s = detail::spd_inverse(eig_xi) * chi;

  // Exploration sample means over the full universe.
  const Eigen::VectorXd mu_bar = exploration.samples.colwise().mean();
  Eigen::VectorXd mu_bar_s(s.size());
  for (int j = 0; j < s.size(); ++j) mu_bar_s[j] = mu_bar[moments.indices.position_of(s[j])];

  BlueLrmcGap out;
  out.mu_gap_norm = (mu_bar_s - mu_hat_s).norm();

  const Eigen::MatrixXd sigma_s_inv = detail::group_covariance_inverse(moments, s);
  const Eigen::MatrixXd delta =
      static_cast<double>(q) * detail::spd_inverse(eig_xi) * sigma_s_inv;
  out.delta_norm = delta.jacobiSvd().singularValues()(0);
  out.delta_large = out.delta_norm >= 0.5;

  const double lrmc_star = mu_bar[0] - b_s.dot(mu_bar_s - mu_hat_s);

  if (q == 0) {
    out.gap = 0.0;
    return out;
  }

  // Joint BLUE: exploration rows enter as q samples of the full group.
  const Eigen::MatrixXd sigma_full_inv =
      detail::group_covariance_inverse(moments, moments.indices);
  Eigen::MatrixXd psi = static_cast<double>(q) * sigma_full_inv;
  Eigen::VectorXd rhs = sigma_full_inv * (static_cast<double>(q) * mu_bar);
  for (const auto& [group, m] : alloc) {
    if (m <= 0.0) continue;
    const Eigen::MatrixXd sigma_inv = detail::group_covariance_inverse(moments, group);
    detail::scatter_add(psi, moments.indices, group, sigma_inv, m);
    const Eigen::VectorXd col_sums = samples.per_group.at(group).colwise().sum();
    detail::scatter_add_vector(rhs, moments.indices, group, sigma_inv * col_sums);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_psi(psi);
  if (!(eig_psi.eigenvalues().minCoeff() > 0.0) ||
      eig_psi.eigenvalues().maxCoeff() / eig_psi.eigenvalues().minCoeff() > 1e12)
    throw SingularNormalMatrix("joint normal matrix singular");
  const Eigen::VectorXd mu_blue = detail::spd_inverse(eig_psi) * rhs;

  out.gap = std::abs(mu_blue[moments.indices.position_of(0)] - lrmc_star);
  return out;
}

}  // namespace mfblue
