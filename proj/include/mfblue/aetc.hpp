#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mfblue/allocation.hpp"
#include "mfblue/ensemble.hpp"
#include "mfblue/errors.hpp"
#include "mfblue/mlblue.hpp"
#include "mfblue/regression.hpp"
#include "mfblue/rng.hpp"
#include "mfblue/types.hpp"

namespace mfblue {

/// The exploration-exploitation loss model
///   L(z) = k / z + gamma / (budget - c_r z),  0 < z < budget / c_r,
/// strictly convex with a unique interior minimizer when k, gamma > 0.
struct LossProfile {
  double k = 0.0;       ///< exploration-error constant (residual variance)
  double gamma = 0.0;   ///< exploitation-efficiency constant
  double c_r = 0.0;     ///< cost of one joint exploration draw
  double budget = 0.0;  ///< total budget B
};

inline double loss(const LossProfile& p, double z) {
  if (!(z > 0.0) || !(z < p.budget / p.c_r))
    throw OutOfDomain("loss argument outside (0, B/c_r)");
  const double exploitation = (p.gamma > 0.0) ? p.gamma / (p.budget - p.c_r * z) : 0.0;
  return p.k / z + exploitation;
}

/// Closed-form minimizer of the loss profile. Degenerate profiles (k = 0
/// or gamma = 0) return the corresponding boundary policy, flagged.
struct ExplorationRate {
  double q_star = 0.0;
  bool degenerate = false;
};

inline ExplorationRate optimal_exploration(const LossProfile& p) {
  if (!(p.c_r > 0.0) || !(p.budget > 0.0))
    throw OutOfDomain("optimal_exploration needs positive cost and budget");
  if (p.k < 0.0 || p.gamma < 0.0) throw OutOfDomain("k and gamma must be nonnegative");
  ExplorationRate out;
  if (p.k == 0.0) {
    out.q_star = 0.0;  // exploration is free of error: explore minimally
    out.degenerate = true;
    return out;
  }
  if (p.gamma == 0.0) {
    out.q_star = p.budget / p.c_r;  // exploitation is free of error
    out.degenerate = true;
    return out;
  }
  out.q_star = p.budget / (p.c_r + std::sqrt(p.c_r * p.gamma / p.k));
  return out;
}

/// Optimal loss value (sqrt(c_r k) + sqrt(gamma))^2 / B, continuous at the
/// degenerate boundaries.
inline double optimal_loss(const LossProfile& p) {
  if (!(p.c_r > 0.0) || !(p.budget > 0.0))
    throw OutOfDomain("optimal_loss needs positive cost and budget");
  if (p.k < 0.0 || p.gamma < 0.0) throw OutOfDomain("k and gamma must be nonnegative");
  const double root = std::sqrt(p.c_r * p.k) + std::sqrt(p.gamma);
  return root * root / p.budget;
}

enum class ExploitationPolicy { kOptimalBlue, kUniformMc };
enum class CovarianceSource { kOracle, kEmpirical };

/// How the committed estimator spends the exploitation budget and which
/// covariance feeds its allocation: the optimal grouped estimator pairs
/// with the allocation-derived gamma, the uniform policy with
/// c_S b_S^T Sigma_S b_S.
struct PolicyChoice {
  ExploitationPolicy exploitation_policy = ExploitationPolicy::kOptimalBlue;
  CovarianceSource covariance_source = CovarianceSource::kEmpirical;
};

/// Per-subset exploration-phase summary at the current round.
struct RegretEstimate {
  double regret = 0.0;      ///< estimated optimal loss, clamped at the current q
  double q_star_hat = 0.0;  ///< estimated optimal exploration count
  double k_hat = 0.0;       ///< regularized residual variance
  double gamma_hat = 0.0;   ///< estimated exploitation constant
  double c_r_hat = 0.0;     ///< empirical cost of one exploration draw
  double sigma2_hat = 0.0;  ///< unregularized residual variance
};

namespace detail {

inline Eigen::VectorXd absolute_cost_vector(const MomentSet& moments) {
  Eigen::VectorXd costs = Eigen::VectorXd::Zero(moments.indices.max_index() + 1);
  for (int j = 0; j < moments.size(); ++j) costs[moments.indices[j]] = moments.mean_costs[j];
  return costs;
}

/// Eigenvalue clipping at zero, the minimal symmetric PSD repair.
inline Eigen::MatrixXd clip_to_psd(const Eigen::MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  if (eig.eigenvalues().minCoeff() >= 0.0) return sigma;
  Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Estimated optimal loss of exploiting subset S after q exploration
/// rounds: L_hat_S(max(q_hat*_S, q); q). The regularizer alpha is added
/// to k_hat to encourage early exploration. With an oracle covariance
/// source, `oracle` must supply the true moments over {0..n}.
inline RegretEstimate estimated_regret(const ModelSubset& s, int q, const ExplorationData& data,
                                       const PolicyChoice& policy, double budget, double alpha,
                                       const MomentSet* oracle = nullptr) {
  if (q != data.q()) throw DimensionMismatch("q does not match the exploration data");

  RegretEstimate out;
  try {
    const RegressionFit fit = fit_linear_model(data, s);
    out.sigma2_hat = fit.residual_variance;
    out.k_hat = fit.residual_variance + alpha;
    out.c_r_hat = data.mean_exploration_cost();

    if (policy.covariance_source == CovarianceSource::kOracle) {
      if (oracle == nullptr)
        throw OutOfDomain("oracle covariance source requires oracle moments");
      const MomentSet local = oracle->restricted(s);
      if (policy.exploitation_policy == ExploitationPolicy::kUniformMc) {
        out.gamma_hat =
            gamma_uniform(s, fit.coefficients, local.covariance, local.mean_costs.sum());
      } else {
        out.gamma_hat =
            gamma_of_S(s, fit.coefficients, local, detail::absolute_cost_vector(local));
      }
    } else {
      const MomentSet empirical = empirical_moments(data, s);
      if (policy.exploitation_policy == ExploitationPolicy::kUniformMc) {
        out.gamma_hat =
            gamma_uniform(s, fit.coefficients, empirical.covariance, empirical.mean_costs.sum());
      } else {
        out.gamma_hat = gamma_hat(s, fit, empirical);
      }
    }
  } catch (const RankDeficient& e) {
    throw InadmissibleSubset(std::string("subset ") + s.to_string() + ": " + e.what());
  } catch (const SingularGroupCovariance& e) {
    throw InadmissibleSubset(std::string("subset ") + s.to_string() + ": " + e.what());
  }

  LossProfile profile{out.k_hat, out.gamma_hat, out.c_r_hat, budget};
  out.q_star_hat = optimal_exploration(profile).q_star;

  const double z = std::max(out.q_star_hat, static_cast<double>(q));
  if (z > 0.0 && z < budget / out.c_r_hat) {
    out.regret = loss(profile, z);
  } else if (out.gamma_hat == 0.0 && z > 0.0) {
    out.regret = out.k_hat / z;
  } else {
    out.regret = std::numeric_limits<double>::infinity();
  }
  return out;
}

struct AetcOptions {
  /// Regularizer schedule alpha_q; defaults to 4^-q.
  std::function<double(long)> alpha_schedule;
  /// Optional explicit pool of candidate subsets (overrides enumeration).
  std::vector<ModelSubset> subset_pool;
};

/// Mutable state of one adaptive run: the exploration count starts at
/// n+2 and the spent budget never exceeds the total.
struct AetcState {
  long q = 0;
  ExplorationData data;
  double budget_spent = 0.0;
  std::function<double(long)> alpha_schedule;
  std::vector<ModelSubset> subset_pool;
  std::uint64_t rng_seed = 0;
};

namespace detail {

/// Grows exploration data one affordable draw at a time; a draw whose
/// realized cost would push past the budget is discarded.
class ExplorationBuffer {
 public:
  ExplorationBuffer(const ModelEnsemble& ensemble, double budget)
      : ensemble_(ensemble), budget_(budget) {}

  /// Returns the number of draws actually collected (== want on success).
  long try_collect(RngStream& stream, long want) {
    long collected = 0;
    for (; collected < want; ++collected) {
      const ExplorationData row = ensemble_.draw_joint(stream, 1);
      const double cost = row.costs.row(0).sum();
      if (spent_ + cost > budget_) break;
      append(row);
      spent_ += cost;
    }
    return collected;
  }

  long rows() const { return rows_; }
  double spent() const { return spent_; }

  ExplorationData view() const {
    ExplorationData out;
    out.samples = samples_.topRows(rows_);
    out.costs = costs_.topRows(rows_);
    return out;
  }

 private:
  void append(const ExplorationData& row) {
    if (rows_ == samples_.rows()) {
      const long capacity = std::max<long>(16, 2 * samples_.rows());
      samples_.conservativeResize(capacity, row.samples.cols());
      costs_.conservativeResize(capacity, row.costs.cols());
    }
    samples_.row(rows_) = row.samples.row(0);
    costs_.row(rows_) = row.costs.row(0);
    ++rows_;
  }

  const ModelEnsemble& ensemble_;
  double budget_;
  double spent_ = 0.0;
  long rows_ = 0;
  Eigen::MatrixXd samples_;
  Eigen::MatrixXd costs_;
};

}  // namespace detail

/// Adaptive explore-then-commit loop: starting from n+2 joint pilot
/// draws, repeatedly scores every candidate subset by its estimated
/// optimal loss, grows the pilot set by bisection toward the estimated
/// optimal exploration count of the current best subset, and finally
/// commits the remaining budget to the chosen subset's exploitation
/// estimator. Exploration samples are not reused in exploitation.
inline EstimatorReport run_aetc(const ModelEnsemble& ensemble, double budget,
                                const PolicyChoice& policy, int max_subset_size,
                                std::uint64_t seed, const AetcOptions& options = {}) {
  const int n = ensemble.num_low_fidelity();
  if (n < 1) throw OutOfDomain("need at least one low-fidelity model");
  if (!(budget > 0.0)) throw OutOfDomain("budget must be positive");

  std::vector<ModelSubset> pool = options.subset_pool;
  if (pool.empty()) {
    const int cap = (max_subset_size <= 0) ? n : std::min(max_subset_size, n);
    pool = enumerate_subsets(n, cap);
  }
  for (const auto& s : pool)
    if (s.empty() || s.contains(0) || s.max_index() > n)
      throw NotASubset("candidate subset " + s.to_string() + " is not within {1..n}");

  AetcState state;
  state.alpha_schedule = options.alpha_schedule
                             ? options.alpha_schedule
                             : [](long q) { return std::pow(4.0, -static_cast<double>(q)); };
  state.subset_pool = pool;
  state.rng_seed = seed;

  RngStream root(seed);
  RngStream explore_stream = root.child(1);
  RngStream exploit_stream = root.child(2);

  detail::ExplorationBuffer buffer(ensemble, budget);
  state.q = n + 2;
  if (buffer.try_collect(explore_stream, state.q) < state.q)
    throw Infeasible("budget cannot fund the initial n+2 exploration draws");

  const MomentSet* oracle = ensemble.oracle_moments();

  ModelSubset chosen;
  RegretEstimate chosen_regret;
  bool budget_break = false;
  long rounds = 0;

  bool exploring = true;
  while (exploring) {
    ++rounds;
    state.data = buffer.view();
    state.budget_spent = buffer.spent();
    const double alpha = state.alpha_schedule(state.q);

    bool have_best = false;
    for (const auto& s : state.subset_pool) {
      try {
        const RegretEstimate r = estimated_regret(s, static_cast<int>(state.q), state.data,
                                                  policy, budget, alpha, oracle);
        if (!have_best || r.regret < chosen_regret.regret) {
          have_best = true;
          chosen = s;
          chosen_regret = r;
        }
      } catch (const InadmissibleSubset&) {
        // Skipped this round; typically admissible again once q grows.
      }
    }
    if (!have_best) {
      if (buffer.try_collect(explore_stream, 1) == 1) {
        ++state.q;
        continue;
      }
      throw Infeasible("no admissible subset and no budget left to explore");
    }

    const double q_star = chosen_regret.q_star_hat;
    if (q_star > 2.0 * static_cast<double>(state.q)) {
      const long want = state.q;
      const long collected = buffer.try_collect(explore_stream, want);
      state.q += collected;
      if (collected < want) {
        budget_break = true;
        break;
      }
    } else if (q_star > static_cast<double>(state.q)) {
      const long target =
          static_cast<long>(std::ceil((static_cast<double>(state.q) + q_star) / 2.0));
      const long want = target - state.q;
      const long collected = buffer.try_collect(explore_stream, want);
      state.q += collected;
      if (collected < want) {
        budget_break = true;
        break;
      }
    } else {
      exploring = false;
    }
  }

  state.data = buffer.view();
  state.budget_spent = buffer.spent();
  state.q = state.data.q();
  const ExplorationData& data = state.data;
  const long q = state.q;

  EstimatorReport report;
  report.chosen_subset = chosen;
  report.exploration_count = q;
  report.exploration_cost = buffer.spent();
  report.total_budget = budget;
  report.diagnostics["k_hat"] = chosen_regret.k_hat;
  report.diagnostics["gamma_hat"] = chosen_regret.gamma_hat;
  report.diagnostics["q_star_hat"] = chosen_regret.q_star_hat;
  report.diagnostics["predicted_loss"] = chosen_regret.regret;
  report.diagnostics["sigma2_hat"] = chosen_regret.sigma2_hat;
  report.diagnostics["c_r_hat"] = chosen_regret.c_r_hat;
  report.diagnostics["rounds"] = static_cast<double>(rounds);
  report.diagnostics["exploration_budget_break"] = budget_break ? 1.0 : 0.0;

  const RegressionFit fit = fit_linear_model(data, chosen);

  // Exploration-mean fallback when exploitation cannot be funded.
  auto fallback = [&]() {
    Eigen::VectorXd mu_bar_s(chosen.size());
    for (int j = 0; j < chosen.size(); ++j) mu_bar_s[j] = data.samples.col(chosen[j]).mean();
    report.estimate = fit.intercept + mu_bar_s.dot(fit.coefficients);
    report.terminated_early = true;
    report.diagnostics["fallback"] = 1.0;
    return report;
  };

  const double remaining = budget - buffer.spent();

  // Exploitation moments and costs per the policy's covariance source.
  MomentSet exploit_moments;
  if (policy.covariance_source == CovarianceSource::kOracle) {
    if (oracle == nullptr) throw OutOfDomain("oracle covariance source requires oracle moments");
    exploit_moments = oracle->restricted(chosen);
  } else {
    exploit_moments = empirical_moments(data, chosen);
    exploit_moments.covariance = detail::clip_to_psd(exploit_moments.covariance);
  }
  const Eigen::VectorXd exploit_costs = detail::absolute_cost_vector(exploit_moments);
  const double c_s = SampleAllocation::group_cost(chosen, exploit_costs);

  if (remaining < c_s) return fallback();

  SampleAllocation target_alloc;
  if (policy.exploitation_policy == ExploitationPolicy::kUniformMc) {
    const double m = std::floor(remaining / c_s);
    if (m < 1.0) return fallback();
    target_alloc.set(chosen, m);
  } else {
    try {
      const AllocationSolution solution =
          solve_allocation(GroupFamily::power_set(chosen), exploit_moments, fit.coefficients,
                           exploit_costs, remaining);
      target_alloc = round_allocation(solution.allocation, exploit_costs, remaining);
      report.diagnostics["allocation_kkt"] = solution.kkt_residual;
    } catch (const Infeasible&) {
      return fallback();
    } catch (const SingularNormalMatrix&) {
      return fallback();
    }
  }

  // Draw fresh exploitation samples group by group, with realized-cost
  // accounting; a draw that would breach the budget truncates its group.
  GroupedSamples samples;
  SampleAllocation realized_alloc;
  double exploit_spent = 0.0;
  bool truncated = false;
  for (const auto& [group, m_target] : target_alloc) {
    const long m = static_cast<long>(m_target);
    long kept = 0;
    Eigen::MatrixXd block = ensemble.draw_group(exploit_stream, group, static_cast<int>(m));
    for (long l = 0; l < m; ++l) {
      const double cost = ensemble.draw_group_cost(exploit_stream, group);
      if (buffer.spent() + exploit_spent + cost > budget) {
        truncated = true;
        break;
      }
      exploit_spent += cost;
      ++kept;
    }
    if (kept == 0) continue;
    samples.per_group[group] = block.topRows(kept);
    realized_alloc.set(group, static_cast<double>(kept));
  }
  report.diagnostics["exploitation_truncated"] = truncated ? 1.0 : 0.0;

  if (realized_alloc.empty()) return fallback();

  Eigen::VectorXd mu_hat_s;
  try {
    mu_hat_s = blue_estimate(exploit_moments, realized_alloc, samples);
  } catch (const Error&) {
    return fallback();
  }

  report.estimate = fit.intercept + mu_hat_s.dot(fit.coefficients);
  report.allocation = realized_alloc;
  report.exploitation_cost = exploit_spent;
  report.terminated_early = false;
  report.diagnostics["fallback"] = 0.0;
  return report;
}

}  // namespace mfblue
