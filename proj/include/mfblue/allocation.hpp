#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mfblue/errors.hpp"
#include "mfblue/mlblue.hpp"
#include "mfblue/regression.hpp"
#include "mfblue/types.hpp"

namespace mfblue {

/// An admissible set of sampling groups over a universe of model indices.
struct GroupFamily {
  std::vector<ModelSubset> groups;
  ModelSubset universe;

  /// All nonempty subsets of `s`, size-then-lexicographic order.
  static GroupFamily power_set(const ModelSubset& s) {
    GroupFamily fam;
    fam.universe = s;
    const int k = s.size();
    for (int size = 1; size <= k; ++size) {
      std::vector<ModelIndex> current;
      auto emit = [&](auto&& self, int target, int next) -> void {
        if (static_cast<int>(current.size()) == target) {
          fam.groups.emplace_back(current);
          return;
        }
        for (int i = next; i < k; ++i) {
          current.push_back(s[i]);
          self(self, target, i + 1);
          current.pop_back();
        }
      };
      emit(emit, size, 0);
    }
    return fam;
  }

  void validate() const {
    ModelSubset joined;
    for (const auto& g : groups) {
      if (g.empty()) throw OutOfDomain("group family contains an empty group");
      if (!g.is_subset_of(universe))
        throw NotASubset("group " + g.to_string() + " outside universe " + universe.to_string());
      joined = joined.unioned(g);
    }
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = i + 1; j < groups.size(); ++j)
        if (groups[i] == groups[j]) throw OutOfDomain("duplicate group " + groups[i].to_string());
  }
};

/// Continuous minimizer of the sketch variance together with solver
/// diagnostics. The allocation satisfies the budget with equality.
struct AllocationSolution {
  SampleAllocation allocation;
  double objective = 0.0;
  double kkt_residual = 0.0;
  long iterations = 0;
};

struct SolverOptions {
  double kkt_tol = 1e-7;
  long max_iterations = 100000;
  /// Optional warm start: per-unit-cost weights u_T per family group.
  const std::vector<double>* warm_start = nullptr;
};

namespace detail {

/// Precomputed per-group data for the allocation solver. The optimization
/// variable is the per-unit-cost weight u_T = m_T / B, so the weighted
/// matrix Phi(u) = sum_T u_T R_T^T Sigma_T^{-1} R_T has uniform curvature
/// scale even when group costs differ by orders of magnitude; the budget
/// constraint becomes the weighted simplex c^T u = 1.
struct AllocationProblem {
  int dim = 0;                               // |universe|
  Eigen::VectorXd sketch;                    // a, universe layout
  std::vector<std::vector<int>> positions;   // group -> universe positions
  std::vector<Eigen::MatrixXd> sigma_inv;    // group -> Sigma_T^{-1}
  Eigen::VectorXd group_costs;               // group -> c_T

  AllocationProblem(const GroupFamily& family, const MomentSet& moments,
                    const Eigen::VectorXd& a, const Eigen::VectorXd& model_costs) {
    family.validate();
    dim = family.universe.size();
    if (a.size() != dim) throw DimensionMismatch("sketch length does not match universe");
    sketch = a;
    positions.reserve(family.groups.size());
    sigma_inv.reserve(family.groups.size());
    group_costs.resize(static_cast<long>(family.groups.size()));
    long at = 0;
    for (const auto& group : family.groups) {
      std::vector<int> pos;
      pos.reserve(static_cast<std::size_t>(group.size()));
      for (ModelIndex i : group) pos.push_back(family.universe.position_of(i));
      positions.push_back(std::move(pos));
      sigma_inv.push_back(group_covariance_inverse(moments, group));
      const double c = SampleAllocation::group_cost(group, model_costs);
      if (!(c > 0.0)) throw OutOfDomain("group costs must be positive");
      group_costs[at++] = c;
    }
    // Some allocation must identify every index the sketch touches.
    std::vector<bool> reachable(static_cast<std::size_t>(dim), false);
    for (const auto& pos : positions)
      for (int p : pos) reachable[static_cast<std::size_t>(p)] = true;
    for (int p = 0; p < dim; ++p)
      if (a[p] != 0.0 && !reachable[static_cast<std::size_t>(p)])
        throw SingularNormalMatrix("no group in the family identifies index position " +
                                   std::to_string(p));
  }

  int num_groups() const { return static_cast<int>(positions.size()); }

  /// Unit-budget objective g(u) = a^T Phi(u)^{-1} a, evaluated on the
  /// block of indices covered by positive weights; +inf when those
  /// groups fail to identify the sketch. On success fills the
  /// zero-padded solve vector psi = Phi(u)^+ a.
  double evaluate(const Eigen::VectorXd& u, Eigen::VectorXd& psi) const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<int> local(static_cast<std::size_t>(dim), -1);
    int covered = 0;
    for (int t = 0; t < num_groups(); ++t) {
      if (u[t] <= 0.0) continue;
      for (int p : positions[static_cast<std::size_t>(t)])
        if (local[static_cast<std::size_t>(p)] < 0) local[static_cast<std::size_t>(p)] = covered++;
    }
    for (int p = 0; p < dim; ++p)
      if (sketch[p] != 0.0 && local[static_cast<std::size_t>(p)] < 0) return inf;
    if (covered == 0) return inf;

    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(covered, covered);
    for (int t = 0; t < num_groups(); ++t) {
      if (u[t] <= 0.0) continue;
      const auto& pos = positions[static_cast<std::size_t>(t)];
      const auto& inv = sigma_inv[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < pos.size(); ++i) {
        const int li = local[static_cast<std::size_t>(pos[i])];
        for (std::size_t j = 0; j < pos.size(); ++j)
          phi(li, local[static_cast<std::size_t>(pos[j])]) +=
              u[t] * inv(static_cast<long>(i), static_cast<long>(j));
      }
    }
    Eigen::VectorXd a_local(covered);
    for (int p = 0; p < dim; ++p)
      if (local[static_cast<std::size_t>(p)] >= 0) a_local[local[static_cast<std::size_t>(p)]] = sketch[p];

    Eigen::LLT<Eigen::MatrixXd> llt(phi);
    if (llt.info() != Eigen::Success) return inf;
    const Eigen::VectorXd psi_local = llt.solve(a_local);
    if (!psi_local.allFinite()) return inf;

    psi.setZero(dim);
    for (int p = 0; p < dim; ++p)
      if (local[static_cast<std::size_t>(p)] >= 0) psi[p] = psi_local[local[static_cast<std::size_t>(p)]];
    return a_local.dot(psi_local);
  }

  /// d g / d u_T = -psi_T^T Sigma_T^{-1} psi_T, always <= 0.
  void gradient(const Eigen::VectorXd& psi, Eigen::VectorXd& grad) const {
    grad.resize(num_groups());
    for (int t = 0; t < num_groups(); ++t) {
      const auto& pos = positions[static_cast<std::size_t>(t)];
      Eigen::VectorXd psi_t(static_cast<long>(pos.size()));
      for (std::size_t i = 0; i < pos.size(); ++i) psi_t[static_cast<long>(i)] = psi[pos[i]];
      grad[t] = -psi_t.dot(sigma_inv[static_cast<std::size_t>(t)] * psi_t);
    }
  }

  /// Factorization of Phi(u) on the block of indices touched by any
  /// group; valid for strictly interior u (every group positive).
  struct InteriorState {
    double g = 0.0;
    Eigen::VectorXd psi;  // full-dimension, zero off the touched block
    Eigen::LLT<Eigen::MatrixXd> llt;
    bool ok = false;
  };

  /// Maps universe positions to the touched-block frame, fixed for all
  /// interior points.
  std::vector<int> interior_map() const {
    std::vector<int> local(static_cast<std::size_t>(dim), -1);
    int covered = 0;
    for (const auto& pos : positions)
      for (int p : pos)
        if (local[static_cast<std::size_t>(p)] < 0) local[static_cast<std::size_t>(p)] = covered++;
    return local;
  }

  InteriorState factorize_interior(const Eigen::VectorXd& u, const std::vector<int>& local,
                                   int covered) const {
    InteriorState state;
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(covered, covered);
    for (int t = 0; t < num_groups(); ++t) {
      const auto& pos = positions[static_cast<std::size_t>(t)];
      const auto& inv = sigma_inv[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < pos.size(); ++i) {
        const int li = local[static_cast<std::size_t>(pos[i])];
        for (std::size_t j = 0; j < pos.size(); ++j)
          phi(li, local[static_cast<std::size_t>(pos[j])]) +=
              u[t] * inv(static_cast<long>(i), static_cast<long>(j));
      }
    }
    state.llt.compute(phi);
    if (state.llt.info() != Eigen::Success) return state;
    Eigen::VectorXd a_local(covered);
    for (int p = 0; p < dim; ++p)
      if (local[static_cast<std::size_t>(p)] >= 0) a_local[local[static_cast<std::size_t>(p)]] = sketch[p];
    const Eigen::VectorXd psi_local = state.llt.solve(a_local);
    if (!psi_local.allFinite()) return state;
    state.psi.setZero(dim);
    for (int p = 0; p < dim; ++p)
      if (local[static_cast<std::size_t>(p)] >= 0) state.psi[p] = psi_local[local[static_cast<std::size_t>(p)]];
    state.g = a_local.dot(psi_local);
    state.ok = state.g > 0.0 && std::isfinite(state.g);
    return state;
  }

  /// Hessian of g at an interior point: H = 2 W^T Phi^{-1} W with
  /// columns w_T = A_T psi, a Gram matrix and therefore PSD.
  Eigen::MatrixXd hessian(const InteriorState& state, const std::vector<int>& local,
                          int covered) const {
    const int k = num_groups();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(covered, k);
    for (int t = 0; t < k; ++t) {
      const auto& pos = positions[static_cast<std::size_t>(t)];
      const auto& inv = sigma_inv[static_cast<std::size_t>(t)];
      Eigen::VectorXd psi_t(static_cast<long>(pos.size()));
      for (std::size_t i = 0; i < pos.size(); ++i) psi_t[static_cast<long>(i)] = state.psi[pos[i]];
      const Eigen::VectorXd w_t = inv * psi_t;
      for (std::size_t i = 0; i < pos.size(); ++i)
        w(local[static_cast<std::size_t>(pos[i])], t) = w_t[static_cast<long>(i)];
    }
    return 2.0 * w.transpose() * state.llt.solve(w);
  }

  /// First-order residual, expressed in cost-fraction coordinates
  /// x_T = c_T u_T. By the degree -1 homogeneity of g the stationarity
  /// multiplier is -g exactly, so the residual mixes complementarity
  /// error on the support with constraint violations off the support and
  /// carries the units of g.
  double kkt_residual(const Eigen::VectorXd& u, const Eigen::VectorXd& grad, double g) const {
    const double lambda = -g;
    double sq = 0.0;
    for (int t = 0; t < num_groups(); ++t) {
      const double grad_x = grad[t] / group_costs[t];
      if (u[t] > 0.0) {
        const double e = group_costs[t] * u[t] * (grad_x - lambda);
        sq += e * e;
      } else {
        const double e = std::min(0.0, grad_x - lambda);
        sq += e * e;
      }
    }
    return std::sqrt(sq);
  }
};

}  // namespace detail

/// Minimizes the sketch variance a^T Psi(m)^{-1} a over continuous
/// allocations on the given family subject to sum_T c_T m_T = budget.
///
/// The relaxation is solved at unit budget in per-unit-cost weights
/// u_T = m_T / B, a convex program on the weighted simplex c^T u = 1,
/// by a damped-Newton log-barrier method on the central path. The
/// objective's closed-form gradient and Hessian make Newton steps cheap
/// at these sizes, and convexity makes the first-order point the global
/// optimum. The exact 1/budget scaling comes for free in this
/// parameterization.
inline AllocationSolution solve_allocation(const GroupFamily& family, const MomentSet& moments,
                                           const Eigen::VectorXd& sketch,
                                           const Eigen::VectorXd& model_costs, double budget,
                                           const SolverOptions& options = {}) {
  if (!(budget > 0.0)) throw OutOfDomain("budget must be positive");
  if (sketch.size() == 0 || sketch.cwiseAbs().maxCoeff() == 0.0)
    throw OutOfDomain("sketch must be nonzero");
  detail::AllocationProblem problem(family, moments, sketch, model_costs);
  const int k = problem.num_groups();
  const Eigen::VectorXd& costs = problem.group_costs;
  const std::vector<int> local = problem.interior_map();
  int covered = 0;
  for (int value : local) covered = std::max(covered, value + 1);

  // Equal cost split across groups: u_T = 1 / (K c_T), strictly interior.
  Eigen::VectorXd u(k);
  for (int t = 0; t < k; ++t) u[t] = 1.0 / (k * costs[t]);
  if (options.warm_start != nullptr && static_cast<int>(options.warm_start->size()) == k) {
    Eigen::VectorXd w(k);
    for (int t = 0; t < k; ++t)
      w[t] = std::max((*options.warm_start)[static_cast<std::size_t>(t)], 1e-12 / costs[t]);
    const double total = costs.dot(w);
    if (total > 0.0) u = w / total;
  }

  auto state = problem.factorize_interior(u, local, covered);
  if (!state.ok) {
    for (int t = 0; t < k; ++t) u[t] = 1.0 / (k * costs[t]);
    state = problem.factorize_interior(u, local, covered);
  }
  if (!state.ok)
    throw SingularNormalMatrix("family cannot identify the sketch at the interior point");

  Eigen::VectorXd grad(k);
  problem.gradient(state.psi, grad);
  double kkt = problem.kkt_residual(u, grad, state.g);
  const double kkt_target = 0.3 * options.kkt_tol;

  // Damped-Newton path following. Each stage centers the iterate on the
  // barrier path at the current mu (Newton decrement test) before mu is
  // reduced; a stage that fails to center backs mu off instead, which
  // keeps the KKT systems well scaled. mu is never pushed below what the
  // target residual requires, so crushed coordinates cannot poison the
  // linear algebra.
  long iter = 0;
  double mu = state.g / static_cast<double>(k);
  if (k > 1) {
    const double sqrt_k = std::sqrt(static_cast<double>(k));
    for (int stage = 0; stage < 200 && iter < options.max_iterations; ++stage) {
      kkt = problem.kkt_residual(u, grad, state.g);
      if (kkt <= kkt_target * state.g) break;

      bool centered = false;
      for (int newton = 0; newton < 80 && iter < options.max_iterations; ++newton, ++iter) {
        const Eigen::VectorXd grad_phi = grad - mu * u.cwiseInverse();
        Eigen::MatrixXd a = problem.hessian(state, local, covered);
        for (int t = 0; t < k; ++t) a(t, t) += mu / (u[t] * u[t]);
        // Jacobi equilibration keeps the mixed barrier/objective scales
        // from overwhelming double precision.
        Eigen::VectorXd scale(k);
        for (int t = 0; t < k; ++t) scale[t] = 1.0 / std::sqrt(std::max(a(t, t), 1e-300));
        Eigen::MatrixXd kkt_mat = Eigen::MatrixXd::Zero(k + 1, k + 1);
        kkt_mat.topLeftCorner(k, k) = scale.asDiagonal() * a * scale.asDiagonal();
        kkt_mat.block(0, k, k, 1) = scale.asDiagonal() * costs;
        kkt_mat.block(k, 0, 1, k) = (scale.asDiagonal() * costs).transpose();
        Eigen::VectorXd rhs(k + 1);
        rhs.head(k) = -(scale.asDiagonal() * grad_phi);
        rhs[k] = 0.0;
        const Eigen::VectorXd raw = kkt_mat.fullPivLu().solve(rhs);
        const Eigen::VectorXd du = scale.asDiagonal() * raw.head(k);
        if (!du.allFinite()) break;

        const double decrement_sq = -grad_phi.dot(du);
        if (decrement_sq <= 0.01 * mu) {
          centered = true;
          break;
        }

        double t_max = 1.0;
        for (int t = 0; t < k; ++t)
          if (du[t] < 0.0) t_max = std::min(t_max, -0.995 * u[t] / du[t]);
        const double slope = grad_phi.dot(du);
        if (slope >= 0.0) break;
        double phi_now = state.g;
        for (int t = 0; t < k; ++t) phi_now -= mu * std::log(u[t]);

        double step = t_max;
        bool accepted = false;
        for (int backtrack = 0; backtrack < 60; ++backtrack) {
          const Eigen::VectorXd u_new = u + step * du;
          const auto trial = problem.factorize_interior(u_new, local, covered);
          if (trial.ok) {
            double phi_new = trial.g;
            for (int t = 0; t < k; ++t) phi_new -= mu * std::log(u_new[t]);
            if (phi_new <= phi_now + 1e-4 * step * slope) {
              u = u_new;
              state = trial;
              accepted = true;
              break;
            }
          }
          step *= 0.5;
        }
        if (!accepted) break;
        problem.gradient(state.psi, grad);
      }

      if (centered) {
        const double mu_floor = kkt_target * state.g / (4.0 * sqrt_k);
        if (mu <= mu_floor) {
          // Centered at the accuracy floor: the residual is as small as
          // this path can make it.
          kkt = problem.kkt_residual(u, grad, state.g);
          break;
        }
        mu = std::max(0.15 * mu, mu_floor);
      } else {
        mu *= 5.0;  // recenter at an easier barrier weight
        if (mu > 10.0 * state.g) break;
      }
    }
  }

  // Crossover polish: freeze the face suggested by the barrier point and
  // take exact Newton steps on it. The barrier solution carries an O(k mu)
  // duality gap; the face Newton removes it to roundoff. A first-order
  // check re-admits any group that was dropped wrongly, and the polished
  // point is only adopted when it beats the barrier point.
  Eigen::VectorXd u_best = u;
  double g_best = state.g;
  Eigen::VectorXd psi_best = state.psi;
  double kkt_best = problem.kkt_residual(u, grad, state.g);

  if (k > 1) {
    const double face_tol = 1e-7;  // on cost fractions c_T u_T
    Eigen::VectorXd g_full = grad;
    for (int attempt = 0; attempt < 8; ++attempt) {
      std::vector<int> free;
      for (int t = 0; t < k; ++t)
        if (costs[t] * u[t] > face_tol) free.push_back(t);
      if (free.empty()) break;

      Eigen::VectorXd u_face = Eigen::VectorXd::Zero(k);
      double total = 0.0;
      for (int t : free) total += costs[t] * u[t];
      if (!(total > 0.0)) break;
      for (int t : free) u_face[t] = u[t] / total;

      Eigen::VectorXd psi_face(problem.dim);
      double g_face = problem.evaluate(u_face, psi_face);
      if (!std::isfinite(g_face)) break;

      bool face_ok = true;
      for (int newton = 0; newton < 40 && iter < options.max_iterations; ++newton, ++iter) {
        problem.gradient(psi_face, g_full);
        const int kf = static_cast<int>(free.size());
        Eigen::MatrixXd h_face(kf, kf);
        {
          std::vector<int> local_face(static_cast<std::size_t>(problem.dim), -1);
          int covered_face = 0;
          for (int t : free)
            for (int p : problem.positions[static_cast<std::size_t>(t)])
              if (local_face[static_cast<std::size_t>(p)] < 0)
                local_face[static_cast<std::size_t>(p)] = covered_face++;
          Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(covered_face, covered_face);
          for (int t : free) {
            const auto& pos = problem.positions[static_cast<std::size_t>(t)];
            const auto& inv = problem.sigma_inv[static_cast<std::size_t>(t)];
            for (std::size_t i = 0; i < pos.size(); ++i) {
              const int li = local_face[static_cast<std::size_t>(pos[i])];
              for (std::size_t j = 0; j < pos.size(); ++j)
                phi(li, local_face[static_cast<std::size_t>(pos[j])]) +=
                    u_face[t] * inv(static_cast<long>(i), static_cast<long>(j));
            }
          }
          Eigen::LLT<Eigen::MatrixXd> llt(phi);
          if (llt.info() != Eigen::Success) {
            face_ok = false;
            break;
          }
          Eigen::MatrixXd w = Eigen::MatrixXd::Zero(covered_face, kf);
          for (int fi = 0; fi < kf; ++fi) {
            const int t = free[static_cast<std::size_t>(fi)];
            const auto& pos = problem.positions[static_cast<std::size_t>(t)];
            const auto& inv = problem.sigma_inv[static_cast<std::size_t>(t)];
            Eigen::VectorXd psi_t(static_cast<long>(pos.size()));
            for (std::size_t i = 0; i < pos.size(); ++i) psi_t[static_cast<long>(i)] = psi_face[pos[i]];
            const Eigen::VectorXd w_t = inv * psi_t;
            for (std::size_t i = 0; i < pos.size(); ++i)
              w(local_face[static_cast<std::size_t>(pos[i])], fi) = w_t[static_cast<long>(i)];
          }
          h_face = 2.0 * w.transpose() * llt.solve(w);
        }
        const double reg = 1e-12 * std::max(h_face.diagonal().maxCoeff(), 1e-300);
        for (int d = 0; d < kf; ++d) h_face(d, d) += reg;

        Eigen::VectorXd grad_face(kf), c_face(kf);
        for (int fi = 0; fi < kf; ++fi) {
          grad_face[fi] = g_full[free[static_cast<std::size_t>(fi)]];
          c_face[fi] = costs[free[static_cast<std::size_t>(fi)]];
        }
        Eigen::MatrixXd kkt_mat = Eigen::MatrixXd::Zero(kf + 1, kf + 1);
        kkt_mat.topLeftCorner(kf, kf) = h_face;
        kkt_mat.block(0, kf, kf, 1) = c_face;
        kkt_mat.block(kf, 0, 1, kf) = c_face.transpose();
        Eigen::VectorXd rhs(kf + 1);
        rhs.head(kf) = -grad_face;
        rhs[kf] = 0.0;
        const Eigen::VectorXd du_face = kkt_mat.fullPivLu().solve(rhs).head(kf);
        if (!du_face.allFinite()) {
          face_ok = false;
          break;
        }
        const double decrement = -grad_face.dot(du_face);
        if (decrement <= 1e-15 * std::abs(g_face)) break;

        double t_max = 1.0;
        for (int fi = 0; fi < kf; ++fi)
          if (du_face[fi] < 0.0)
            t_max = std::min(t_max, -0.9999 * u_face[free[static_cast<std::size_t>(fi)]] / du_face[fi]);
        double step = t_max;
        bool accepted = false;
        for (int backtrack = 0; backtrack < 50; ++backtrack) {
          Eigen::VectorXd u_try = u_face;
          for (int fi = 0; fi < kf; ++fi) u_try[free[static_cast<std::size_t>(fi)]] += step * du_face[fi];
          Eigen::VectorXd psi_try(problem.dim);
          const double g_try = problem.evaluate(u_try, psi_try);
          if (std::isfinite(g_try) && g_try <= g_face - 1e-4 * step * decrement) {
            u_face = u_try;
            g_face = g_try;
            psi_face = psi_try;
            accepted = true;
            break;
          }
          step *= 0.5;
        }
        if (!accepted) break;
      }
      if (!face_ok) break;

      // Candidate bookkeeping: adopt the polished point when it improves.
      {
        Eigen::VectorXd grad_face_full(k);
        problem.gradient(psi_face, grad_face_full);
        const double kkt_face = problem.kkt_residual(u_face, grad_face_full, g_face);
        if (g_face <= g_best + 1e-12 * std::abs(g_best) && kkt_face <= std::max(kkt_best, options.kkt_tol * g_face)) {
          u_best = u_face;
          g_best = g_face;
          psi_best = psi_face;
          kkt_best = kkt_face;
        }
      }

      // Re-admit the worst wrongly-dropped group, if any, and try again.
      problem.gradient(psi_face, g_full);
      const double lambda = -g_face;
      int worst = -1;
      double worst_violation = -1e-9 * std::abs(g_face);
      for (int t = 0; t < k; ++t) {
        if (costs[t] * u_face[t] > 0.0) continue;
        const double violation = g_full[t] / costs[t] - lambda;
        if (violation < worst_violation) {
          worst_violation = violation;
          worst = t;
        }
      }
      if (worst < 0) {
        u = u_face;
        break;
      }
      u = u_face;
      u[worst] = 10.0 * face_tol / costs[worst];
      const double renorm = costs.dot(u);
      u /= renorm;
    }
  }

  // Final selection: prefer the best candidate; fail only when no point
  // met the tolerance.
  {
    Eigen::VectorXd grad_best(k);
    problem.gradient(psi_best, grad_best);
    kkt_best = problem.kkt_residual(u_best, grad_best, g_best);
    if (kkt_best > options.kkt_tol * g_best)
      throw NumericalFailure("allocation solver stalled at relative KKT residual " +
                             std::to_string(kkt_best / g_best));
    u = u_best;
    state.g = g_best;
    state.psi = psi_best;
    grad = grad_best;
  }

  // Drop spurious tiny cost fractions, then restore the exact budget. If
  // a tiny weight turns out to be load-bearing for identifiability, keep it.
  Eigen::VectorXd psi(problem.dim);
  double g = state.g;
  const Eigen::VectorXd u_unclipped = u;
  for (int t = 0; t < k; ++t)
    if (costs[t] * u[t] < 1e-12) u[t] = 0.0;
  const double total = costs.dot(u);
  bool clipped_ok = false;
  if (total > 0.0) {
    u /= total;
    const double g_clipped = problem.evaluate(u, psi);
    if (std::isfinite(g_clipped)) {
      g = g_clipped;
      clipped_ok = true;
    }
  }
  if (!clipped_ok) {
    u = u_unclipped;
    g = problem.evaluate(u, psi);
  }
  problem.gradient(psi, grad);

  AllocationSolution solution;
  for (int t = 0; t < k; ++t) {
    if (u[t] <= 0.0) continue;
    solution.allocation.set(family.groups[static_cast<std::size_t>(t)], budget * u[t]);
  }
  solution.objective = g / budget;
  solution.kkt_residual = problem.kkt_residual(u, grad, g) / budget;
  solution.iterations = iter;
  return solution;
}

/// Exploitation-efficiency constant gamma(S): the smallest unit-budget
/// variance of the b_S-sketch over continuous allocations on the power
/// set of S. A zero sketch is degenerate and yields gamma = 0.
inline double gamma_of_S(const ModelSubset& s, const Eigen::VectorXd& b_s,
                         const MomentSet& moments, const Eigen::VectorXd& model_costs) {
  if (s.empty()) throw NotASubset("gamma_of_S: empty subset");
  if (b_s.size() != s.size()) throw DimensionMismatch("b_S length does not match |S|");
  if (b_s.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  const MomentSet local = moments.restricted(s);
  return solve_allocation(GroupFamily::power_set(s), local, b_s, model_costs, 1.0).objective;
}

/// gamma(S) evaluated with exploration-phase estimates: fitted b_S,
/// empirical covariance blocks, and empirical mean costs.
inline double gamma_hat(const ModelSubset& s, const RegressionFit& fit,
                        const MomentSet& empirical) {
  if (fit.subset != s) throw DimensionMismatch("fit subset does not match S");
  if (!s.is_subset_of(empirical.indices))
    throw NotASubset("empirical moments do not cover " + s.to_string());
  Eigen::VectorXd costs = Eigen::VectorXd::Zero(s.max_index() + 1);
  const MomentSet local = empirical.restricted(s);
  for (int j = 0; j < s.size(); ++j) costs[s[j]] = local.mean_costs[j];
  return gamma_of_S(s, fit.coefficients, local, costs);
}

/// Exploitation constant of the uniform policy: c_S b_S^T Sigma_S b_S.
inline double gamma_uniform(const ModelSubset& s, const Eigen::VectorXd& b_s,
                            const Eigen::MatrixXd& sigma_s, double c_s) {
  if (b_s.size() != s.size() || sigma_s.rows() != s.size() || sigma_s.cols() != s.size())
    throw DimensionMismatch("gamma_uniform: dimensions disagree");
  if (!(c_s > 0.0)) throw OutOfDomain("c_S must be positive");
  return c_s * b_s.dot(sigma_s * b_s);
}

/// Rounds a continuous allocation down to integers, then restores
/// identifiability: any index that was covered by a positive continuous
/// weight but lost in rounding gets one sample of the cheapest candidate
/// group containing it, provided the budget allows.
inline SampleAllocation round_allocation(const SampleAllocation& continuous,
                                         const Eigen::VectorXd& model_costs, double budget) {
  if (continuous.total_cost(model_costs) > budget * (1.0 + 1e-9))
    throw Infeasible("continuous allocation infeasible at the stated budget");

  SampleAllocation rounded;
  for (const auto& [group, m] : continuous)
    rounded.set(group, std::floor(m));

  const ModelSubset target = continuous.covered_indices();
  auto covered_by_rounded = [&]() { return rounded.covered_indices(); };

  ModelSubset covered = covered_by_rounded();
  while (true) {
    ModelIndex missing = -1;
    for (ModelIndex i : target)
      if (!covered.contains(i)) {
        missing = i;
        break;
      }
    if (missing < 0) break;

    const ModelSubset* best = nullptr;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const auto& [group, m] : continuous) {
      if (!group.contains(missing)) continue;
      const double c = SampleAllocation::group_cost(group, model_costs);
      if (c < best_cost) {
        best_cost = c;
        best = &group;
      }
    }
    if (best == nullptr)
      throw Infeasible("no candidate group covers index " + std::to_string(missing));
    rounded.set(*best, std::max(rounded.at(*best), 1.0));
    if (rounded.total_cost(model_costs) > budget * (1.0 + 1e-9))
      throw Infeasible("minimal identifiable allocation exceeds the budget");
    covered = covered_by_rounded();
  }

  rounded.prune();
  return rounded;
}

}  // namespace mfblue
