#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "mfblue/errors.hpp"
#include "mfblue/subset.hpp"

namespace mfblue {

/// First and second moments plus mean sampling costs for a set of models.
///
/// `means[i]`, `covariance(i,j)`, and `mean_costs[i]` refer to the models
/// at `indices[i]`, `indices[j]` in canonical (ascending) order.
struct MomentSet {
  ModelSubset indices;
  Eigen::VectorXd means;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd mean_costs;

  int size() const { return indices.size(); }

  /// Checks dimensions, symmetry (1e-12 relative), positive costs, and
  /// PSD-ness up to -1e-10 * ||Sigma||_2 roundoff slack.
  void validate() const {
    const int k = indices.size();
    if (means.size() != k || covariance.rows() != k || covariance.cols() != k ||
        mean_costs.size() != k)
      throw DimensionMismatch("MomentSet dimensions do not match index set " +
                              indices.to_string());
    const double scale = covariance.cwiseAbs().maxCoeff();
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1.0))
      throw DimensionMismatch("MomentSet covariance is not symmetric");
    for (int i = 0; i < k; ++i)
      if (!(mean_costs[i] > 0.0))
        throw OutOfDomain("MomentSet mean costs must be strictly positive");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance);
    const double norm2 = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (eig.eigenvalues().minCoeff() < -1e-10 * norm2)
      throw OutOfDomain("MomentSet covariance has a significantly negative eigenvalue");
  }

  /// Moments restricted to `target` (which must be a subset of `indices`).
  MomentSet restricted(const ModelSubset& target) const {
    if (!target.is_subset_of(indices))
      throw NotASubset("cannot restrict moments on " + indices.to_string() + " to " +
                       target.to_string());
    MomentSet out;
    out.indices = target;
    const int k = target.size();
    out.means.resize(k);
    out.mean_costs.resize(k);
    out.covariance.resize(k, k);
    for (int i = 0; i < k; ++i) {
      const int pi = indices.position_of(target[i]);
      out.means[i] = means[pi];
      out.mean_costs[i] = mean_costs[pi];
      for (int j = 0; j < k; ++j) out.covariance(i, j) = covariance(pi, indices.position_of(target[j]));
    }
    return out;
  }

  /// Covariance block for `target`, in target order.
  Eigen::MatrixXd covariance_block(const ModelSubset& target) const {
    return restricted(target).covariance;
  }
};

/// Per-group sample counts m_T, continuous during optimization and
/// integer after rounding. Keys iterate in size-then-lexicographic order.
class SampleAllocation {
 public:
  using Map = std::map<ModelSubset, double, SubsetSizeLexLess>;

  SampleAllocation() = default;

  void set(const ModelSubset& group, double count) {
    if (group.empty()) throw OutOfDomain("allocation groups must be nonempty");
    if (count < 0.0) throw OutOfDomain("allocation counts must be nonnegative");
    counts_[group] = count;
  }

  double at(const ModelSubset& group) const {
    auto it = counts_.find(group);
    return it == counts_.end() ? 0.0 : it->second;
  }

  bool contains(const ModelSubset& group) const { return counts_.count(group) > 0; }

  const Map& counts() const { return counts_; }
  bool empty() const { return counts_.empty(); }
  std::size_t size() const { return counts_.size(); }

  auto begin() const { return counts_.begin(); }
  auto end() const { return counts_.end(); }

  /// Union of groups with strictly positive counts.
  ModelSubset covered_indices() const {
    ModelSubset covered;
    for (const auto& [group, m] : counts_)
      if (m > 0.0) covered = covered.unioned(group);
    return covered;
  }

  /// Total cost sum_T c_T m_T with c_T = sum of per-model costs; the cost
  /// vector is indexed by absolute model index.
  double total_cost(const Eigen::VectorXd& model_costs) const {
    double total = 0.0;
    for (const auto& [group, m] : counts_) total += m * group_cost(group, model_costs);
    return total;
  }

  static double group_cost(const ModelSubset& group, const Eigen::VectorXd& model_costs) {
    double c = 0.0;
    for (ModelIndex i : group) {
      if (i >= model_costs.size())
        throw DimensionMismatch("cost vector too short for group " + group.to_string());
      c += model_costs[i];
    }
    return c;
  }

  bool is_integral() const {
    for (const auto& [group, m] : counts_)
      if (m != std::floor(m)) return false;
    return true;
  }

  /// Drops groups with zero count.
  void prune() {
    for (auto it = counts_.begin(); it != counts_.end();)
      it = (it->second == 0.0) ? counts_.erase(it) : std::next(it);
  }

 private:
  Map counts_;
};

/// Joint exploration draws: row l of `samples` is (Q_{0,l}, ..., Q_{n,l})
/// and row l of `costs` holds the realized per-model sampling costs.
struct ExplorationData {
  Eigen::MatrixXd samples;
  Eigen::MatrixXd costs;

  int q() const { return static_cast<int>(samples.rows()); }
  int num_models() const { return static_cast<int>(samples.cols()); }

  /// Mean realized cost of one joint exploration draw.
  double mean_exploration_cost() const {
    if (costs.rows() == 0) throw InsufficientSamples("no exploration draws");
    return costs.sum() / static_cast<double>(costs.rows());
  }
};

/// Independent joint draws per group, column order matching each group's
/// canonical index order.
struct GroupedSamples {
  std::map<ModelSubset, Eigen::MatrixXd, SubsetSizeLexLess> per_group;
};

/// Final estimate with full provenance for one estimator run.
struct EstimatorReport {
  double estimate = 0.0;
  ModelSubset chosen_subset;
  long exploration_count = 0;
  SampleAllocation allocation;
  double exploration_cost = 0.0;
  double exploitation_cost = 0.0;
  double total_budget = 0.0;
  bool terminated_early = false;
  std::map<std::string, double> diagnostics;
};

}  // namespace mfblue
