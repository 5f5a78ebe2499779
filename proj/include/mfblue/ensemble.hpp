#pragma once

#include <Eigen/Dense>

#include "mfblue/rng.hpp"
#include "mfblue/types.hpp"

namespace mfblue {

/// Source of joint samples of all model outputs and their (possibly
/// random) per-model costs. Implementations are immutable specs; all
/// randomness flows through the caller-supplied stream, so concurrent
/// trials with distinct streams never interact.
class ModelEnsemble {
 public:
  virtual ~ModelEnsemble() = default;

  /// Number of low-fidelity models; model indices run over {0..n}.
  virtual int num_low_fidelity() const = 0;

  /// `count` independent joint draws of (Q_0, ..., Q_n) with realized costs.
  virtual ExplorationData draw_joint(RngStream& stream, int count) const = 0;

  /// `count` independent draws of the marginal of Q on the group T,
  /// columns in T's canonical order.
  virtual Eigen::MatrixXd draw_group(RngStream& stream, const ModelSubset& t,
                                     int count) const = 0;

  /// Realized cost of one joint draw of the group T. Deterministic-cost
  /// ensembles return the mean group cost.
  virtual double draw_group_cost(RngStream& stream, const ModelSubset& t) const = 0;

  /// Oracle moments over {0..n} when the ensemble knows them, else null.
  virtual const MomentSet* oracle_moments() const { return nullptr; }

  int num_models() const { return num_low_fidelity() + 1; }
};

}  // namespace mfblue
