#include <catch2/catch_amalgamated.hpp>

#include <mfblue/aetc.hpp>
#include <mfblue/problems.hpp>
#include <mfblue/rng.hpp>

#include "oracles.hpp"

using namespace mfblue;

TEST_CASE("loss plug-in values") {
  const LossProfile p{1.0, 1.0, 1.0, 100.0};
  REQUIRE(loss(p, 50.0) == Catch::Approx(0.04).margin(1e-15));

  const LossProfile pure{2.0, 0.0, 1.0, 100.0};
  REQUIRE(loss(pure, 10.0) == Catch::Approx(0.2));

  const LossProfile pole{1.0, 1.0, 1.0, 100.0};
  REQUIRE(loss(pole, 100.0 * (1.0 - 1e-13)) > 1e10);
  REQUIRE_THROWS_AS(loss(pole, 100.0), OutOfDomain);
  REQUIRE_THROWS_AS(loss(pole, 0.0), OutOfDomain);
}

TEST_CASE("closed-form optimal exploration count") {
  const LossProfile symmetric{1.0, 1.0, 1.0, 100.0};
  REQUIRE(optimal_exploration(symmetric).q_star == Catch::Approx(50.0).margin(1e-12));

  const LossProfile worked{1.0, 9.0, 4.0, 1000.0};
  REQUIRE(optimal_exploration(worked).q_star == Catch::Approx(100.0).margin(1e-12));
  REQUIRE_FALSE(optimal_exploration(worked).degenerate);

  SECTION("degenerate boundaries are flagged") {
    const ExplorationRate no_k = optimal_exploration({0.0, 1.0, 2.0, 100.0});
    REQUIRE(no_k.degenerate);
    REQUIRE(no_k.q_star == 0.0);
    const ExplorationRate no_gamma = optimal_exploration({1.0, 0.0, 2.0, 100.0});
    REQUIRE(no_gamma.degenerate);
    REQUIRE(no_gamma.q_star == Catch::Approx(50.0));
  }

  SECTION("matches a dense grid argmin") {
    RngStream stream(79);
    for (int rep = 0; rep < 10; ++rep) {
      const LossProfile p{stream.uniform(0.01, 5.0), stream.uniform(0.01, 5.0),
                          stream.uniform(0.1, 10.0), stream.uniform(50.0, 5000.0)};
      const double q_star = optimal_exploration(p).q_star;
      const long grid = 1000000;
      const double hi = p.budget / p.c_r;
      double best = 1e300, best_z = 0.0;
      for (long i = 1; i < grid; ++i) {
        const double z = hi * static_cast<double>(i) / static_cast<double>(grid);
        const double value = p.k / z + p.gamma / (p.budget - p.c_r * z);
        if (value < best) {
          best = value;
          best_z = z;
        }
      }
      REQUIRE(std::abs(q_star - best_z) <= hi / static_cast<double>(grid) * 1.0001);
    }
  }
}

TEST_CASE("optimal loss value") {
  REQUIRE(optimal_loss({1.0, 9.0, 4.0, 1.0}) == Catch::Approx(25.0).margin(1e-12));
  REQUIRE(optimal_loss({3.0, 0.0, 2.0, 10.0}) == Catch::Approx(0.6).margin(1e-14));

  RngStream stream(83);
  for (int rep = 0; rep < 100; ++rep) {
    const LossProfile p{stream.uniform(0.01, 5.0), stream.uniform(0.01, 5.0),
                        stream.uniform(0.1, 10.0), stream.uniform(50.0, 5000.0)};
    REQUIRE(optimal_loss(p) ==
            Catch::Approx(loss(p, optimal_exploration(p).q_star)).epsilon(1e-12));
  }
}

namespace {

ExplorationData gaussian_exploration(RngStream& stream, const Eigen::MatrixXd& sigma,
                                     const Eigen::VectorXd& costs, int q) {
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
  ExplorationData data;
  data.samples.resize(q, sigma.rows());
  data.costs.resize(q, sigma.rows());
  Eigen::VectorXd z(sigma.rows());
  for (int i = 0; i < q; ++i) {
    for (long j = 0; j < sigma.rows(); ++j) z[j] = stream.normal();
    data.samples.row(i) = (chol * z).transpose();
    data.costs.row(i) = costs.transpose();
  }
  return data;
}

}  // namespace

TEST_CASE("estimated regret approaches the oracle optimal loss") {
  RngStream stream(89);
  Eigen::MatrixXd sigma(3, 3);
  sigma << 1.0, 0.9, 0.7, 0.9, 1.0, 0.6, 0.7, 0.6, 1.0;
  Eigen::VectorXd costs(3);
  costs << 16.0, 2.0, 1.0;
  const double budget = 2e6;
  const int q = 20000;
  const ExplorationData data = gaussian_exploration(stream, sigma, costs, q);

  const ModelSubset s{1, 2};
  const RegretEstimate r = estimated_regret(
      s, q, data, {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical}, budget, 0.0);

  // Oracle constants of the underlying Gaussian law.
  const Eigen::MatrixXd sigma_s = sigma.block(1, 1, 2, 2);
  const Eigen::VectorXd b = sigma_s.ldlt().solve(sigma.block(1, 0, 2, 1));
  const double sigma2 = sigma(0, 0) - sigma.row(0).segment(1, 2).dot(b);
  MomentSet m;
  m.indices = ModelSubset{1, 2};
  m.means = Eigen::VectorXd::Zero(2);
  m.covariance = sigma_s;
  m.mean_costs = costs.tail(2);
  const double gamma = gamma_of_S(s, b, m, costs);
  const double oracle = optimal_loss({sigma2, gamma, costs.sum(), budget});
  REQUIRE(r.regret == Catch::Approx(oracle).epsilon(0.10));
}

TEST_CASE("zero residual variance stays finite with the regularizer") {
  RngStream stream(97);
  const int q = 12;
  ExplorationData data;
  data.samples.resize(q, 2);
  data.costs = Eigen::MatrixXd::Ones(q, 2);
  for (int i = 0; i < q; ++i) {
    const double x = stream.normal();
    data.samples(i, 1) = x;
    data.samples(i, 0) = 3.0 * x - 1.0;  // exact linear relation
  }
  const double alpha = std::pow(4.0, -q);
  const RegretEstimate r = estimated_regret(
      {1}, q, data, {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical}, 1e4, alpha);
  REQUIRE(std::isfinite(r.regret));
  REQUIRE(r.k_hat == Catch::Approx(alpha).margin(1e-18));
  REQUIRE(r.gamma_hat > 0.0);
}

TEST_CASE("regret is clamped at the current exploration count") {
  RngStream stream(101);
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1.0, 0.5, 0.5, 1.0;
  Eigen::VectorXd costs(2);
  costs << 1.0, 1.0;
  const int q = 500;
  const double budget = 1200.0;  // optimal count ~426 < q, so clamping binds
  const ExplorationData data = gaussian_exploration(stream, sigma, costs, q);
  const RegretEstimate r = estimated_regret(
      {1}, q, data, {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical}, budget, 0.0);
  REQUIRE(r.q_star_hat < static_cast<double>(q));
  const double expected =
      r.k_hat / q + r.gamma_hat / (budget - r.c_r_hat * q);
  REQUIRE(r.regret == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("scaling all outputs rescales the loss pieces but not the decisions") {
  RngStream stream(103);
  Eigen::MatrixXd sigma(3, 3);
  sigma << 1.0, 0.8, 0.3, 0.8, 1.0, 0.2, 0.3, 0.2, 1.0;
  Eigen::VectorXd costs(3);
  costs << 8.0, 2.0, 1.0;
  const int q = 200;
  const double budget = 1e5;
  const ExplorationData data = gaussian_exploration(stream, sigma, costs, q);
  ExplorationData scaled = data;
  const double lambda = 3.5;
  scaled.samples *= lambda;

  const PolicyChoice policy{ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical};
  double best_plain = 1e300, best_scaled = 1e300;
  ModelSubset argmin_plain, argmin_scaled;
  for (const ModelSubset& s : enumerate_subsets(2, 2)) {
    const RegretEstimate plain = estimated_regret(s, q, data, policy, budget, 0.0);
    const RegretEstimate big = estimated_regret(s, q, scaled, policy, budget, 0.0);
    REQUIRE(big.k_hat == Catch::Approx(lambda * lambda * plain.k_hat).epsilon(1e-9));
    REQUIRE(big.gamma_hat == Catch::Approx(lambda * lambda * plain.gamma_hat).epsilon(1e-6));
    REQUIRE(big.q_star_hat == Catch::Approx(plain.q_star_hat).epsilon(1e-6));
    if (plain.regret < best_plain) {
      best_plain = plain.regret;
      argmin_plain = s;
    }
    if (big.regret < best_scaled) {
      best_scaled = big.regret;
      argmin_scaled = s;
    }
  }
  REQUIRE(argmin_plain == argmin_scaled);
}

TEST_CASE("adaptive loop with one low-fidelity model") {
  Eigen::VectorXd mu(2);
  mu << 1.0, 2.0;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1.0, 0.9, 0.9, 1.0;
  Eigen::VectorXd costs(2);
  costs << 10.0, 1.0;
  const GaussianLinearEnsemble ensemble(mu, sigma, costs);

  const EstimatorReport report = run_aetc(
      ensemble, 5000.0, {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical}, 1, 7);
  REQUIRE(report.chosen_subset == ModelSubset{1});
  REQUIRE(report.exploration_count >= 3);
  REQUIRE(report.exploration_cost + report.exploitation_cost <= 5000.0 + 1e-9);
  REQUIRE(std::isfinite(report.estimate));
}

TEST_CASE("uniform and optimal policies coincide for one low-fidelity model") {
  // With a single surrogate the only sampling group is {1}, so the
  // optimal allocation floors to the same count as the uniform policy
  // and the two runs consume identical draws.
  Eigen::VectorXd mu(2);
  mu << 4.0, 1.0;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1.0, 0.8, 0.8, 1.0;
  Eigen::VectorXd costs(2);
  costs << 6.0, 1.0;
  const GaussianLinearEnsemble ensemble(mu, sigma, costs);
  for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
    const EstimatorReport opt = run_aetc(
        ensemble, 3000.0, {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical}, 1,
        seed);
    const EstimatorReport unif = run_aetc(
        ensemble, 3000.0, {ExploitationPolicy::kUniformMc, CovarianceSource::kEmpirical}, 1,
        seed);
    REQUIRE(opt.chosen_subset == unif.chosen_subset);
    REQUIRE(opt.exploration_count == unif.exploration_count);
    REQUIRE(opt.allocation.at({1}) == unif.allocation.at({1}));
    REQUIRE(opt.estimate == Catch::Approx(unif.estimate).margin(1e-12));
  }
}

TEST_CASE("budget accounting is exact across policies and cost noise") {
  const GaussianLinearEnsemble quiet = make_elasticity_surrogate();
  const GaussianLinearEnsemble noisy = make_elasticity_surrogate(CostNoise{0.1});
  const double budget = 2e5;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (const auto* ensemble : {&quiet, &noisy}) {
      for (ExploitationPolicy policy :
           {ExploitationPolicy::kOptimalBlue, ExploitationPolicy::kUniformMc}) {
        const EstimatorReport report =
            run_aetc(*ensemble, budget, {policy, CovarianceSource::kEmpirical}, 4, seed);
        REQUIRE(report.exploration_cost + report.exploitation_cost <= budget + 1e-6);
        REQUIRE(report.exploration_cost > 0.0);
        REQUIRE(std::isfinite(report.estimate));
      }
    }
  }
}

TEST_CASE("runs are reproducible for a fixed seed") {
  const GaussianLinearEnsemble ensemble = make_elasticity_surrogate();
  const PolicyChoice policy{ExploitationPolicy::kOptimalBlue, CovarianceSource::kOracle};
  const EstimatorReport a = run_aetc(ensemble, 4e5, policy, 4, 12345);
  const EstimatorReport b = run_aetc(ensemble, 4e5, policy, 4, 12345);
  REQUIRE(a.estimate == b.estimate);
  REQUIRE(a.exploration_count == b.exploration_count);
  REQUIRE(a.chosen_subset == b.chosen_subset);
}

TEST_CASE("infeasible initial exploration is rejected") {
  const GaussianLinearEnsemble ensemble = make_elasticity_surrogate();
  // n+2 = 6 draws cost 6 * 4181; anything below cannot start.
  REQUIRE_THROWS_AS(
      run_aetc(ensemble, 1000.0, {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical},
               4, 1),
      Infeasible);
}

TEST_CASE("tiny remaining budgets fall back to the exploration estimate") {
  Eigen::VectorXd mu(2);
  mu << 5.0, 4.0;
  Eigen::MatrixXd sigma(2, 2);
  sigma << 1.0, 0.95, 0.95, 1.0;
  Eigen::VectorXd costs(2);
  costs << 1.0, 1.0;
  const GaussianLinearEnsemble ensemble(mu, sigma, costs);
  // Budget fits the initial draws and essentially nothing else; the run
  // must still return an estimate, flagged as terminated early.
  const EstimatorReport report = run_aetc(
      ensemble, 7.5, {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical}, 1, 11);
  REQUIRE(std::isfinite(report.estimate));
  REQUIRE(report.exploration_cost + report.exploitation_cost <= 7.5 + 1e-9);
}

TEST_CASE("exploitation stage is conditionally unbiased") {
  // Fix exploration data, fit, and allocation; replicate only the
  // exploitation draws and compare the mean of the grouped estimator
  // against the true subset means.
  const GaussianLinearEnsemble ensemble = make_elasticity_surrogate();
  RngStream stream(113);
  const ModelSubset s{1, 2, 3, 4};
  const MomentSet local = ensemble.oracle_moments()->restricted(s);
  Eigen::VectorXd costs(5);
  costs << 4096.0, 64.0, 16.0, 4.0, 1.0;

  const ExplorationData data = ensemble.draw_joint(stream, 50);
  const RegressionFit fit = fit_linear_model(data, s);
  const AllocationSolution sol = solve_allocation(GroupFamily::power_set(s), local,
                                                  fit.coefficients, costs, 2000.0);
  const SampleAllocation alloc = round_allocation(sol.allocation, costs, 2000.0);

  const int reps = 2000;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
  for (int rep = 0; rep < reps; ++rep) {
    GroupedSamples samples;
    for (const auto& [group, m] : alloc)
      samples.per_group[group] = ensemble.draw_group(stream, group, static_cast<int>(m));
    mean += blue_estimate(local, alloc, samples);
  }
  mean /= static_cast<double>(reps);

  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(4, 4);
  for (const auto& [group, m] : alloc) {
    const Eigen::MatrixXd r = restriction_matrix(s, group);
    psi += m * r.transpose() * local.covariance_block(group).inverse() * r;
  }
  const Eigen::MatrixXd cov = psi.inverse();
  for (int j = 0; j < 4; ++j) {
    const double se = std::sqrt(cov(j, j) / reps);
    REQUIRE(std::abs(mean[j] - local.means[j]) < 4.0 * se);
  }
}
