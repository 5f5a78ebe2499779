#include <catch2/catch_amalgamated.hpp>

#include <mfblue/harness.hpp>

using namespace mfblue;

namespace {

ExperimentSpec small_mc_spec(long trials, double budget = 100.0) {
  Eigen::VectorXd mu(2);
  mu << 3.0, 0.0;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
  sigma(0, 0) = 4.0;
  Eigen::VectorXd costs(2);
  costs << 1.0, 0.5;
  ExperimentSpec spec{GaussianLinearEnsemble(mu, sigma, costs)};
  spec.ensemble_name = "inline";
  spec.budgets = {budget};
  spec.estimators = {EstimatorKind::kMc};
  spec.trials = trials;
  spec.seed = 424242;
  return spec;
}

}  // namespace

TEST_CASE("experiment results are byte-identical across runs and workers") {
  const GaussianLinearEnsemble ensemble = make_elasticity_surrogate();
  ExperimentSpec spec{ensemble};
  spec.ensemble_name = "surrogate";
  spec.budgets = {1e5, 2e5};
  spec.estimators = {EstimatorKind::kMc, EstimatorKind::kAetcOptE};
  spec.trials = 8;
  spec.seed = 99;
  spec.max_subset_size = 4;

  const std::string csv1 = results_to_csv(run_experiment(spec, 1));
  const std::string csv2 = results_to_csv(run_experiment(spec, 1));
  const std::string csv4 = results_to_csv(run_experiment(spec, 4));
  REQUIRE(csv1 == csv2);
  REQUIRE(csv1 == csv4);

  const std::string json1 = results_to_json(run_experiment(spec, 1)).dump();
  const std::string json4 = results_to_json(run_experiment(spec, 3)).dump();
  REQUIRE(json1 == json4);
}

TEST_CASE("single-fidelity cell reproduces the Monte Carlo rate") {
  const ExperimentSpec spec = small_mc_spec(10000);
  const ExperimentResult result = run_experiment(spec, 2);
  REQUIRE(result.cells.size() == 1);
  const CellResult& cell = result.cells[0];
  REQUIRE(cell.trials_ok == 10000);
  REQUIRE(cell.trials_failed == 0);
  REQUIRE(cell.mse == Catch::Approx(0.04).epsilon(0.05));
  REQUIRE(cell.explore_frac_q50 == 0.0);
}

TEST_CASE("failed trials are counted, not dropped") {
  // Budget below one high-fidelity draw: every MC trial fails.
  const ExperimentSpec spec = small_mc_spec(50, 0.5);
  const ExperimentResult result = run_experiment(spec, 1);
  REQUIRE(result.cells[0].trials_failed == 50);
  REQUIRE(result.cells[0].trials_ok == 0);
  REQUIRE(result.cells[0].trials_ok + result.cells[0].trials_failed == spec.trials);
}

TEST_CASE("standard errors shrink like one over root trials") {
  const ExperimentResult small = run_experiment(small_mc_spec(400), 2);
  const ExperimentResult large = run_experiment(small_mc_spec(1600), 2);
  const double ratio = large.cells[0].mse_stderr / small.cells[0].mse_stderr;
  REQUIRE(ratio == Catch::Approx(0.5).epsilon(0.20));
}

TEST_CASE("csv layout is stable") {
  const ExperimentResult result = run_experiment(small_mc_spec(5), 1);
  const std::string csv = results_to_csv(result);
  REQUIRE(csv.rfind("schema,estimator,budget,metric,detail,value\n", 0) == 0);
  REQUIRE(csv.find("mfblue-results-1,MC,100,trials_ok,,5") != std::string::npos);
  REQUIRE(csv.find(",mse,,") != std::string::npos);
}

TEST_CASE("experiment spec parsing is strict") {
  io::json ensemble;
  ensemble["schema"] = kEnsembleSchema;
  ensemble["means"] = {0.0, 0.0};
  ensemble["covariance"] = {{1.0, 0.5}, {0.5, 1.0}};
  ensemble["mean_costs"] = {2.0, 1.0};

  io::json spec;
  spec["schema"] = kExperimentSchema;
  spec["ensemble"] = ensemble;
  spec["budgets"] = {100.0, 200.0};
  spec["estimators"] = {"MC", "AETC_OPT_E"};
  spec["trials"] = 3;
  spec["seed"] = 7;
  REQUIRE_NOTHROW(parse_experiment_spec(spec, "inline"));

  io::json typo = spec;
  typo["trails"] = 3;
  REQUIRE_THROWS_AS(parse_experiment_spec(typo, "typo"), SpecError);

  io::json unsorted = spec;
  unsorted["budgets"] = {200.0, 100.0};
  REQUIRE_THROWS_AS(parse_experiment_spec(unsorted, "unsorted"), SpecError);

  io::json unknown_estimator = spec;
  unknown_estimator["estimators"] = {"MAGIC"};
  REQUIRE_THROWS_AS(parse_experiment_spec(unknown_estimator, "unknown"), SpecError);
}

TEST_CASE("loss sweep: oracle minimizer sits on the grid argmin") {
  const GaussianLinearEnsemble ensemble = make_elasticity_surrogate();
  const ModelSubset s{1, 2, 3, 4};
  const double budget = 2e6;
  const OracleQuantities oq = oracle_quantities(ensemble, s, budget);

  std::vector<long> grid;
  for (long q = 30; q <= 450; q += 5) grid.push_back(q);
  const auto rows = loss_sweep(ensemble, s, budget, grid, 31);

  long best_q = 0;
  double best = 1e300;
  for (const auto& row : rows)
    if (row.oracle_loss < best) {
      best = row.oracle_loss;
      best_q = row.q;
    }
  REQUIRE(std::abs(static_cast<double>(best_q) - oq.q_star) <= 5.0);
}

TEST_CASE("loss sweep: estimated curve approaches the oracle curve") {
  const GaussianLinearEnsemble ensemble = make_elasticity_surrogate();
  const ModelSubset s{1, 2, 3, 4};
  const double budget = 2e6;
  const std::vector<long> grid = {8, 16, 32, 64, 128, 256};
  double early = 0.0, late = 0.0;
  for (std::uint64_t seed : {5ull, 6ull, 7ull}) {
    const auto rows = loss_sweep(ensemble, s, budget, grid, seed);
    early += std::abs(rows[0].estimated_loss - rows[0].oracle_loss) / rows[0].oracle_loss;
    late += std::abs(rows.back().estimated_loss - rows.back().oracle_loss) /
            rows.back().oracle_loss;
    REQUIRE(std::abs(rows.back().estimated_loss - rows.back().oracle_loss) /
                rows.back().oracle_loss <
            0.25);
  }
  REQUIRE(late < early);
}

TEST_CASE("loss sweep: independent surrogate loses its exploitation term") {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd costs(2);
  costs << 2.0, 1.0;
  const GaussianLinearEnsemble ensemble(mu, sigma, costs);
  const std::vector<long> grid = {4, 8, 16, 32};
  const auto rows = loss_sweep(ensemble, {1}, 1000.0, grid, 3);
  for (std::size_t i = 1; i < rows.size(); ++i)
    REQUIRE(rows[i].oracle_loss < rows[i - 1].oracle_loss);
}

TEST_CASE("subset landscape is sorted and finds the right argmin") {
  const GaussianLinearEnsemble ensemble = make_elasticity_surrogate();
  const auto rows = subset_landscape(ensemble, 2e6, 0);
  REQUIRE(rows.size() == 15);
  REQUIRE(rows.front().subset == ModelSubset({1, 2, 3, 4}));
  for (std::size_t i = 1; i < rows.size(); ++i)
    REQUIRE(rows[i].optimal_loss >= rows[i - 1].optimal_loss);

  const auto singles = subset_landscape(ensemble, 2e6, 1);
  REQUIRE(singles.size() == 4);
  // Singletons cannot beat the full set when every coefficient matters.
  REQUIRE(singles.front().optimal_loss > rows.front().optimal_loss);
}
