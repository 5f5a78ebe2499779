#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mfblue/aetc.hpp"
#include "mfblue/errors.hpp"
#include "mfblue/io.hpp"
#include "mfblue/problems.hpp"

namespace mfblue {

enum class EstimatorKind { kMc, kOracleMlblue, kAetc, kAetcOpt, kAetcOptE };

inline const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kMc: return "MC";
    case EstimatorKind::kOracleMlblue: return "ORACLE_MLBLUE";
    case EstimatorKind::kAetc: return "AETC";
    case EstimatorKind::kAetcOpt: return "AETC_OPT";
    case EstimatorKind::kAetcOptE: return "AETC_OPT_E";
  }
  throw OutOfDomain("unknown estimator kind");
}

inline EstimatorKind estimator_from_name(const std::string& name) {
  for (EstimatorKind kind : {EstimatorKind::kMc, EstimatorKind::kOracleMlblue,
                             EstimatorKind::kAetc, EstimatorKind::kAetcOpt,
                             EstimatorKind::kAetcOptE})
    if (name == estimator_name(kind)) return kind;
  throw SpecError("unknown estimator \"" + name + "\"");
}

/// Declarative description of one experiment: an ensemble, a budget
/// ladder, the estimators to compare, and the trial/seed bookkeeping.
struct ExperimentSpec {
  explicit ExperimentSpec(GaussianLinearEnsemble e) : ensemble(std::move(e)) {}

  GaussianLinearEnsemble ensemble;
  std::string ensemble_name;
  std::vector<double> budgets;
  std::vector<EstimatorKind> estimators;
  long trials = 1;
  std::uint64_t seed = 0;
  int max_subset_size = 0;  // 0: all sizes
  double alpha_base = 4.0;  // alpha_q = alpha_base^-q
  std::vector<ModelSubset> subset_pool;

  void validate() const {
    if (trials < 1) throw SpecError("trials must be >= 1");
    if (budgets.empty()) throw SpecError("budgets must be nonempty");
    for (std::size_t i = 1; i < budgets.size(); ++i)
      if (!(budgets[i] > budgets[i - 1])) throw SpecError("budgets must be strictly increasing");
    if (estimators.empty()) throw SpecError("estimators must be nonempty");
    if (!(alpha_base > 1.0)) throw SpecError("alpha base must exceed 1");
  }
};

/// Parses an experiment spec file (schema mfblue/experiment/1). The
/// ensemble may be inline or a path to an ensemble fixture, resolved
/// relative to the current working directory.
inline ExperimentSpec parse_experiment_spec(const io::json& j, const std::string& where) {
  io::require_keys(j,
                   {"schema", "ensemble", "budgets", "estimators", "trials", "seed",
                    "max_subset_size", "alpha", "subset_pool"},
                   {"schema", "ensemble", "budgets", "estimators", "trials", "seed"}, where);
  if (j.at("schema").get<std::string>() != kExperimentSchema)
    throw SpecError(where + ": expected schema " + std::string(kExperimentSchema));

  auto make = [&]() -> std::pair<GaussianLinearEnsemble, std::string> {
    const auto& e = j.at("ensemble");
    if (e.is_string()) {
      const std::string path = e.get<std::string>();
      return {load_ensemble_fixture(path), path};
    }
    return {parse_ensemble(e, where + ".ensemble"), "<inline>"};
  };
  auto [ensemble, name] = make();

  ExperimentSpec spec{std::move(ensemble)};
  spec.ensemble_name = name;
  const Eigen::VectorXd budgets = io::parse_vector(j.at("budgets"), where + ".budgets");
  spec.budgets.assign(budgets.data(), budgets.data() + budgets.size());
  for (const auto& est : j.at("estimators"))
    spec.estimators.push_back(estimator_from_name(est.get<std::string>()));
  spec.trials = j.at("trials").get<long>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("max_subset_size")) spec.max_subset_size = j.at("max_subset_size").get<int>();
  if (j.contains("alpha")) {
    io::require_keys(j.at("alpha"), {"kind", "base"}, {"kind", "base"}, where + ".alpha");
    if (j.at("alpha").at("kind").get<std::string>() != "power")
      throw SpecError(where + ".alpha: only kind \"power\" (base^-q) is supported");
    spec.alpha_base = j.at("alpha").at("base").get<double>();
  }
  if (j.contains("subset_pool")) {
    for (const auto& entry : j.at("subset_pool")) {
      std::vector<ModelIndex> members;
      for (const auto& idx : entry) members.push_back(idx.get<int>());
      spec.subset_pool.emplace_back(members);
    }
  }
  spec.validate();
  return spec;
}

/// One trial's outcome inside an experiment cell.
struct TrialRecord {
  double estimate = 0.0;
  double squared_error = 0.0;
  double exploration_fraction = 0.0;
  ModelSubset chosen_subset;
  bool failed = false;
  bool terminated_early = false;
};

/// Aggregates for one (estimator, budget) cell.
struct CellResult {
  EstimatorKind estimator{};
  double budget = 0.0;
  long trials_ok = 0;
  long trials_failed = 0;
  double mse = 0.0;
  double mse_stderr = 0.0;
  double explore_frac_q05 = 0.0;
  double explore_frac_q50 = 0.0;
  double explore_frac_q95 = 0.0;
  std::map<ModelSubset, long, SubsetSizeLexLess> subset_frequency;
  std::vector<TrialRecord> trials;
};

struct ExperimentResult {
  double true_mean = 0.0;
  std::vector<CellResult> cells;
};

namespace detail {

inline std::uint64_t fnv1a64(const char* s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (; *s; ++s) {
    h ^= static_cast<unsigned char>(*s);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Pairwise summation: bounds the floating-point drift of long
/// accumulations and is independent of worker count by construction
/// (inputs are gathered per trial index first).
inline double pairwise_sum(const double* data, std::size_t count) {
  if (count == 0) return 0.0;
  if (count <= 8) {
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) total += data[i];
    return total;
  }
  const std::size_t half = count / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, count - half);
}

/// Linear-interpolation quantile of a sorted vector.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - std::floor(h);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

inline TrialRecord run_single_trial(const ExperimentSpec& spec, EstimatorKind kind, double budget,
                                    std::uint64_t trial_seed, double true_mean) {
  TrialRecord rec;
  try {
    EstimatorReport report;
    AetcOptions options;
    const double base = spec.alpha_base;
    options.alpha_schedule = [base](long q) { return std::pow(base, -static_cast<double>(q)); };
    options.subset_pool = spec.subset_pool;
    switch (kind) {
      case EstimatorKind::kMc:
        report = mc_baseline(spec.ensemble, budget, trial_seed);
        break;
      case EstimatorKind::kOracleMlblue: {
        const int n = spec.ensemble.num_low_fidelity();
        report = oracle_mlblue_baseline(spec.ensemble, budget, trial_seed,
                                        GroupFamily::power_set(ModelSubset::range(0, n)));
        break;
      }
      case EstimatorKind::kAetc:
        report = run_aetc(spec.ensemble, budget,
                          {ExploitationPolicy::kUniformMc, CovarianceSource::kEmpirical},
                          spec.max_subset_size, trial_seed, options);
        break;
      case EstimatorKind::kAetcOpt:
        report = run_aetc(spec.ensemble, budget,
                          {ExploitationPolicy::kOptimalBlue, CovarianceSource::kOracle},
                          spec.max_subset_size, trial_seed, options);
        break;
      case EstimatorKind::kAetcOptE:
        report = run_aetc(spec.ensemble, budget,
                          {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical},
                          spec.max_subset_size, trial_seed, options);
        break;
    }
    rec.estimate = report.estimate;
    rec.squared_error = (report.estimate - true_mean) * (report.estimate - true_mean);
    rec.exploration_fraction = report.exploration_cost / budget;
    rec.chosen_subset = report.chosen_subset;
    rec.terminated_early = report.terminated_early;
  } catch (const Error&) {
    rec.failed = true;
  }
  return rec;
}

}  // namespace detail

/// Runs every (estimator, budget) cell for `spec.trials` independent
/// trials. Trial t of a cell uses an RNG stream keyed by (seed,
/// estimator, budget index, t), so results are identical for any number
/// of workers; failures are recorded per trial, never fatal.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, int workers = 1) {
  spec.validate();
  ExperimentResult result;
  result.true_mean = spec.ensemble.means()[0];

  for (const EstimatorKind kind : spec.estimators) {
    const std::uint64_t estimator_key =
        mix_key(spec.seed, detail::fnv1a64(estimator_name(kind)));
    for (std::size_t bi = 0; bi < spec.budgets.size(); ++bi) {
      const double budget = spec.budgets[bi];
      const std::uint64_t cell_key = mix_key(estimator_key, bi);

      std::vector<TrialRecord> trials(static_cast<std::size_t>(spec.trials));
      const int thread_count =
          std::max(1, std::min<int>(workers, static_cast<int>(spec.trials)));
      if (thread_count == 1) {
        for (long t = 0; t < spec.trials; ++t)
          trials[static_cast<std::size_t>(t)] = detail::run_single_trial(
              spec, kind, budget, mix_key(cell_key, static_cast<std::uint64_t>(t)),
              result.true_mean);
      } else {
        std::atomic<long> next{0};
        auto worker = [&]() {
          while (true) {
            const long t = next.fetch_add(1);
            if (t >= spec.trials) break;
            trials[static_cast<std::size_t>(t)] = detail::run_single_trial(
                spec, kind, budget, mix_key(cell_key, static_cast<std::uint64_t>(t)),
                result.true_mean);
          }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < thread_count; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
      }

      CellResult cell;
      cell.estimator = kind;
      cell.budget = budget;
      std::vector<double> sq, sq2, fractions;
      for (const TrialRecord& rec : trials) {
        if (rec.failed) {
          ++cell.trials_failed;
          continue;
        }
        ++cell.trials_ok;
        sq.push_back(rec.squared_error);
        sq2.push_back(rec.squared_error * rec.squared_error);
        fractions.push_back(rec.exploration_fraction);
        if (!rec.chosen_subset.empty()) ++cell.subset_frequency[rec.chosen_subset];
      }
      if (cell.trials_ok > 0) {
        const double n = static_cast<double>(cell.trials_ok);
        cell.mse = detail::pairwise_sum(sq.data(), sq.size()) / n;
        if (cell.trials_ok > 1) {
          const double second = detail::pairwise_sum(sq2.data(), sq2.size()) / n;
          const double var = std::max(second - cell.mse * cell.mse, 0.0) * n / (n - 1.0);
          cell.mse_stderr = std::sqrt(var / n);
        }
        std::sort(fractions.begin(), fractions.end());
        cell.explore_frac_q05 = detail::quantile_sorted(fractions, 0.05);
        cell.explore_frac_q50 = detail::quantile_sorted(fractions, 0.50);
        cell.explore_frac_q95 = detail::quantile_sorted(fractions, 0.95);
      }
      cell.trials = std::move(trials);
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

/// CSV rendering with a fixed column order and full-precision doubles;
/// byte-identical for identical (spec, seed) regardless of workers.
inline std::string results_to_csv(const ExperimentResult& result) {
  std::ostringstream out;
  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "schema,estimator,budget,metric,detail,value\n";
  for (const CellResult& cell : result.cells) {
    const std::string prefix = std::string(kResultsCsvSchema) + "," +
                               estimator_name(cell.estimator) + "," + fmt(cell.budget) + ",";
    out << prefix << "trials_ok,," << cell.trials_ok << "\n";
    out << prefix << "trials_failed,," << cell.trials_failed << "\n";
    out << prefix << "mse,," << fmt(cell.mse) << "\n";
    out << prefix << "mse_stderr,," << fmt(cell.mse_stderr) << "\n";
    out << prefix << "explore_frac_q05,," << fmt(cell.explore_frac_q05) << "\n";
    out << prefix << "explore_frac_q50,," << fmt(cell.explore_frac_q50) << "\n";
    out << prefix << "explore_frac_q95,," << fmt(cell.explore_frac_q95) << "\n";
    for (const auto& [subset, count] : cell.subset_frequency) {
      std::string label = subset.to_string();
      std::replace(label.begin(), label.end(), ',', ';');
      out << prefix << "subset_freq," << label << "," << count << "\n";
    }
  }
  return out.str();
}

inline io::json results_to_json(const ExperimentResult& result) {
  io::json j;
  j["schema"] = kSummarySchema;
  j["true_mean"] = result.true_mean;
  j["cells"] = io::json::array();
  for (const CellResult& cell : result.cells) {
    io::json c;
    c["estimator"] = estimator_name(cell.estimator);
    c["budget"] = cell.budget;
    c["trials_ok"] = cell.trials_ok;
    c["trials_failed"] = cell.trials_failed;
    c["mse"] = cell.mse;
    c["mse_stderr"] = cell.mse_stderr;
    c["explore_frac_quantiles"] = {{"q05", cell.explore_frac_q05},
                                   {"q50", cell.explore_frac_q50},
                                   {"q95", cell.explore_frac_q95}};
    c["subset_frequency"] = io::json::object();
    for (const auto& [subset, count] : cell.subset_frequency)
      c["subset_frequency"][subset.to_string()] = count;
    c["trials"] = io::json::array();
    for (const TrialRecord& rec : cell.trials) {
      io::json t;
      t["failed"] = rec.failed;
      if (!rec.failed) {
        t["estimate"] = rec.estimate;
        t["squared_error"] = rec.squared_error;
        t["exploration_fraction"] = rec.exploration_fraction;
        t["subset"] = rec.chosen_subset.to_string();
        t["terminated_early"] = rec.terminated_early;
      }
      c["trials"].push_back(t);
    }
    j["cells"].push_back(c);
  }
  return j;
}

/// One row of the exploration-count sweep table.
struct LossSweepRow {
  long q = 0;
  double oracle_loss = 0.0;
  double estimated_loss = 0.0;
};

/// Tabulates the oracle loss curve of subset S against the loss curve
/// estimated from a single truncated exploration stream.
inline std::vector<LossSweepRow> loss_sweep(const GaussianLinearEnsemble& ensemble,
                                            const ModelSubset& s, double budget,
                                            const std::vector<long>& q_grid,
                                            std::uint64_t seed = 0) {
  if (q_grid.empty()) throw OutOfDomain("empty q grid");
  const OracleQuantities oq = oracle_quantities(ensemble, s, budget);
  const double c_r = ensemble.mean_costs().sum();
  long q_max = 0;
  for (long q : q_grid) {
    if (q < s.size() + 2) throw OutOfDomain("q grid entries must be >= |S|+2");
    if (!(static_cast<double>(q) < budget / c_r))
      throw OutOfDomain("q grid entries must stay below B/c_r");
    q_max = std::max(q_max, q);
  }

  RngStream stream = RngStream(seed).child(5);
  const ExplorationData all = ensemble.draw_joint(stream, static_cast<int>(q_max));

  const LossProfile oracle_profile{oq.sigma2_s, oq.gamma_opt, c_r, budget};
  std::vector<LossSweepRow> rows;
  rows.reserve(q_grid.size());
  for (long q : q_grid) {
    LossSweepRow row;
    row.q = q;
    row.oracle_loss = loss(oracle_profile, static_cast<double>(q));
    ExplorationData data;
    data.samples = all.samples.topRows(q);
    data.costs = all.costs.topRows(q);
    const RegretEstimate r =
        estimated_regret(s, static_cast<int>(q), data,
                         {ExploitationPolicy::kOptimalBlue, CovarianceSource::kEmpirical}, budget,
                         /*alpha=*/0.0, ensemble.oracle_moments());
    const LossProfile est_profile{r.k_hat, r.gamma_hat, r.c_r_hat, budget};
    row.estimated_loss = loss(est_profile, static_cast<double>(q));
    rows.push_back(row);
  }
  return rows;
}

/// One row of the subset landscape: a candidate subset and its optimal
/// oracle loss at the stated budget.
struct LandscapeRow {
  ModelSubset subset;
  double optimal_loss = 0.0;
};

/// Oracle optimal loss for every candidate subset, sorted ascending.
inline std::vector<LandscapeRow> subset_landscape(const GaussianLinearEnsemble& ensemble,
                                                  double budget, int max_subset_size) {
  const int n = ensemble.num_low_fidelity();
  const int cap = (max_subset_size <= 0) ? n : std::min(max_subset_size, n);
  std::vector<LandscapeRow> rows;
  for (const ModelSubset& s : enumerate_subsets(n, cap)) {
    LandscapeRow row;
    row.subset = s;
    row.optimal_loss = oracle_quantities(ensemble, s, budget).loss_star;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const LandscapeRow& a, const LandscapeRow& b) {
                     return a.optimal_loss < b.optimal_loss;
                   });
  return rows;
}

}  // namespace mfblue
