#pragma once

#include <json.hpp>

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "mfblue/errors.hpp"
#include "mfblue/problems.hpp"

namespace mfblue {

inline constexpr const char* kLibraryVersion = "0.1.0";
inline constexpr const char* kEnsembleSchema = "mfblue/ensemble/1";
inline constexpr const char* kCostTableSchema = "mfblue/cost-table/1";
inline constexpr const char* kExperimentSchema = "mfblue/experiment/1";
inline constexpr const char* kSummarySchema = "mfblue/summary/1";
inline constexpr const char* kResultsCsvSchema = "mfblue-results-1";

namespace io {

using nlohmann::json;

/// Fail fast on typos: every object key must be in the allowed set.
inline void require_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::set<std::string>& required, const std::string& where) {
  if (!obj.is_object()) throw SpecError(where + ": expected a JSON object");
  for (const auto& [key, value] : obj.items())
    if (allowed.find(key) == allowed.end())
      throw SpecError(where + ": unknown key \"" + key + "\"");
  for (const auto& key : required)
    if (!obj.contains(key)) throw SpecError(where + ": missing key \"" + key + "\"");
}

inline Eigen::VectorXd parse_vector(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw SpecError(where + ": expected an array of numbers");
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw SpecError(where + ": expected a number");
    v[static_cast<long>(i)] = arr[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd parse_matrix(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.empty()) throw SpecError(where + ": expected an array of rows");
  const std::size_t cols = arr[0].size();
  Eigen::MatrixXd m(arr.size(), cols);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const Eigen::VectorXd row = parse_vector(arr[i], where);
    if (static_cast<std::size_t>(row.size()) != cols)
      throw SpecError(where + ": ragged matrix rows");
    m.row(static_cast<long>(i)) = row.transpose();
  }
  return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json arr = json::array();
  for (long i = 0; i < m.rows(); ++i) arr.push_back(vector_to_json(m.row(i).transpose()));
  return arr;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FixtureNotFound("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SpecError(path + ": " + e.what());
  }
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

/// FNV-1a 64-bit content hash, reported in run manifests.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace io

inline CostNoise parse_cost_noise(const io::json& j, const std::string& where) {
  io::require_keys(j, {"kind", "half_width"}, {"kind"}, where);
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "none") return CostNoise{};
  if (kind == "uniform_relative") {
    if (!j.contains("half_width")) throw SpecError(where + ": uniform_relative needs half_width");
    const double hw = j.at("half_width").get<double>();
    if (!(hw > 0.0 && hw < 1.0)) throw SpecError(where + ": half_width must be in (0,1)");
    return CostNoise{hw};
  }
  throw SpecError(where + ": unknown cost_noise kind \"" + kind + "\"");
}

inline io::json cost_noise_to_json(const CostNoise& noise) {
  io::json j;
  if (noise.active()) {
    j["kind"] = "uniform_relative";
    j["half_width"] = noise.half_width;
  } else {
    j["kind"] = "none";
  }
  return j;
}

/// Parses an ensemble fixture object (schema mfblue/ensemble/1).
inline GaussianLinearEnsemble parse_ensemble(const io::json& j, const std::string& where) {
  io::require_keys(j,
                   {"schema", "name", "description", "means", "covariance", "mean_costs",
                    "cost_noise"},
                   {"schema", "means", "covariance", "mean_costs"}, where);
  if (j.at("schema").get<std::string>() != kEnsembleSchema)
    throw SpecError(where + ": expected schema " + std::string(kEnsembleSchema));
  const Eigen::VectorXd means = io::parse_vector(j.at("means"), where + ".means");
  const Eigen::MatrixXd cov = io::parse_matrix(j.at("covariance"), where + ".covariance");
  const Eigen::VectorXd costs = io::parse_vector(j.at("mean_costs"), where + ".mean_costs");
  CostNoise noise;
  if (j.contains("cost_noise")) noise = parse_cost_noise(j.at("cost_noise"), where + ".cost_noise");
  try {
    return GaussianLinearEnsemble(means, cov, costs, noise);
  } catch (const Error& e) {
    throw SpecError(where + ": " + e.what());
  }
}

inline GaussianLinearEnsemble load_ensemble_fixture(const std::string& path) {
  return parse_ensemble(io::load_json_file(path), path);
}

inline io::json ensemble_to_json(const GaussianLinearEnsemble& ensemble, const std::string& name,
                                 const std::string& description) {
  io::json j;
  j["schema"] = kEnsembleSchema;
  j["name"] = name;
  j["description"] = description;
  j["means"] = io::vector_to_json(ensemble.means());
  j["covariance"] = io::matrix_to_json(ensemble.covariance());
  j["mean_costs"] = io::vector_to_json(ensemble.mean_costs());
  j["cost_noise"] = cost_noise_to_json(ensemble.cost_noise());
  return j;
}

/// The relative compute costs of the thirteen ice-sheet models (seconds
/// per solve), shipped as configuration data for documentation examples.
inline io::json ice_sheet_cost_table() {
  io::json j;
  j["schema"] = kCostTableSchema;
  j["name"] = "humboldt-ice-sheet";
  j["description"] =
      "Relative compute costs of the thirteen ice-sheet models (MOLHO and SSA "
      "physics at several space/time discretizations). Cross-model correlations "
      "are not included; this table is configuration data for cost-model examples.";
  j["models"] = io::json::array();
  const std::vector<std::pair<std::string, double>> rows = {
      {"MOLHO_1,9", 15489.2}, {"MOLHO_1,36", 3727.4}, {"MOLHO_1.5,36", 2248.23},
      {"MOLHO_2,36", 1489.3}, {"MOLHO_3,36", 410.4},  {"SSA_1,36", 1434.0},
      {"SSA_1.5,36", 850.9},  {"SSA_2,36", 569.9},    {"SSA_3,36", 161.5},
      {"SSA_1,365", 191.7},   {"SSA_1.5,365", 110.7}, {"SSA_2,365", 72.8},
      {"SSA_3,365", 20.2}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    io::json m;
    m["index"] = i;
    m["name"] = rows[i].first;
    m["cost_seconds"] = rows[i].second;
    j["models"].push_back(m);
  }
  return j;
}

}  // namespace mfblue
