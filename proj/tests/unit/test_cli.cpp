#include <catch2/catch_amalgamated.hpp>

#include <mfblue/io.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mfblue_cli_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int value = 0;
    return value;
  }
};

int run_cli(const std::string& args) {
  const std::string command = std::string(MFBLUE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WEXITSTATUS(status);
}

std::string run_cli_stdout(const std::string& args, int& exit_code) {
  TempDir scratch;
  const fs::path out = scratch.path / "stdout.txt";
  const std::string command =
      std::string(MFBLUE_CLI_PATH) + " " + args + " >" + out.string() + " 2>/dev/null";
  exit_code = WEXITSTATUS(std::system(command.c_str()));
  std::ifstream in(out);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_experiment_spec(const fs::path& path, long trials, std::uint64_t seed) {
  mfblue::io::json ensemble;
  ensemble["schema"] = mfblue::kEnsembleSchema;
  ensemble["means"] = {2.0, 1.5};
  ensemble["covariance"] = {{1.0, 0.8}, {0.8, 1.0}};
  ensemble["mean_costs"] = {4.0, 1.0};

  mfblue::io::json spec;
  spec["schema"] = mfblue::kExperimentSchema;
  spec["ensemble"] = ensemble;
  spec["budgets"] = {400.0, 800.0};
  spec["estimators"] = {"MC", "AETC_OPT_E"};
  spec["trials"] = trials;
  spec["seed"] = seed;
  spec["max_subset_size"] = 1;
  std::ofstream out(path);
  out << spec.dump(2);
}

}  // namespace

TEST_CASE("run subcommand writes results and is deterministic across workers") {
  TempDir dir;
  const fs::path spec = dir.path / "spec.json";
  write_experiment_spec(spec, 6, 31337);

  const fs::path out1 = dir.path / "out1";
  const fs::path out2 = dir.path / "out2";
  REQUIRE(run_cli("run --spec " + spec.string() + " --out " + out1.string() +
                  " --workers 1") == 0);
  REQUIRE(run_cli("run --spec " + spec.string() + " --out " + out2.string() +
                  " --workers 3") == 0);

  REQUIRE(fs::exists(out1 / "results.csv"));
  REQUIRE(fs::exists(out1 / "summary.json"));
  REQUIRE(fs::exists(out1 / "manifest.json"));
  REQUIRE(slurp(out1 / "results.csv") == slurp(out2 / "results.csv"));
  REQUIRE(slurp(out1 / "summary.json") == slurp(out2 / "summary.json"));

  SECTION("existing outputs need --force") {
    REQUIRE(run_cli("run --spec " + spec.string() + " --out " + out1.string()) == 1);
    REQUIRE(run_cli("run --spec " + spec.string() + " --out " + out1.string() +
                    " --force") == 0);
  }

  SECTION("seed override changes the results") {
    const fs::path out3 = dir.path / "out3";
    REQUIRE(run_cli("run --spec " + spec.string() + " --out " + out3.string() +
                    " --seed 999") == 0);
    REQUIRE(slurp(out1 / "results.csv") != slurp(out3 / "results.csv"));
  }
}

TEST_CASE("run subcommand reports missing fixtures as runtime errors") {
  TempDir dir;
  const fs::path spec = dir.path / "spec.json";
  mfblue::io::json j;
  j["schema"] = mfblue::kExperimentSchema;
  j["ensemble"] = "does_not_exist.json";
  j["budgets"] = {100.0};
  j["estimators"] = {"MC"};
  j["trials"] = 1;
  j["seed"] = 1;
  std::ofstream(spec) << j.dump();
  REQUIRE(run_cli("run --spec " + spec.string() + " --out " +
                  (dir.path / "out").string()) == 1);
}

TEST_CASE("malformed specs exit with the usage code") {
  TempDir dir;
  const fs::path spec = dir.path / "spec.json";
  mfblue::io::json j;
  j["schema"] = mfblue::kExperimentSchema;
  j["ensemble"] = "x.json";
  j["budgets"] = {100.0};
  j["estimators"] = {"MC"};
  j["trials"] = 1;
  j["seed"] = 1;
  j["oops"] = true;
  std::ofstream(spec) << j.dump();
  REQUIRE(run_cli("run --spec " + spec.string() + " --out " +
                  (dir.path / "out").string()) == 2);

  REQUIRE(run_cli("run --out somewhere") == 2);  // missing required flag
  REQUIRE(run_cli("not_a_command") == 2);
}

TEST_CASE("alloc subcommand prints the closed-form single-group row") {
  TempDir dir;
  const fs::path spec = dir.path / "alloc.json";
  mfblue::io::json j;
  j["schema"] = "mfblue/alloc/1";
  j["covariance"] = {{2.0}};
  j["model_costs"] = {4.0};
  j["sketch"] = {1.0};
  j["budget"] = 40.0;
  std::ofstream(spec) << j.dump();

  int code = -1;
  const std::string out = run_cli_stdout("alloc --spec " + spec.string(), code);
  REQUIRE(code == 0);
  REQUIRE(out.find("group,m_continuous,m_rounded") != std::string::npos);
  REQUIRE(out.find("{0},10,10") != std::string::npos);
  // objective = sigma * c / B = 2*4/40
  const auto at = out.find("objective,");
  REQUIRE(at != std::string::npos);
  REQUIRE(std::stod(out.substr(at + 10)) == Catch::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("fixtures subcommand writes the bundled fixture files") {
  TempDir dir;
  const fs::path out = dir.path / "fixtures";
  REQUIRE(run_cli("fixtures --out " + out.string()) == 0);
  REQUIRE(fs::exists(out / "elasticity_surrogate.json"));
  REQUIRE(fs::exists(out / "ice_sheet_costs.json"));
  REQUIRE(run_cli("fixtures --out " + out.string()) == 1);
  REQUIRE(run_cli("fixtures --out " + out.string() + " --force") == 0);

  const auto ensemble = mfblue::load_ensemble_fixture((out / "elasticity_surrogate.json").string());
  REQUIRE(ensemble.num_low_fidelity() == 4);
}

TEST_CASE("loss and landscape subcommands emit csv tables") {
  TempDir dir;
  const fs::path out = dir.path / "fixtures";
  REQUIRE(run_cli("fixtures --out " + out.string()) == 0);
  const std::string fixture = (out / "elasticity_surrogate.json").string();

  int code = -1;
  const std::string loss_csv = run_cli_stdout(
      "loss --ensemble " + fixture + " --subset 1,2,3,4 --budget 2000000 --q-min 16 " +
          "--q-max 64 --q-step 16 --seed 3",
      code);
  REQUIRE(code == 0);
  REQUIRE(loss_csv.rfind("q,oracle_loss,estimated_loss\n", 0) == 0);
  REQUIRE(std::count(loss_csv.begin(), loss_csv.end(), '\n') == 5);

  const std::string land_csv =
      run_cli_stdout("landscape --ensemble " + fixture + " --budget 2000000", code);
  REQUIRE(code == 0);
  REQUIRE(land_csv.rfind("subset,optimal_loss\n", 0) == 0);
  REQUIRE(land_csv.find("{1;2;3;4}") != std::string::npos);
}
