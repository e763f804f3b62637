#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "sde/csv.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string g_cli;
fs::path g_work;

int run(const std::string& args, std::string* output = nullptr) {
  fs::path cap = g_work / "capture.txt";
  std::string cmd = g_cli + " " + args + " > " + cap.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(cap);
    std::stringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = g_work / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// File content with '#' comment lines removed, for comparisons that should
// ignore caveat headers.
std::string data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line, out;
  while (std::getline(in, line))
    if (line.empty() || line[0] != '#') out += line + "\n";
  return out;
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

// Builds one small panel shared by the command tests.
const fs::path& shared_panel() {
  static fs::path panel = [] {
    fs::path d = fresh_dir("shared_sim");
    std::string cmd = "simulate --preset smooth_gradient --seed 11 --out-dir " + d.string() +
                      " --n-baseline 400 --n-topup 60";
    REQUIRE(run(cmd) == 0);
    return d / "panel.csv";
  }();
  return panel;
}

}  // namespace

TEST_CASE("simulate writes the panel, the truth, and a checksummed manifest") {
  fs::path d = fresh_dir("sim");
  int rc = run("simulate --preset homogeneous --seed 3 --out-dir " + d.string() +
               " --n-baseline 200 --n-topup 30");
  REQUIRE(rc == 0);
  for (const char* f : {"panel.csv", "truth_transitions.csv", "truth_effects.csv", "manifest.json"})
    CHECK(fs::exists(d / f));

  json m = json::parse(slurp(d / "manifest.json"));
  CHECK(m["command"] == "simulate");
  CHECK(m["seed"] == 3);
  CHECK(m["config"]["preset"] == "homogeneous");
  for (auto& [name, sum] : m["artifacts"].items())
    CHECK(sum.get<std::string>() == sde::file_checksum((d / name).string()));

  // Same seed, fresh directory: byte-identical artifacts.
  fs::path d2 = fresh_dir("sim_rerun");
  REQUIRE(run("simulate --preset homogeneous --seed 3 --out-dir " + d2.string() +
              " --n-baseline 200 --n-topup 30") == 0);
  CHECK(sde::file_checksum((d / "panel.csv").string()) ==
        sde::file_checksum((d2 / "panel.csv").string()));

  fs::path d3 = fresh_dir("sim_other_seed");
  REQUIRE(run("simulate --preset homogeneous --seed 4 --out-dir " + d3.string() +
              " --n-baseline 200 --n-topup 30") == 0);
  CHECK(sde::file_checksum((d / "panel.csv").string()) !=
        sde::file_checksum((d3 / "panel.csv").string()));
}

TEST_CASE("ingest reports extraction counts") {
  fs::path d = fresh_dir("ingest");
  REQUIRE(run("ingest --input " + shared_panel().string() + " --out-dir " + d.string()) == 0);
  std::ifstream in(d / "ingest_report.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "stage,metric,count");
  CHECK(count_lines(d / "ingest_report.csv") > 5);
  json m = json::parse(slurp(d / "manifest.json"));
  CHECK(m["seed"].is_null());
}

TEST_CASE("fit covers the panel grid and reruns byte-identically") {
  fs::path d = fresh_dir("fit");
  REQUIRE(run("fit --input " + shared_panel().string() + " --out-dir " + d.string() +
              " --estimators direct,complete --direction exit") == 0);
  CHECK(fs::exists(d / "fit_exit_direct.csv"));
  CHECK(fs::exists(d / "fit_exit_direct.svg"));
  CHECK(fs::exists(d / "fit_exit_direct_slices.svg"));
  CHECK(fs::exists(d / "fit_exit_complete.csv"));

  // The grid is the observed extent of the panel: every estimator covers it.
  std::ifstream in(shared_panel());
  std::string line;
  std::getline(in, line);  // header
  int a_lo = 1 << 30, a_hi = -1, y_lo = 1 << 30, y_hi = -1;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string id, year, age;
    std::getline(ss, id, ',');
    std::getline(ss, year, ',');
    std::getline(ss, age, ',');
    int y = std::stoi(year), a = std::stoi(age);
    a_lo = std::min(a_lo, a);
    a_hi = std::max(a_hi, a);
    y_lo = std::min(y_lo, y);
    y_hi = std::max(y_hi, y);
  }
  int n_cells = (a_hi - a_lo + 1) * (y_hi - y_lo + 1);
  CHECK(count_lines(d / "fit_exit_direct.csv") == n_cells + 1);
  CHECK(count_lines(d / "fit_exit_complete.csv") == n_cells + 1);

  fs::path d2 = fresh_dir("fit_rerun");
  REQUIRE(run("fit --input " + shared_panel().string() + " --out-dir " + d2.string() +
              " --estimators direct,complete --direction exit") == 0);
  CHECK(sde::file_checksum((d / "fit_exit_direct.csv").string()) ==
        sde::file_checksum((d2 / "fit_exit_direct.csv").string()));
  CHECK(sde::file_checksum((d / "fit_exit_direct.svg").string()) ==
        sde::file_checksum((d2 / "fit_exit_direct.svg").string()));
}

TEST_CASE("cv table is seeded and deterministic") {
  fs::path d = fresh_dir("cv");
  std::string base = "cv --input " + shared_panel().string() +
                     " --estimators direct,complete --folds 4 --draws 150 --seed 7";
  std::string out;
  REQUIRE(run(base + " --out-dir " + d.string(), &out) == 0);
  CHECK(fs::exists(d / "cv_table.csv"));
  CHECK(count_lines(d / "cv_table.csv") == 3);
  CHECK(out.find("direct") != std::string::npos);
  CHECK(out.find("complete") != std::string::npos);

  fs::path d2 = fresh_dir("cv_rerun");
  REQUIRE(run(base + " --out-dir " + d2.string()) == 0);
  CHECK(sde::file_checksum((d / "cv_table.csv").string()) ==
        sde::file_checksum((d2 / "cv_table.csv").string()));

  // Reference by name; unknown names are rejected.
  fs::path d3 = fresh_dir("cv_ref");
  REQUIRE(run(base + " --reference complete --out-dir " + d3.string()) == 0);
  CHECK(run(base + " --reference bogus --out-dir " + d3.string()) == 2);

  // An estimator always ties itself.
  fs::path d4 = fresh_dir("cv_twin");
  REQUIRE(run("cv --input " + shared_panel().string() +
              " --estimators direct,direct --folds 4 --draws 150 --seed 7 --out-dir " +
              d4.string()) == 0);
  std::ifstream tin(d4 / "cv_table.csv");
  std::string header, row1, row2;
  std::getline(tin, header);
  std::getline(tin, row1);
  std::getline(tin, row2);
  auto tail = [](const std::string& s) { return s.substr(s.find(',')); };
  CHECK(tail(row1) == tail(row2));
}

TEST_CASE("gcomp effect artifacts are seeded and reproducible") {
  fs::path d = fresh_dir("gcomp");
  std::string base = "gcomp --input " + shared_panel().string() +
                     " --pooling complete --form has_main --draws 200 --seed 5";
  std::string out;
  REQUIRE(run(base + " --out-dir " + d.string(), &out) == 0);
  for (const char* f : {"effect.csv", "effect.svg", "effect_slices.svg", "equilibrium.csv",
                        "surface_exposed.csv", "surface_unexposed.csv", "manifest.json"})
    CHECK(fs::exists(d / f));
  CHECK(out.find("effect") != std::string::npos);
  CHECK(out.find("equilibrium") != std::string::npos);

  fs::path d2 = fresh_dir("gcomp_rerun");
  REQUIRE(run(base + " --out-dir " + d2.string()) == 0);
  CHECK(sde::file_checksum((d / "effect.csv").string()) ==
        sde::file_checksum((d2 / "effect.csv").string()));
  CHECK(sde::file_checksum((d / "equilibrium.csv").string()) ==
        sde::file_checksum((d2 / "equilibrium.csv").string()));
}

TEST_CASE("a zero-year forecast is the in-sample fit") {
  fs::path df = fresh_dir("fc_fit");
  fs::path d0 = fresh_dir("fc_zero");
  std::string tail = " --input " + shared_panel().string() + " --knots 4 --direction exit";
  REQUIRE(run("fit --estimators tensor" + tail + " --out-dir " + df.string()) == 0);
  REQUIRE(run("forecast --horizon 0 --estimators tensor" + tail + " --out-dir " + d0.string()) ==
          0);
  CHECK(data_lines(df / "fit_exit_tensor.csv") == data_lines(d0 / "forecast_exit.csv"));
  // The caveat block only decorates the forecast artifact.
  CHECK(slurp(d0 / "forecast_exit.csv").find("caveat") != std::string::npos);
  CHECK(slurp(df / "fit_exit_tensor.csv").find("caveat") == std::string::npos);

  fs::path d3 = fresh_dir("fc_three");
  REQUIRE(run("forecast --horizon 3 --estimators tensor" + tail + " --out-dir " + d3.string()) ==
          0);
  // Three extra years of rows per age.
  int base_rows = count_lines(d0 / "forecast_exit.csv");
  int ext_rows = count_lines(d3 / "forecast_exit.csv");
  CHECK(ext_rows > base_rows);
  CHECK(slurp(d3 / "forecast_exit.svg").find("stroke-dasharray") != std::string::npos);
}

TEST_CASE("failures map to documented exit codes") {
  fs::path d = fresh_dir("codes");
  std::string panel = shared_panel().string();
  CHECK(run("fit --input " + panel + " --out-dir " + d.string() + " --estimators ridge") == 2);
  CHECK(run("fit --input " + (g_work / "missing.csv").string() + " --out-dir " + d.string()) == 3);
  CHECK(run("forecast --input " + panel + " --out-dir " + d.string() + " --horizon -1") == 2);
  CHECK(run("forecast --input " + panel + " --out-dir " + d.string() +
            " --horizon 1 --estimators direct") == 2);
  CHECK(run("gcomp --input " + panel + " --out-dir " + d.string() +
            " --form baseline --seed 1") == 2);
  CHECK(run("gcomp --input " + panel + " --out-dir " + d.string() +
            " --pooling complete --form has_modified --seed 1") == 2);
  CHECK(run("cv --input " + panel + " --out-dir " + d.string() +
            " --estimators direct --seed 1") == 2);  // needs at least two
  CHECK(run("simulate --preset unheard_of --seed 1 --out-dir " + d.string()) == 2);
  CHECK(run("fit") == 2);        // missing required options
  CHECK(run("frobnicate") == 2);  // unknown subcommand
  CHECK(run("--help") == 0);
}

int main(int argc, char** argv) {
  // First argument: path to the command-line binary under test.
  if (argc > 1 && argv[1][0] != '-') {
    g_cli = argv[1];
    for (int i = 1; i + 1 < argc; ++i) argv[i] = argv[i + 1];
    --argc;
  }
  if (g_cli.empty()) {
    std::fprintf(stderr, "usage: cli_tests <path-to-cli> [doctest args]\n");
    return 1;
  }
  g_work = fs::temp_directory_path() / "sde_cli_tests";
  fs::create_directories(g_work);
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  int rc = ctx.run();
  fs::remove_all(g_work);
  return rc;
}
