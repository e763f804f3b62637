// Command-line front end. Subcommands cover the full pipeline: simulate a
// synthetic panel, ingest/validate a panel, fit transition-surface
// estimators, cross-validate them, run the counterfactual g-computation, and
// extrapolate the tensor surface beyond the observed years.
//
// Every command writes its artifacts into --out-dir plus a manifest.json
// recording the resolved configuration, the seed, and an FNV-1a checksum per
// artifact. Reruns with identical flags are byte-identical.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sde/csv.hpp"
#include "sde/cv.hpp"
#include "sde/errors.hpp"
#include "sde/fit.hpp"
#include "sde/gcomp.hpp"
#include "sde/grid.hpp"
#include "sde/mh_model.hpp"
#include "sde/panel.hpp"
#include "sde/simulate.hpp"
#include "sde/svg.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kZ975 = 1.959963984540054;

// Collects artifact paths as they are written so the manifest can checksum
// them at the end of the command.
struct OutDir {
  fs::path dir;
  std::vector<std::string> files;

  explicit OutDir(const std::string& d) : dir(d) { fs::create_directories(dir); }

  std::string path(const std::string& name) {
    files.push_back(name);
    return (dir / name).string();
  }

  void manifest(const std::string& command, const json& config,
                std::optional<std::uint64_t> seed) const {
    json m;
    m["command"] = command;
    m["config"] = config;
    if (seed) m["seed"] = *seed;
    else m["seed"] = nullptr;
    json sums = json::object();
    for (const auto& f : files) sums[f] = sde::file_checksum((dir / f).string());
    m["artifacts"] = sums;
    sde::FileWriter w((dir / "manifest.json").string());
    w.writeln(m.dump(2));
  }
};

sde::Direction parse_direction(const std::string& s) {
  if (s == "exit") return sde::Direction::exit;
  if (s == "entry") return sde::Direction::entry;
  throw sde::ConfigError("unknown direction '" + s + "' (expected exit or entry)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

sde::DomainGrid grid_from_panel(const std::vector<sde::PersonYear>& panel) {
  if (panel.empty()) throw sde::DataError("panel has no rows");
  sde::DomainGrid g{panel[0].age, panel[0].age, panel[0].year, panel[0].year};
  for (const auto& r : panel) {
    g.age_min = std::min(g.age_min, r.age);
    g.age_max = std::max(g.age_max, r.age);
    g.year_min = std::min(g.year_min, r.year);
    g.year_max = std::max(g.year_max, r.year);
  }
  g.validate();
  return g;
}

std::vector<sde::PersonYear> load_panel(const std::string& input, const std::string& thresholds,
                                        sde::IngestReport* report = nullptr) {
  auto panel = sde::read_panel_csv(input);
  if (!thresholds.empty()) {
    auto table = sde::read_thresholds_csv(thresholds);
    sde::apply_thresholds(panel, table, report);
  }
  return panel;
}

std::vector<sde::EstimatorConfig> parse_estimator_list(const std::string& list, int knots,
                                                       double weight, int kernel_width) {
  std::vector<sde::EstimatorConfig> configs;
  for (const auto& name : split_list(list)) {
    sde::EstimatorConfig cfg;
    cfg.kind = sde::parse_estimator(name);
    cfg.weight_w = weight;
    cfg.kernel_half_width = kernel_width;
    if (knots > 0) cfg.smooth.n_interior = knots;
    configs.push_back(cfg);
  }
  if (configs.empty()) throw sde::ConfigError("empty estimator list");
  return configs;
}

// Ages shown in the slice plots; falls back to the youngest age on grids
// that miss all of the usual ones.
std::vector<int> slice_ages(const sde::DomainGrid& grid) {
  std::vector<int> ages;
  for (int a : {30, 40, 50, 60})
    if (a >= grid.age_min && a <= grid.age_max) ages.push_back(a);
  if (ages.empty()) ages.push_back(grid.age_min);
  return ages;
}

std::string csv_field(double v, bool present) { return present ? sde::format_double(v) : ""; }

void write_fit_csv(const std::string& path, const sde::CellSummary& s,
                   const std::vector<std::string>& header_comments = {}) {
  sde::FileWriter w(path);
  for (const auto& c : header_comments) w.writeln("# " + c);
  w.writeln("age,year,mean,q025,q500,q975,n");
  const auto& g = s.grid;
  for (int i = 0; i < g.n_cells(); ++i) {
    auto cell = g.cell_at(i);
    bool d = s.defined[i];
    bool q = s.has_quantiles[i];
    w.writeln(std::to_string(cell.age) + "," + std::to_string(cell.year) + "," +
              csv_field(s.mean_p[i], d) + "," + csv_field(s.q025[i], q) + "," +
              csv_field(s.q500[i], q) + "," + csv_field(s.q975[i], q) + "," +
              std::to_string(s.n[i]));
  }
}

// Summary over the horizon-extended grid. Observed cells reuse the standard
// summary verbatim; cells beyond the data are evaluated through the tensor
// basis rows, whose knots already span the extension.
sde::CellSummary forecast_summary(const sde::BinomialFieldFit& fit, const sde::CellCounts& counts,
                                  int horizon) {
  sde::CellSummary base = sde::summarize(sde::BinomialFitAny(fit), counts);
  if (horizon == 0) return base;

  sde::DomainGrid eg = fit.grid;
  eg.year_max += horizon;
  const int m = eg.n_cells();
  sde::CellSummary s;
  s.grid = eg;
  s.mean_p.resize(m);
  s.q025.resize(m);
  s.q500.resize(m);
  s.q975.resize(m);
  s.post_logit_mean.resize(m);
  s.post_logit_var.resize(m);
  s.point_logit.resize(m);
  s.defined.resize(m);
  s.has_quantiles.resize(m);
  s.n.resize(m);

  for (int i = 0; i < m; ++i) {
    auto cell = eg.cell_at(i);
    if (cell.year <= fit.grid.year_max) {
      int j = fit.grid.index_of(cell.age, cell.year);
      s.mean_p[i] = base.mean_p[j];
      s.q025[i] = base.q025[j];
      s.q500[i] = base.q500[j];
      s.q975[i] = base.q975[j];
      s.post_logit_mean[i] = base.post_logit_mean[j];
      s.post_logit_var[i] = base.post_logit_var[j];
      s.point_logit[i] = base.point_logit[j];
      s.defined[i] = base.defined[j];
      s.has_quantiles[i] = base.has_quantiles[j];
      s.n[i] = base.n[j];
      continue;
    }
    Eigen::RowVectorXd row = fit.tensor->row(cell.age, cell.year);
    double mode = row.dot(fit.theta);
    Eigen::VectorXd solved = fit.precision->solve(row.transpose());
    double var = row.dot(solved);
    double sd = std::sqrt(var);
    s.mean_p[i] = sde::logit_normal_mean(mode, var);
    s.q025[i] = sde::inv_logit(mode - kZ975 * sd);
    s.q500[i] = sde::inv_logit(mode);
    s.q975[i] = sde::inv_logit(mode + kZ975 * sd);
    s.post_logit_mean[i] = mode;
    s.post_logit_var[i] = var;
    s.point_logit[i] = mode;
    s.defined[i] = true;
    s.has_quantiles[i] = true;
    s.n[i] = 0;
  }
  return s;
}

// --------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string preset;
  std::string out_dir;
  std::uint64_t seed = 0;
  int n_baseline = -1;
  int n_topup = -1;
  double dropout = -1.0;
};

int cmd_simulate(const SimulateArgs& a) {
  sde::ScenarioSpec spec = sde::preset(a.preset, a.seed);
  if (a.n_baseline >= 0) spec.n_baseline = a.n_baseline;
  if (a.n_topup >= 0) spec.n_topup = a.n_topup;
  if (a.dropout >= 0.0) spec.dropout = a.dropout;
  spec.validate();

  sde::SimResult sim = sde::generate(spec, a.seed);

  OutDir out(a.out_dir);
  sde::write_panel_csv(out.path("panel.csv"), sim.panel);
  sde::write_truth_transitions_csv(out.path("truth_transitions.csv"), sim);
  sde::write_truth_effects_csv(out.path("truth_effects.csv"), sim);

  json cfg = {{"preset", a.preset},
              {"n_baseline", spec.n_baseline},
              {"n_topup", spec.n_topup},
              {"dropout", spec.dropout},
              {"out_dir", a.out_dir}};
  out.manifest("simulate", cfg, a.seed);

  std::cout << "panel rows: " << sim.panel.size() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// ingest

struct IngestArgs {
  std::string input;
  std::string out_dir;
  std::string thresholds;
};

int cmd_ingest(const IngestArgs& a) {
  sde::IngestReport derive_report;
  auto panel = load_panel(a.input, a.thresholds, &derive_report);
  sde::DomainGrid grid = grid_from_panel(panel);

  sde::IngestReport exit_report = derive_report;
  sde::IngestReport entry_report;
  sde::IngestReport diff_report;
  auto exits = sde::extract_transitions(panel, sde::Direction::exit, grid, &exit_report);
  auto entries = sde::extract_transitions(panel, sde::Direction::entry, grid, &entry_report);
  auto diffs = sde::extract_diffs(panel, grid, &diff_report);

  OutDir out(a.out_dir);
  {
    sde::FileWriter w(out.path("ingest_report.csv"));
    w.writeln("stage,metric,count");
    auto block = [&](const std::string& stage, const sde::IngestReport& r) {
      for (const auto& [metric, count] : r.rows())
        w.writeln(stage + "," + metric + "," + std::to_string(count));
    };
    block("exit", exit_report);
    block("entry", entry_report);
    block("diffs", diff_report);
  }
  if (!a.thresholds.empty()) sde::write_panel_csv(out.path("panel_derived.csv"), panel);

  json cfg = {{"input", a.input}, {"thresholds", a.thresholds}, {"out_dir", a.out_dir}};
  out.manifest("ingest", cfg, std::nullopt);

  std::cout << "panel rows: " << panel.size() << "  grid: " << grid.age_min << "-" << grid.age_max
            << " x " << grid.year_min << "-" << grid.year_max << "\n"
            << "exit records: " << exits.size() << "  entry records: " << entries.size()
            << "  diff records: " << diffs.size() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string input;
  std::string out_dir;
  std::string direction = "exit";
  std::string estimators = "direct,tensor";
  std::string thresholds;
  int knots = 0;
  double weight = 0.5;
  int kernel_width = 5;
};

int cmd_fit(const FitArgs& a) {
  auto panel = load_panel(a.input, a.thresholds);
  sde::DomainGrid grid = grid_from_panel(panel);
  sde::Direction dir = parse_direction(a.direction);
  auto records = sde::extract_transitions(panel, dir, grid);
  sde::CellCounts counts = sde::aggregate(records, grid);
  auto configs = parse_estimator_list(a.estimators, a.knots, a.weight, a.kernel_width);

  OutDir out(a.out_dir);
  for (const auto& cfg : configs) {
    std::string name = sde::estimator_name(cfg.kind);
    sde::BinomialFitAny fit = sde::fit_estimator(cfg, counts);
    sde::CellSummary s = sde::summarize(fit, counts);
    std::string stem = "fit_" + a.direction + "_" + name;
    write_fit_csv(out.path(stem + ".csv"), s);
    std::string title = a.direction + " probability (" + name + ")";
    sde::write_heatmap_svg(out.path(stem + ".svg"), grid, s.mean_p, title);
    if ((s.has_quantiles == true).any())
      sde::write_age_slices_svg(out.path(stem + "_slices.svg"), grid, s.mean_p, s.q025, s.q975,
                                slice_ages(grid), title);
    std::cout << name << ": " << records.size() << " records over "
              << counts.n_populated() << "/" << grid.n_cells() << " cells\n";
  }

  json cfg = {{"input", a.input},       {"direction", a.direction},
              {"estimators", a.estimators}, {"knots", a.knots},
              {"weight", a.weight},     {"kernel_width", a.kernel_width},
              {"thresholds", a.thresholds}, {"out_dir", a.out_dir}};
  out.manifest("fit", cfg, std::nullopt);
  return 0;
}

// --------------------------------------------------------------------------
// cv

struct CvArgs {
  std::string input;
  std::string out_dir;
  std::string direction = "exit";
  std::string estimators = "direct,complete,partial_pool,tensor";
  std::string fold_design = "stratified";
  std::string reference;
  std::string thresholds;
  int folds = 5;
  int draws = 2000;
  int knots = 0;
  double weight = 0.5;
  int kernel_width = 5;
  std::uint64_t seed = 0;
};

int cmd_cv(const CvArgs& a) {
  auto panel = load_panel(a.input, a.thresholds);
  sde::DomainGrid grid = grid_from_panel(panel);
  auto records = sde::extract_transitions(panel, parse_direction(a.direction), grid);
  auto configs = parse_estimator_list(a.estimators, a.knots, a.weight, a.kernel_width);

  int reference = 0;
  if (!a.reference.empty()) {
    sde::EstimatorKind want = sde::parse_estimator(a.reference);
    reference = -1;
    for (std::size_t i = 0; i < configs.size(); ++i)
      if (configs[i].kind == want) reference = static_cast<int>(i);
    if (reference < 0)
      throw sde::ConfigError("reference estimator '" + a.reference + "' not in the list");
  }

  sde::CvOptions opt;
  opt.design = sde::parse_fold_design(a.fold_design);
  opt.n_folds = a.folds;
  opt.n_draws = a.draws;
  opt.seed = a.seed;

  auto rows = sde::cv_table(configs, reference, records, grid, opt);

  OutDir out(a.out_dir);
  sde::write_cv_table_csv(out.path("cv_table.csv"), rows);

  json cfg = {{"input", a.input},          {"direction", a.direction},
              {"estimators", a.estimators},    {"fold_design", a.fold_design},
              {"folds", a.folds},          {"draws", a.draws},
              {"reference", rows[reference].estimator}, {"knots", a.knots},
              {"thresholds", a.thresholds},    {"out_dir", a.out_dir}};
  out.manifest("cv", cfg, a.seed);

  for (const auto& r : rows)
    std::cout << r.estimator << ": elpd_cv " << sde::format_fixed(r.elpd_cv, 1) << " (sd "
              << sde::format_fixed(r.sd, 1) << "), delta " << sde::format_fixed(r.delta_cv, 1)
              << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// gcomp

struct GcompArgs {
  std::string input;
  std::string out_dir;
  std::string pooling = "tensor";
  std::string form = "has_modified";
  std::string policy = "fixed";
  std::string thresholds;
  int knots = 0;
  int draws = 2000;
  std::uint64_t seed = 0;
};

int cmd_gcomp(const GcompArgs& a) {
  auto panel = load_panel(a.input, a.thresholds);
  sde::DomainGrid grid = grid_from_panel(panel);
  auto diffs = sde::extract_diffs(panel, grid);

  sde::MhModelSpec spec;
  spec.pooling = sde::parse_pooling(a.pooling);
  spec.form = sde::parse_mh_form(a.form);
  if (a.knots > 0) spec.smooth.n_interior = a.knots;
  spec.validate();

  sde::MhFit fit = sde::fit_mh_model(spec, diffs, grid);

  sde::GcompOptions opt;
  opt.policy = sde::parse_policy(a.policy);
  opt.n_draws = a.draws;
  opt.seed = a.seed;

  sde::CounterfactualSurface exposed = sde::counterfactual_surface(fit, 1, opt, &diffs);
  sde::CounterfactualSurface unexposed = sde::counterfactual_surface(fit, 0, opt, &diffs);
  sde::EffectSurface effect = sde::effect_surface(fit, opt, &diffs);
  sde::EquilibriumSummary eq = sde::equilibrium_summary(fit, a.draws, a.seed);

  OutDir out(a.out_dir);
  sde::write_surface_csv(out.path("surface_exposed.csv"), exposed, spec, opt.policy);
  sde::write_surface_csv(out.path("surface_unexposed.csv"), unexposed, spec, opt.policy);
  sde::write_effect_csv(out.path("effect.csv"), effect, spec);
  sde::write_equilibrium_csv(out.path("equilibrium.csv"), eq);

  auto ages = slice_ages(grid);
  sde::write_heatmap_svg(out.path("surface_exposed.svg"), grid, exposed.mean,
                         "expected MH change, stress present");
  sde::write_heatmap_svg(out.path("surface_unexposed.svg"), grid, unexposed.mean,
                         "expected MH change, stress absent");
  sde::write_heatmap_svg(out.path("effect.svg"), grid, effect.mean,
                         "stress effect on MH change");
  sde::write_age_slices_svg(out.path("effect_slices.svg"), grid, effect.mean, effect.q025,
                            effect.q975, ages, "stress effect on MH change");

  json cfg = {{"input", a.input},   {"pooling", a.pooling}, {"form", a.form},
              {"policy", a.policy}, {"knots", a.knots},     {"draws", a.draws},
              {"thresholds", a.thresholds}, {"out_dir", a.out_dir}};
  out.manifest("gcomp", cfg, a.seed);

  std::cout << "effect overall: " << sde::format_fixed(effect.overall_mean, 2) << " ["
            << sde::format_fixed(effect.overall_q025, 2) << ", "
            << sde::format_fixed(effect.overall_q975, 2) << "]\n"
            << "equilibrium shift: " << sde::format_fixed(eq.mean, 2) << " ["
            << sde::format_fixed(eq.q025, 2) << ", " << sde::format_fixed(eq.q975, 2) << "]\n";
  return 0;
}

// --------------------------------------------------------------------------
// forecast

struct ForecastArgs {
  std::string input;
  std::string out_dir;
  std::string direction = "exit";
  std::string estimators = "tensor";
  std::string thresholds;
  int horizon = 0;
  int knots = 0;
};

int cmd_forecast(const ForecastArgs& a) {
  if (a.horizon < 0) throw sde::ConfigError("forecast horizon must be >= 0");
  for (const auto& name : split_list(a.estimators))
    if (sde::parse_estimator(name) != sde::EstimatorKind::tensor)
      throw sde::ConfigError("forecast supports only the tensor estimator, got '" + name + "'");

  auto panel = load_panel(a.input, a.thresholds);
  sde::DomainGrid grid = grid_from_panel(panel);
  auto records = sde::extract_transitions(panel, parse_direction(a.direction), grid);
  sde::CellCounts counts = sde::aggregate(records, grid);

  sde::SmoothSpec smooth;
  if (a.knots > 0) smooth.n_interior = a.knots;
  sde::BinomialFieldFit fit =
      sde::fit_tensor_binomial(counts, smooth, sde::SelectOptions{}, a.horizon);
  sde::CellSummary s = forecast_summary(fit, counts, a.horizon);

  OutDir out(a.out_dir);
  std::string stem = "forecast_" + a.direction;
  std::vector<std::string> caveat = {
      "projection " + std::to_string(a.horizon) + " year(s) beyond the observed data",
      "caveat: the surface model is built for in-sample smoothing and is not designed "
      "for the purpose of forecasting; intervals widen rapidly with the horizon"};
  write_fit_csv(out.path(stem + ".csv"), s, caveat);

  std::string title = a.direction + " probability, " + std::to_string(a.horizon) + "-year projection";
  if (a.horizon > 0)
    sde::write_forecast_svg(out.path(stem + ".svg"), s.grid, s.mean_p, s.q025, s.q975,
                            slice_ages(s.grid), grid.year_max + 1, title);
  else
    sde::write_age_slices_svg(out.path(stem + ".svg"), s.grid, s.mean_p, s.q025, s.q975,
                              slice_ages(s.grid), title);

  json cfg = {{"input", a.input},     {"direction", a.direction}, {"horizon", a.horizon},
              {"knots", a.knots},     {"thresholds", a.thresholds},   {"out_dir", a.out_dir}};
  out.manifest("forecast", cfg, std::nullopt);

  std::cout << "forecast years: " << grid.year_max + 1 << "-" << s.grid.year_max << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"housing affordability stress transitions and mental health effects"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "generate a synthetic panel from a named scenario");
  c_sim->add_option("--preset", sim.preset, "scenario name")->required();
  c_sim->add_option("--seed", sim.seed, "RNG seed")->required();
  c_sim->add_option("--out-dir", sim.out_dir, "output directory")->required();
  c_sim->add_option("--n-baseline", sim.n_baseline, "override baseline cohort size");
  c_sim->add_option("--n-topup", sim.n_topup, "override top-up cohort size");
  c_sim->add_option("--dropout", sim.dropout, "override annual dropout hazard");

  IngestArgs ing;
  auto* c_ing = app.add_subcommand("ingest", "validate a panel and report extraction counts");
  c_ing->add_option("--input", ing.input, "panel CSV")->required();
  c_ing->add_option("--out-dir", ing.out_dir, "output directory")->required();
  c_ing->add_option("--thresholds", ing.thresholds, "year,income_p40 CSV for deriving the stress flag");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "estimate transition probability surfaces");
  c_fit->add_option("--input", fit.input, "panel CSV")->required();
  c_fit->add_option("--out-dir", fit.out_dir, "output directory")->required();
  c_fit->add_option("--direction", fit.direction, "exit or entry");
  c_fit->add_option("--estimators", fit.estimators, "comma list: direct,complete,weighted,kernel,partial,tensor");
  c_fit->add_option("--knots", fit.knots, "interior knots per margin (tensor)");
  c_fit->add_option("--weight", fit.weight, "pooling weight (weighted estimator)");
  c_fit->add_option("--kernel-width", fit.kernel_width, "kernel half-width in years (kernel estimator)");
  c_fit->add_option("--thresholds", fit.thresholds, "thresholds CSV");

  CvArgs cv;
  auto* c_cv = app.add_subcommand("cv", "cross-validated estimator comparison table");
  c_cv->add_option("--input", cv.input, "panel CSV")->required();
  c_cv->add_option("--out-dir", cv.out_dir, "output directory")->required();
  c_cv->add_option("--seed", cv.seed, "RNG seed")->required();
  c_cv->add_option("--direction", cv.direction, "exit or entry");
  c_cv->add_option("--estimators", cv.estimators, "comma list of estimators");
  c_cv->add_option("--folds", cv.folds, "number of folds");
  c_cv->add_option("--fold-design", cv.fold_design, "stratified, leave_year, leave_age, or leave_cohort");
  c_cv->add_option("--draws", cv.draws, "posterior draws per scored record");
  c_cv->add_option("--reference", cv.reference, "estimator the delta columns compare against");
  c_cv->add_option("--knots", cv.knots, "interior knots per margin (tensor)");
  c_cv->add_option("--weight", cv.weight, "pooling weight (weighted estimator)");
  c_cv->add_option("--kernel-width", cv.kernel_width, "kernel half-width in years");
  c_cv->add_option("--thresholds", cv.thresholds, "thresholds CSV");

  GcompArgs gc;
  auto* c_gc = app.add_subcommand("gcomp", "counterfactual change surfaces and stress effect");
  c_gc->add_option("--input", gc.input, "panel CSV")->required();
  c_gc->add_option("--out-dir", gc.out_dir, "output directory")->required();
  c_gc->add_option("--seed", gc.seed, "RNG seed")->required();
  c_gc->add_option("--pooling", gc.pooling, "complete, partial, or tensor");
  c_gc->add_option("--form", gc.form, "baseline, has_main, or has_modified");
  c_gc->add_option("--policy", gc.policy, "y_prev policy: fixed, fixed:V, or observed");
  c_gc->add_option("--knots", gc.knots, "interior knots per margin (tensor)");
  c_gc->add_option("--draws", gc.draws, "posterior draws");
  c_gc->add_option("--thresholds", gc.thresholds, "thresholds CSV");

  ForecastArgs fc;
  auto* c_fc = app.add_subcommand("forecast", "extrapolate the tensor surface beyond the data");
  c_fc->add_option("--input", fc.input, "panel CSV")->required();
  c_fc->add_option("--out-dir", fc.out_dir, "output directory")->required();
  c_fc->add_option("--horizon", fc.horizon, "years beyond the last observed year")->required();
  c_fc->add_option("--direction", fc.direction, "exit or entry");
  c_fc->add_option("--estimators", fc.estimators, "must be tensor");
  c_fc->add_option("--knots", fc.knots, "interior knots per margin");
  c_fc->add_option("--thresholds", fc.thresholds, "thresholds CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (c_sim->parsed()) return cmd_simulate(sim);
    if (c_ing->parsed()) return cmd_ingest(ing);
    if (c_fit->parsed()) return cmd_fit(fit);
    if (c_cv->parsed()) return cmd_cv(cv);
    if (c_gc->parsed()) return cmd_gcomp(gc);
    if (c_fc->parsed()) return cmd_forecast(fc);
  } catch (const sde::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sde::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const sde::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
