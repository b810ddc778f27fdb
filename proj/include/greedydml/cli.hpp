#pragma once

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "greedydml/basis.hpp"
#include "greedydml/csv.hpp"
#include "greedydml/simulate.hpp"
#include "greedydml/table.hpp"

namespace greedydml {

struct UnknownFlag : Error { using Error::Error; };

enum class Command { Fit, FitIv, Simulate, ExpandBasis, Help };

struct RunManifest {
  Command command = Command::Help;
  std::string help_text;

  // fit / fit-iv / expand-basis
  std::string data_path;
  ColumnBindings bindings;
  DmlConfig dml;

  // simulate
  std::optional<std::string> scenario;
  SimSpec sim;
  bool list_scenarios = false;
  int jobs = 1;

  // expand-basis
  std::vector<std::string> expand_cols, passthrough_cols, dummy_cols;
  BasisSpec basis;

  std::string out_path;  // empty writes to stdout
  OutputFormat format = OutputFormat::Markdown;
};

// ---------------------------------------------------------------------------
// Built-in simulation scenarios
// ---------------------------------------------------------------------------

/// Coefficient design from a short token: "sparse", "exp", or "j<alpha>"
/// (polynomial decay, e.g. "j1.75").
inline std::optional<CoefficientDesign> design_from_token(const std::string& token,
                                                          Index p) {
  if (token == "sparse") return CoefficientDesign::sparse(p, 10, 1.0);
  if (token == "exp") return CoefficientDesign::exp_decay(p);
  if (token.size() > 1 && token.front() == 'j') {
    char* end = nullptr;
    const double alpha = std::strtod(token.c_str() + 1, &end);
    if (end == token.c_str() + token.size() && alpha > 0.0)
      return CoefficientDesign::poly_decay(p, alpha);
  }
  return std::nullopt;
}

inline const std::vector<std::string>& scenario_design_tokens() {
  static const std::vector<std::string> tokens = {
      "sparse", "exp", "j2", "j1.75", "j1.5", "j1.25", "j1"};
  return tokens;
}

/// Greedy path cap used by the built-in table scenarios:
/// floor(sqrt(n / log p)). The scenario benchmarks are calibrated against
/// this tighter cap; the library estimator default scales the same root by
/// delta_bar instead. An explicit --max-steps always wins.
inline Index sim_path_bound(Index n, Index p) {
  if (p < 2) return 1;
  const double raw =
      std::floor(std::sqrt(static_cast<double>(n) / std::log(static_cast<double>(p))));
  return std::max<Index>(1, std::min<Index>(static_cast<Index>(raw), p));
}

/// Scenario families: "table1" (cross-fitted), "tableD2" (full sample),
/// "tableD3" (instrumental variable), each over the seven coefficient
/// designs and N in {500, 1000}. Accepts "family-design" with N supplied
/// separately or the full "family-design-n<N>" form.
inline std::vector<std::string> scenario_names() {
  std::vector<std::string> names;
  for (const char* family : {"table1", "tableD2", "tableD3"})
    for (const std::string& design : scenario_design_tokens())
      for (int n : {500, 1000})
        names.push_back(std::string(family) + "-" + design + "-n" + std::to_string(n));
  return names;
}

inline SimSpec scenario_spec(const std::string& name) {
  std::string base = name;
  std::optional<Index> n_from_name;
  const auto n_pos = base.rfind("-n");
  if (n_pos != std::string::npos) {
    const std::string digits = base.substr(n_pos + 2);
    if (!digits.empty() &&
        digits.find_first_not_of("0123456789") == std::string::npos) {
      n_from_name = static_cast<Index>(std::strtol(digits.c_str(), nullptr, 10));
      base = base.substr(0, n_pos);
    }
  }
  const auto dash = base.find('-');
  if (dash == std::string::npos)
    throw UsageError("simulate: unknown scenario '" + name + "'");
  const std::string family = base.substr(0, dash);
  const std::string design_token = base.substr(dash + 1);

  SimSpec spec;
  spec.n = n_from_name.value_or(1000);
  spec.p = 500;
  spec.theta0 = 0.5;
  spec.rho = 0.5;
  spec.mu_iv = 1.0;
  spec.replications = 1000;
  if (family == "table1") {
    spec.model = SimModel::Plr;
  } else if (family == "tableD2") {
    spec.model = SimModel::PlrNoCrossFit;
  } else if (family == "tableD3") {
    spec.model = SimModel::Iv;
  } else {
    throw UsageError("simulate: unknown scenario '" + name + "'");
  }
  const auto design = design_from_token(design_token, spec.p);
  if (!design) throw UsageError("simulate: unknown scenario '" + name + "'");
  spec.beta_design = *design;
  spec.gamma_design = *design;
  spec.zeta_design = *design;
  spec.dml.selection.max_steps_override = sim_path_bound(spec.n, spec.p);
  return spec;
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

namespace detail {

inline OutputFormat parse_format(const std::string& name) {
  if (name == "csv") return OutputFormat::Csv;
  if (name == "markdown") return OutputFormat::Markdown;
  if (name == "json") return OutputFormat::Json;
  throw UsageError("unknown output format '" + name + "'");
}

/// Plain key=value configuration file; '#' starts a comment line.
inline std::map<std::string, std::string> read_config_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const std::string entry = trim(line);
    if (entry.empty() || entry.front() == '#') continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: expected key=value, got '" + entry + "'");
    out[trim(entry.substr(0, eq))] = trim(entry.substr(eq + 1));
  }
  return out;
}

template <class T>
void config_fallback(const std::map<std::string, std::string>& kv,
                     const CLI::Option* flag, const std::string& key, T& target) {
  if (flag != nullptr && flag->count() > 0) return;  // flags win
  const auto it = kv.find(key);
  if (it == kv.end()) return;
  std::istringstream ss(it->second);
  ss >> target;
  if (ss.fail() || !ss.eof())
    throw UsageError("config: bad value '" + it->second + "' for " + key);
}

inline void config_fallback(const std::map<std::string, std::string>& kv,
                            const CLI::Option* flag, const std::string& key,
                            std::optional<Index>& target) {
  Index value = 0;
  bool present = kv.count(key) > 0;
  config_fallback(kv, flag, key, value);
  if (present && (flag == nullptr || flag->count() == 0)) target = value;
}

/// Option handles for the shared estimator knobs, needed to tell explicit
/// flags apart from defaults when layering the config file underneath.
struct SelectionFlags {
  CLI::Option* k_folds = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* c_star = nullptr;
  CLI::Option* delta_bar = nullptr;
  CLI::Option* ridge_eps = nullptr;
  CLI::Option* max_steps = nullptr;
  CLI::Option* alpha = nullptr;
  CLI::Option* median_reps = nullptr;

  bool seed_given(const std::map<std::string, std::string>& kv) const {
    return (seed != nullptr && seed->count() > 0) || kv.count("seed") > 0;
  }
};

inline SelectionFlags add_selection_options(CLI::App* cmd, DmlConfig& dml,
                                            bool with_seed = true) {
  SelectionFlags flags;
  flags.k_folds = cmd->add_option("--k-folds", dml.k_folds, "Cross-fitting folds");
  if (with_seed) flags.seed = cmd->add_option("--seed", dml.seed, "RNG seed");
  flags.c_star =
      cmd->add_option("--c-star", dml.selection.c_star, "Criterion penalty constant");
  flags.delta_bar =
      cmd->add_option("--delta-bar", dml.selection.delta_bar, "Path length multiplier");
  flags.ridge_eps =
      cmd->add_option("--ridge-eps", dml.selection.ridge_eps, "Gram regularization");
  flags.max_steps = cmd->add_option("--max-steps", dml.selection.max_steps_override,
                                    "Fixed greedy path length");
  flags.alpha = cmd->add_option("--alpha", dml.alpha_level, "CI significance level");
  flags.median_reps = cmd->add_option("--median-reps", dml.repetitions,
                                      "Split repetitions aggregated by median");
  return flags;
}

inline void apply_selection_config(const std::map<std::string, std::string>& kv,
                                   const SelectionFlags& flags, DmlConfig& dml) {
  config_fallback(kv, flags.k_folds, "k-folds", dml.k_folds);
  if (flags.seed != nullptr) config_fallback(kv, flags.seed, "seed", dml.seed);
  config_fallback(kv, flags.c_star, "c-star", dml.selection.c_star);
  config_fallback(kv, flags.delta_bar, "delta-bar", dml.selection.delta_bar);
  config_fallback(kv, flags.ridge_eps, "ridge-eps", dml.selection.ridge_eps);
  config_fallback(kv, flags.max_steps, "max-steps", dml.selection.max_steps_override);
  config_fallback(kv, flags.alpha, "alpha", dml.alpha_level);
  config_fallback(kv, flags.median_reps, "median-reps", dml.repetitions);
}

}  // namespace detail

/// Parses argv (without the program name) into a validated manifest.
/// Configuration precedence: flags, then --config key=value file, then the
/// GREEDYDML_SEED environment variable (seed only), then built-in defaults.
inline RunManifest parse_args(const std::vector<std::string>& args) {
  RunManifest manifest;
  CLI::App app{"Greedy-selection double machine learning for high-dimensional "
               "linear and IV regression"};
  app.require_subcommand(0, 1);

  std::string format_name = "markdown";
  std::string config_path;
  std::map<const CLI::App*, CLI::Option*> format_flags;
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", manifest.out_path, "Output file (default stdout)");
    format_flags[cmd] =
        cmd->add_option("--format", format_name, "Output format: csv|markdown|json");
    cmd->add_option("--config", config_path, "key=value configuration file");
  };

  CLI::App* fit = app.add_subcommand("fit", "Estimate the treatment effect from a CSV");
  std::string z_binding;
  fit->add_option("--data", manifest.data_path, "Input CSV path");
  fit->add_option("--y", manifest.bindings.outcome, "Outcome column");
  fit->add_option("--d", manifest.bindings.treatment, "Treatment column");
  fit->add_option("--controls", manifest.bindings.control_patterns,
                  "Control columns (names or globs)");
  const detail::SelectionFlags fit_flags =
      detail::add_selection_options(fit, manifest.dml);
  add_common(fit);

  CLI::App* fit_iv = app.add_subcommand("fit-iv", "Instrumental-variable estimate");
  fit_iv->add_option("--data", manifest.data_path, "Input CSV path");
  fit_iv->add_option("--y", manifest.bindings.outcome, "Outcome column");
  fit_iv->add_option("--d", manifest.bindings.treatment, "Treatment column");
  fit_iv->add_option("--z", z_binding, "Instrument column");
  fit_iv->add_option("--controls", manifest.bindings.control_patterns,
                     "Control columns (names or globs)");
  const detail::SelectionFlags fit_iv_flags =
      detail::add_selection_options(fit_iv, manifest.dml);
  add_common(fit_iv);

  CLI::App* simulate = app.add_subcommand("simulate", "Run a Monte Carlo scenario");
  std::string scenario_name, model_name, design_token;
  long long sim_n = 0, sim_p = 0;
  int sim_reps = 0;
  double sim_theta0 = 0.0, sim_rho = 0.0, sim_mu = 0.0;
  std::uint64_t sim_seed = 0;
  simulate->add_option("--scenario", scenario_name,
                       "Built-in scenario (see --list-scenarios)");
  simulate->add_flag("--list-scenarios", manifest.list_scenarios,
                     "Print scenario names and exit");
  auto* opt_model = simulate->add_option("--model", model_name, "plr|iv|plr-nocf");
  auto* opt_design = simulate->add_option("--design", design_token,
                                          "sparse|exp|j<alpha>");
  auto* opt_n = simulate->add_option("--n", sim_n, "Observations per replication");
  auto* opt_p = simulate->add_option("--p", sim_p, "Regressor count");
  auto* opt_theta = simulate->add_option("--theta0", sim_theta0, "True effect");
  auto* opt_reps = simulate->add_option("--reps", sim_reps, "Replications");
  auto* opt_rho = simulate->add_option("--rho", sim_rho, "AR(1) correlation");
  auto* opt_mu = simulate->add_option("--mu-iv", sim_mu, "Instrument strength");
  auto* opt_seed = simulate->add_option("--seed", sim_seed, "Base seed");
  auto* opt_jobs = simulate->add_option("--jobs", manifest.jobs, "Worker threads");
  const detail::SelectionFlags sim_flags =
      detail::add_selection_options(simulate, manifest.dml, /*with_seed=*/false);
  add_common(simulate);

  CLI::App* expand = app.add_subcommand("expand-basis",
                                        "Write a basis-expanded design matrix");
  std::string kind_name = "hermite";
  bool no_standardize = false;
  expand->add_option("--data", manifest.data_path, "Input CSV path");
  expand->add_option("--expand", manifest.expand_cols, "Columns to expand");
  expand->add_option("--passthrough", manifest.passthrough_cols,
                     "Columns copied through unchanged");
  expand->add_option("--dummies", manifest.dummy_cols, "Indicator columns");
  expand->add_option("--kind", kind_name, "power|hermite");
  expand->add_option("--degree", manifest.basis.degree, "Family degree / top index");
  expand->add_flag("--interactions", manifest.basis.include_interactions,
                   "Add pairwise products of the two families");
  expand->add_flag("--no-standardize", no_standardize,
                   "Skip centering/scaling before Hermite evaluation");
  add_common(expand);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    manifest.command = Command::Help;
    manifest.help_text = app.help();
    return manifest;
  } catch (const CLI::ExtrasError& e) {
    throw UnknownFlag(e.what());
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  const std::map<std::string, std::string> kv =
      config_path.empty() ? std::map<std::string, std::string>{}
                          : detail::read_config_kv(config_path);
  const CLI::App* parsed_cmd = nullptr;
  for (const CLI::App* cmd : {fit, fit_iv, simulate, expand})
    if (cmd->parsed()) parsed_cmd = cmd;
  detail::config_fallback(kv, parsed_cmd ? format_flags.at(parsed_cmd) : nullptr,
                          "format", format_name);
  manifest.format = detail::parse_format(format_name);

  const auto require_binding = [](const CLI::App* cmd, const std::string& flag,
                                  const std::string& value) {
    if (value.empty())
      throw MissingBinding(cmd->get_name() + ": " + flag + " is required");
  };

  if (fit->parsed() || fit_iv->parsed()) {
    const CLI::App* cmd = fit->parsed() ? fit : fit_iv;
    const detail::SelectionFlags& flags = fit->parsed() ? fit_flags : fit_iv_flags;
    manifest.command = fit->parsed() ? Command::Fit : Command::FitIv;
    require_binding(cmd, "--data", manifest.data_path);
    require_binding(cmd, "--y", manifest.bindings.outcome);
    require_binding(cmd, "--d", manifest.bindings.treatment);
    if (fit_iv->parsed()) {
      require_binding(cmd, "--z", z_binding);
      manifest.bindings.instrument = z_binding;
    }
    if (manifest.bindings.control_patterns.empty())
      throw MissingBinding(cmd->get_name() + ": --controls is required");
    detail::apply_selection_config(kv, flags, manifest.dml);
    if (!flags.seed_given(kv)) {
      if (const char* env = std::getenv("GREEDYDML_SEED"))
        manifest.dml.seed = std::strtoull(env, nullptr, 10);
    }
    return manifest;
  }

  if (simulate->parsed()) {
    manifest.command = Command::Simulate;
    if (manifest.list_scenarios) return manifest;

    SimSpec spec;
    if (!scenario_name.empty()) {
      manifest.scenario = scenario_name;
      spec = scenario_spec(scenario_name);
    } else {
      spec = scenario_spec("table1-sparse-n1000");
    }
    if (opt_model->count()) {
      if (model_name == "plr") spec.model = SimModel::Plr;
      else if (model_name == "iv") spec.model = SimModel::Iv;
      else if (model_name == "plr-nocf") spec.model = SimModel::PlrNoCrossFit;
      else throw UsageError("simulate: unknown model '" + model_name + "'");
    }
    if (opt_n->count()) spec.n = static_cast<Index>(sim_n);
    if (opt_p->count()) spec.p = static_cast<Index>(sim_p);
    if (opt_design->count()) {
      const auto design = design_from_token(design_token, spec.p);
      if (!design) throw UsageError("simulate: unknown design '" + design_token + "'");
      spec.beta_design = spec.gamma_design = spec.zeta_design = *design;
    } else if (opt_p->count()) {
      spec.beta_design.p = spec.gamma_design.p = spec.zeta_design.p = spec.p;
    }
    if (opt_theta->count()) spec.theta0 = sim_theta0;
    if (opt_reps->count()) spec.replications = sim_reps;
    if (opt_rho->count()) spec.rho = sim_rho;
    if (opt_mu->count()) spec.mu_iv = sim_mu;
    detail::config_fallback(kv, opt_jobs, "jobs", manifest.jobs);
    detail::apply_selection_config(kv, sim_flags, manifest.dml);
    if (opt_seed->count()) {
      spec.base_seed = sim_seed;
    } else if (kv.count("seed") > 0) {
      spec.base_seed = std::strtoull(kv.at("seed").c_str(), nullptr, 10);
    } else if (const char* env = std::getenv("GREEDYDML_SEED")) {
      spec.base_seed = std::strtoull(env, nullptr, 10);
    }
    spec.dml = manifest.dml;
    if (!spec.dml.selection.max_steps_override)
      spec.dml.selection.max_steps_override = sim_path_bound(spec.n, spec.p);
    manifest.sim = spec;
    return manifest;
  }

  if (expand->parsed()) {
    manifest.command = Command::ExpandBasis;
    require_binding(expand, "--data", manifest.data_path);
    if (manifest.expand_cols.empty())
      throw MissingBinding("expand-basis: --expand is required");
    if (kind_name == "power") manifest.basis.kind = BasisKind::PolynomialPower;
    else if (kind_name == "hermite") manifest.basis.kind = BasisKind::HermiteFunction;
    else throw UsageError("expand-basis: unknown kind '" + kind_name + "'");
    manifest.basis.standardize = !no_standardize;
    return manifest;
  }

  manifest.command = Command::Help;
  manifest.help_text = app.help();
  return manifest;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<NamedColumn> pick_columns(const CsvColumns& table,
                                             const std::vector<std::string>& names) {
  std::vector<NamedColumn> out;
  for (const std::string& name : names) {
    bool found = false;
    for (size_t j = 0; j < table.header.size(); ++j) {
      if (table.header[j] == name) {
        out.push_back({name, table.columns[j]});
        found = true;
        break;
      }
    }
    if (!found) throw MissingColumn("csv: column '" + name + "' not in header");
  }
  return out;
}

}  // namespace detail

/// Runs a parsed manifest; data goes to `out` (or the manifest's output
/// file), diagnostics to `err`. Returns the process exit code.
inline int run_manifest(const RunManifest& manifest, std::ostream& out,
                        std::ostream& err) {
  std::ofstream file;
  std::ostream* sink = &out;
  if (!manifest.out_path.empty()) {
    file.open(manifest.out_path);
    if (!file) {
      err << "error: cannot write " << manifest.out_path << "\n";
      return 1;
    }
    sink = &file;
  }

  switch (manifest.command) {
    case Command::Help:
      out << manifest.help_text;
      return 0;
    case Command::Fit:
    case Command::FitIv: {
      const Dataset data = read_csv(manifest.data_path, manifest.bindings);
      const ScoreKind kind =
          manifest.command == Command::FitIv ? ScoreKind::Iv : ScoreKind::Plr;
      const EstimateResult res = estimate_repeated(data, manifest.dml, kind);
      *sink << emit_table(res, manifest.format);
      return 0;
    }
    case Command::Simulate: {
      if (manifest.list_scenarios) {
        for (const std::string& name : scenario_names()) *sink << name << "\n";
        return 0;
      }
      const SimStats stats = run_monte_carlo(manifest.sim, manifest.jobs);
      *sink << emit_table(stats, manifest.format);
      return 0;
    }
    case Command::ExpandBasis: {
      const CsvColumns table = read_csv_columns(manifest.data_path);
      const BasisExpansion expansion =
          expand(detail::pick_columns(table, manifest.expand_cols), manifest.basis,
                 detail::pick_columns(table, manifest.passthrough_cols),
                 detail::pick_columns(table, manifest.dummy_cols));
      write_csv(*sink, expansion.names, expansion.columns);
      return 0;
    }
  }
  return 1;
}

}  // namespace greedydml
