#include "lerca/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "lerca/diagnostics.hpp"
#include "lerca/errors.hpp"
#include "lerca/simulator.hpp"

namespace lerca {

namespace {

double parse_number(const std::string& key, const std::string& v) {
  try {
    return parse_real(v, key);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  const double d = parse_number(key, v);
  if (d < 0 || d != std::floor(d) || d > 1e15) throw ConfigError(key + " must be a non-negative integer");
  return static_cast<std::size_t>(d);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError(key + " must be true or false");
}

std::vector<std::size_t> parse_k_list(const std::string& v) {
  std::vector<std::size_t> ks;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) ks.push_back(parse_count("K", item));
  if (ks.empty()) throw ConfigError("K list is empty");
  return ks;
}

// Keys in the order they are written back.
const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "K", "chains", "iterations", "burn_in", "thin", "seed", "mu0", "sigma0", "a0", "b0",
      "omega", "alpha_x_marginal", "p_separate", "p_jump_over", "p_jump_within", "sigma_tune",
      "grid", "level", "psr_threshold", "data", "out", "threads", "prior_only", "s_min", "s_max"};
  return keys;
}

}  // namespace

void RunConfig::validate() const {
  schedule.validate();
  hyper.validate();
  if (chains < 1) throw ConfigError("chains must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (grid < 2) throw ConfigError("grid must have at least 2 points");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  if (!(psr_threshold > 0.0)) throw ConfigError("psr_threshold must be positive");
  if (has_bounds && !(s_min < s_max)) throw ConfigError("s_min must be below s_max");
}

RunConfig run_config_from(const KeyValues& kv) {
  RunConfig c;
  bool lo_set = false, hi_set = false;
  for (const auto& [key, v] : kv) {
    if (key == "K") c.Ks = parse_k_list(v);
    else if (key == "chains") c.chains = parse_count(key, v);
    else if (key == "iterations") c.schedule.iterations = parse_count(key, v);
    else if (key == "burn_in") c.schedule.burn_in = parse_count(key, v);
    else if (key == "thin") c.schedule.thin = parse_count(key, v);
    else if (key == "seed") c.seed = parse_count(key, v);
    else if (key == "mu0") c.hyper.mu0 = parse_number(key, v);
    else if (key == "sigma0") c.hyper.sigma0 = parse_number(key, v);
    else if (key == "a0") c.hyper.a0 = parse_number(key, v);
    else if (key == "b0") c.hyper.b0 = parse_number(key, v);
    else if (key == "omega") c.hyper.omega = parse_number(key, v);
    else if (key == "alpha_x_marginal") c.hyper.alpha_x_marginal = parse_number(key, v);
    else if (key == "p_separate") c.hyper.move_probs.separate = parse_number(key, v);
    else if (key == "p_jump_over") c.hyper.move_probs.jump_over = parse_number(key, v);
    else if (key == "p_jump_within") c.hyper.move_probs.jump_within = parse_number(key, v);
    else if (key == "sigma_tune") c.hyper.sigma_tune = parse_number(key, v);
    else if (key == "grid") c.grid = parse_count(key, v);
    else if (key == "level") c.level = parse_number(key, v);
    else if (key == "psr_threshold") c.psr_threshold = parse_number(key, v);
    else if (key == "data") c.data = v;
    else if (key == "out") c.out = v;
    else if (key == "threads") c.threads = parse_count(key, v);
    else if (key == "prior_only") c.prior_only = parse_bool(key, v);
    else if (key == "s_min") { if (!v.empty()) { c.s_min = parse_number(key, v); lo_set = true; } }
    else if (key == "s_max") { if (!v.empty()) { c.s_max = parse_number(key, v); hi_set = true; } }
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (lo_set != hi_set) throw ConfigError("s_min and s_max must be given together");
  c.has_bounds = lo_set;
  c.validate();
  return c;
}

KeyValues to_key_values(const RunConfig& c) {
  KeyValues kv;
  std::string ks;
  for (std::size_t i = 0; i < c.Ks.size(); ++i) ks += (i ? "," : "") + std::to_string(c.Ks[i]);
  kv["K"] = ks;
  kv["chains"] = std::to_string(c.chains);
  kv["iterations"] = std::to_string(c.schedule.iterations);
  kv["burn_in"] = std::to_string(c.schedule.burn_in);
  kv["thin"] = std::to_string(c.schedule.thin);
  kv["seed"] = std::to_string(c.seed);
  kv["mu0"] = format_real(c.hyper.mu0);
  kv["sigma0"] = format_real(c.hyper.sigma0);
  kv["a0"] = format_real(c.hyper.a0);
  kv["b0"] = format_real(c.hyper.b0);
  kv["omega"] = format_real(c.hyper.omega);
  kv["alpha_x_marginal"] = format_real(c.hyper.alpha_x_marginal);
  kv["p_separate"] = format_real(c.hyper.move_probs.separate);
  kv["p_jump_over"] = format_real(c.hyper.move_probs.jump_over);
  kv["p_jump_within"] = format_real(c.hyper.move_probs.jump_within);
  kv["sigma_tune"] = format_real(c.hyper.sigma_tune);
  kv["grid"] = std::to_string(c.grid);
  kv["level"] = format_real(c.level);
  kv["psr_threshold"] = format_real(c.psr_threshold);
  kv["data"] = c.data;
  kv["out"] = c.out;
  kv["threads"] = std::to_string(c.threads);
  kv["prior_only"] = c.prior_only ? "true" : "false";
  kv["s_min"] = c.has_bounds ? format_real(c.s_min) : "";
  kv["s_max"] = c.has_bounds ? format_real(c.s_max) : "";
  return kv;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 2;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out.push_back('\\');
    out.push_back(ch == '\n' ? ' ' : ch);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw DataError("write to '" + path.string() + "' failed");
}

std::vector<ChainOutput> as_chain_outputs(const DrawsFile& file) {
  std::vector<ChainOutput> out;
  for (std::size_t c = 0; c < file.chains.size(); ++c) {
    ChainOutput co;
    co.draws = file.chains[c];
    co.num_cuts = co.draws.empty() ? 0 : co.draws.front().config.num_cuts();
    out.push_back(std::move(co));
  }
  return out;
}

std::vector<double> draws_grid(const DrawsFile& file, std::size_t n) {
  const auto& cfg = file.chains.front().front().config;
  return default_grid(cfg.s_min(), cfg.s_max(), n);
}

int cmd_simulate(const std::string& scenario, std::size_t n, std::uint64_t seed,
                 const std::string& path, std::ostream& out) {
  if (n == 0) throw ConfigError("n must be at least 1");
  auto spec = preset_scenario(scenario);
  spec.n = n;
  Rng rng(seed);
  const Dataset d = simulate(spec, rng);
  write_dataset_csv(path, d);
  out << "wrote " << d.n() << " rows to " << path << '\n';
  return 0;
}

int cmd_fit(const RunConfig& cfg, std::ostream& out) {
  if (cfg.data.empty()) throw ConfigError("fit needs a data path");
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset raw = read_dataset_csv(cfg.data);
  const Dataset data = center_covariates(raw);
  SamplerOptions opts;
  opts.prior_only = cfg.prior_only;
  if (cfg.has_bounds) opts.bounds = std::make_pair(cfg.s_min, cfg.s_max);
  const std::filesystem::path dir(cfg.out);
  std::filesystem::create_directories(dir);

  std::ostringstream manifest;
  manifest << "[config]\n";
  for (const auto& [k, v] : to_key_values(cfg)) manifest << k << '=' << v << '\n';
  manifest << "\n[centering]\n";
  for (std::size_t j = 0; j < data.p(); ++j) {
    manifest << data.names[j] << '=' << format_real(data.column_means[static_cast<Eigen::Index>(j)]) << '\n';
  }

  double best_waic = std::numeric_limits<double>::infinity();
  std::size_t best_k = 0;
  bool any_partial = false;
  for (std::size_t K : cfg.Ks) {
    const std::uint64_t base_seed = cfg.seed + 1000 * K;
    const auto result = run_chains(data, K, cfg.hyper, cfg.schedule, cfg.chains, base_seed, opts, cfg.threads);
    if (result.chains.empty()) {
      throw NumericalError("every chain failed for K=" + std::to_string(K) + ": " +
                           result.failures.front().second);
    }
    const std::string draws_name = "draws_K" + std::to_string(K) + ".csv";
    write_draws_csv((dir / draws_name).string(), result.chains, data.names, cfg.schedule);
    double w = std::numeric_limits<double>::quiet_NaN();
    if (!cfg.prior_only && cfg.schedule.retained() * result.chains.size() >= 2) w = waic(result.chains);
    manifest << "\n[K=" << K << "]\n";
    manifest << "draws=" << draws_name << '\n';
    manifest << "waic=" << format_real(w) << '\n';
    manifest << "chains_completed=" << result.chains.size() << '\n';
    for (const auto& c : result.chains) {
      const std::string pre = "chain_seed_" + std::to_string(c.seed);
      manifest << pre << ".accept_separate=" << format_real(c.stats.separate.rate()) << '\n';
      manifest << pre << ".accept_jump_over=" << format_real(c.stats.jump_over.rate()) << '\n';
      manifest << pre << ".accept_jump_within=" << format_real(c.stats.jump_within.rate()) << '\n';
    }
    for (const auto& [idx, msg] : result.failures) {
      manifest << "failed_chain_seed_" << base_seed + idx << "=\"" << escape(msg) << "\"\n";
      any_partial = true;
    }
    out << "K=" << K << " waic=" << format_real(w)
        << (result.failures.empty() ? "" : " (partial: " + std::to_string(result.failures.size()) + " chain(s) failed)")
        << '\n';
    if (w < best_waic) {
      best_waic = w;
      best_k = K;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest << "\n[result]\n";
  if (std::isfinite(best_waic)) manifest << "best_K=" << best_k << '\n';
  manifest << "partial=" << (any_partial ? "true" : "false") << '\n';
  manifest << "wall_seconds=" << format_real(std::round(secs * 1000.0) / 1000.0) << '\n';
  write_file(dir / "manifest.ini", manifest.str());
  if (std::isfinite(best_waic)) out << "best_K=" << best_k << '\n';
  return 0;
}

int cmd_summarize(const std::string& draws_path, std::size_t grid_n, double level,
                  const std::string& out_dir, std::ostream& out) {
  const DrawsFile file = read_draws_csv(draws_path);
  const auto grid = draws_grid(file, grid_n);
  const auto s = summarize_draws(file.chains, grid, level);
  std::ostringstream er, delta, incl, hist;
  er << "x,mean,lower,upper\n";
  delta << "x,mean,lower,upper\n";
  incl << "x,covariate,inclusion_x,inclusion_y\n";
  for (std::size_t g = 0; g < grid.size(); ++g) {
    er << format_real(grid[g]) << ',' << format_real(s.er_mean[g]) << ',' << format_real(s.er_lower[g])
       << ',' << format_real(s.er_upper[g]) << '\n';
    delta << format_real(grid[g]) << ',' << format_real(s.delta_mean[g]) << ','
          << format_real(s.delta_lower[g]) << ',' << format_real(s.delta_upper[g]) << '\n';
    for (std::size_t j = 0; j < file.covariate_names.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const auto gg = static_cast<Eigen::Index>(g);
      incl << format_real(grid[g]) << ',' << file.covariate_names[j] << ','
           << format_real(s.inclusion_x(jj, gg)) << ',' << format_real(s.inclusion_y(jj, gg)) << '\n';
    }
  }
  const double lo = grid.front(), hi = grid.back();
  const std::size_t bins = 50;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : s.s_draws) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    counts[std::min(b, bins - 1)]++;
  }
  hist << "bin_lower,bin_upper,count\n";
  for (std::size_t b = 0; b < bins; ++b) {
    const double w = (hi - lo) / static_cast<double>(bins);
    hist << format_real(lo + w * static_cast<double>(b)) << ',' << format_real(lo + w * static_cast<double>(b + 1))
         << ',' << counts[b] << '\n';
  }
  if (out_dir.empty()) {
    out << er.str();
    return 0;
  }
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_file(dir / "er.csv", er.str());
  write_file(dir / "delta.csv", delta.str());
  write_file(dir / "inclusion.csv", incl.str());
  write_file(dir / "s_hist.csv", hist.str());
  out << "summarized " << file.total_draws() << " draws from " << file.chains.size()
      << " chain(s) into " << out_dir << '\n';
  return 0;
}

int cmd_diagnose(const std::string& draws_path, std::size_t grid_n, double threshold, std::ostream& out) {
  const DrawsFile file = read_draws_csv(draws_path);
  if (file.chains.size() < 2) throw InsufficientDataError("diagnose needs at least 2 chains");
  const auto grid = draws_grid(file, grid_n);
  const auto values = psr(as_chain_outputs(file), grid);
  out << "x,psr\n";
  std::size_t worst = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out << format_real(grid[g]) << ',' << format_real(values[g]) << '\n';
    if (std::abs(values[g] - 1.0) > std::abs(values[worst] - 1.0)) worst = g;
  }
  out << "verdict=" << (psr_converged(values, threshold) ? "pass" : "fail")
      << " max_psr=" << format_real(values[worst]) << " at_x=" << format_real(grid[worst]) << '\n';
  return 0;
}

int cmd_explore(const std::string& data_path, double low, double high, std::ostream& out) {
  if (!(low < high)) throw ConfigError("low cut must be below high cut");
  const Dataset d = read_dataset_csv(data_path);
  const auto rows = exploratory_screen(d, low, high);
  out << "covariate,stratum,n,exposure_coef,exposure_p,outcome_coef,outcome_p\n";
  for (const auto& r : rows) {
    out << r.covariate << ',' << r.stratum << ',' << r.n << ',';
    if (!r.defined) {
      out << "undefined,undefined,undefined,undefined\n";
      continue;
    }
    out << format_real(r.exposure_coef) << ',' << format_real(r.exposure_p) << ','
        << format_real(r.outcome_coef) << ',' << format_real(r.outcome_p) << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Local exposure-response estimation with experiment-specific confounder selection"};
  app.require_subcommand(1);

  std::string scenario = "local_table3", sim_out;
  std::size_t sim_n = 800;
  std::uint64_t sim_seed = 1;
  auto* sim = app.add_subcommand("simulate", "Generate a dataset from a preset scenario");
  sim->add_option("--scenario", scenario, "local_table3, local_reversed or global_tableC3");
  sim->add_option("--n", sim_n, "Number of units");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--out", sim_out, "Output CSV path")->required();

  std::string config_path;
  std::map<std::string, std::string> flag_values;
  bool prior_only_flag = false;
  auto* fit = app.add_subcommand("fit", "Run the sampler for one or more K");
  fit->add_option("--config", config_path, "key=value run configuration (or a previous manifest)");
  std::map<std::string, CLI::Option*> flag_opts;
  for (const auto& key : config_keys()) {
    if (key == "prior_only") continue;
    std::string names = "--" + key;
    if (key.find('_') != std::string::npos) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      names += ",--" + dashed;
    }
    flag_opts[key] = fit->add_option(names, flag_values[key]);
  }
  auto* prior_opt = fit->add_flag("--prior-only,--prior_only", prior_only_flag, "Ignore the data terms");

  std::string draws_path, summary_out;
  std::size_t grid_n = 100;
  double level = 0.95;
  auto* summ = app.add_subcommand("summarize", "Posterior summary tables from a draws file");
  summ->add_option("--draws", draws_path)->required();
  summ->add_option("--grid", grid_n, "Number of grid points");
  summ->add_option("--level", level, "Credible level");
  summ->add_option("--out", summary_out, "Directory for the tables (stdout ER table when omitted)");

  double threshold = 0.1;
  auto* diag = app.add_subcommand("diagnose", "PSR convergence report");
  diag->add_option("--draws", draws_path)->required();
  diag->add_option("--grid", grid_n, "Number of grid points");
  diag->add_option("--threshold", threshold, "Convergence threshold on |PSR - 1|");

  std::string data_path;
  double low = 8.0, high = 11.5;
  auto* expl = app.add_subcommand("explore", "Stratified covariate screen");
  expl->add_option("--data", data_path)->required();
  expl->add_option("--low", low, "Upper end of the low-exposure stratum");
  expl->add_option("--high", high, "Lower end of the high-exposure stratum");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: kind=usage message=\"" << escape(e.what()) << "\"\n";
    return 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(scenario, sim_n, sim_seed, sim_out, out);
    if (fit->parsed()) {
      KeyValues kv;
      if (!config_path.empty()) kv = read_key_values(config_path);
      for (const auto& [key, opt] : flag_opts) {
        if (opt->count() > 0) kv[key] = flag_values[key];
      }
      if (prior_opt->count() > 0) kv["prior_only"] = prior_only_flag ? "true" : "false";
      return cmd_fit(run_config_from(kv), out);
    }
    if (summ->parsed()) return cmd_summarize(draws_path, grid_n, level, summary_out, out);
    if (diag->parsed()) return cmd_diagnose(draws_path, grid_n, threshold, out);
    if (expl->parsed()) return cmd_explore(data_path, low, high, out);
  } catch (const Error& e) {
    err << "error: kind=" << e.kind() << " message=\"" << escape(e.what()) << "\"\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: kind=internal message=\"" << escape(e.what()) << "\"\n";
    return 2;
  }
  return 1;
}

}  // namespace lerca
