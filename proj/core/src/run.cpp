#include "chc/run.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <cmath>
#include <random>

#include <json.hpp>

#include "chc/carleman.hpp"
#include "chc/hum.hpp"
#include "chc/identity.hpp"
#include "chc/semilinear.hpp"
#include "chc/spde.hpp"
#include "chc/weights.hpp"

namespace chc {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "grid.n",            "grid.bc",
      "tree.depth",        "tree.substeps",
      "weights.lambda",    "weights.mu",
      "weights.m",         "weights.T",
      "weights.sigma",     "region.g0_lo",
      "region.g0_hi",      "region.gprime_lo",
      "region.gprime_hi",  "forward.y0",
      "forward.y0_scale",  "hum.eps",
      "hum.eps_levels",    "hum.track",
      "hum.tol",           "hum.max_iter",
      "carleman.n",        "carleman.which",
      "carleman.rt_scale", "carleman.src_scale",
      "carleman.localized", "semilinear.f",
      "semilinear.kappa",  "semilinear.g_kappa1",
      "semilinear.max_iter", "semilinear.tol",
      "semilinear.mix_a",  "semilinear.mix_b",
      "semilinear.mix_c",  "semilinear.clamp_M",
      "identity.nt",       "identity.nx",
      "identity.mode",     "run.seed",
      "run.threads",       "dump.trajectories",
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key or value");
    cfg.kv_[key] = val;
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void RunConfig::apply_override(const std::string& kvs) {
  auto eq = kvs.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("override: expected key=value");
  kv_[trim(kvs.substr(0, eq))] = trim(kvs.substr(eq + 1));
}

void RunConfig::validate_keys() const {
  for (const auto& [k, v] : kv_) {
    (void)v;
    if (!known_keys().count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
  }
}

std::string RunConfig::str(const std::string& key, const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

double RunConfig::num(const std::string& key, double dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  size_t pos = 0;
  double v = std::stod(it->second, &pos);
  if (pos != it->second.size())
    throw std::invalid_argument("config: key '" + key + "' is not a number");
  return v;
}

long long RunConfig::integer(const std::string& key, long long dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  size_t pos = 0;
  long long v = std::stoll(it->second, &pos);
  if (pos != it->second.size())
    throw std::invalid_argument("config: key '" + key + "' is not an integer");
  return v;
}

bool RunConfig::flag(const std::string& key, bool dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' is not a flag");
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
  return os.str();
}

namespace {

using nlohmann::json;

struct Setup {
  Grid grid;
  Tree tree;
  WeightParams params;
  SpatialProfile profile;
  Interval g0;
  Interval gprime;
};

Setup build_setup(const RunConfig& cfg, std::uint64_t /*seed*/) {
  Setup s;
  s.g0 = {cfg.num("region.g0_lo", 0.3), cfg.num("region.g0_hi", 0.7)};
  s.gprime = {cfg.num("region.gprime_lo", 0.4), cfg.num("region.gprime_hi", 0.6)};
  s.profile = make_beta(s.g0, s.gprime);
  s.params.lambda = cfg.num("weights.lambda", 2.0);
  s.params.mu = cfg.num("weights.mu", 2.0);
  s.params.m = cfg.num("weights.m", 1.0);
  s.params.T = cfg.num("weights.T", 0.5);
  std::string sigma = cfg.str("weights.sigma", "4");
  if (sigma == "paper") {
    s.params.sigma_paper = true;
  } else {
    s.params.sigma_paper = false;
    s.params.sigma_value = std::stod(sigma);
  }
  std::string bc = cfg.str("grid.bc", "clamped");
  if (bc != "clamped" && bc != "simply_supported")
    throw std::invalid_argument("config: grid.bc must be clamped or simply_supported");
  s.grid = Grid(static_cast<int>(cfg.integer("grid.n", 32)),
                bc == "clamped" ? Bc::clamped : Bc::simply_supported);
  s.tree = Tree(static_cast<int>(cfg.integer("tree.depth", 2)), s.params.T,
                static_cast<int>(cfg.integer("tree.substeps", 2)));
  return s;
}

Field initial_state(const RunConfig& cfg, const Grid& g, std::uint64_t seed) {
  std::string kind = cfg.str("forward.y0", "gauss_bump");
  double scale = cfg.num("forward.y0_scale", 1.0);
  Field y0(g.interior(), 0.0);
  if (kind == "zero") return y0;
  if (kind == "gauss_bump") {
    for (int i = 0; i < g.interior(); ++i) {
      double x = g.x(i);
      y0[i] = scale * std::exp(-50.0 * (x - 0.5) * (x - 0.5));
    }
    return y0;
  }
  if (kind == "randn") {
    std::mt19937_64 rng(seed ^ 0xABCDEF12ULL);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v : y0) v = n(rng);
    return implicit_step_solve(y0, 1e-4, g);
  }
  throw std::invalid_argument("config: forward.y0 must be zero|gauss_bump|randn");
}

CostWeights track_of(const RunConfig& cfg) {
  std::string t = cfg.str("hum.track", "012");
  if (t == "0") return CostWeights::lemma22();
  if (t == "012") return CostWeights::theorem31();
  throw std::invalid_argument("config: hum.track must be 0 or 012");
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

void write_run_dir(const std::filesystem::path& dir, const RunConfig& cfg, const json& summary,
                   const std::map<std::string, std::string>& csvs, const std::string& plot) {
  std::filesystem::create_directories(dir);
  write_file(dir / "resolved.cfg", cfg.resolved_text());
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  for (const auto& [name, text] : csvs) write_file(dir / name, text);
  write_file(dir / "plot.gp", plot);
}

int run_weights(const RunConfig& cfg, const RunOptions& opt) {
  Setup s = build_setup(cfg, opt.seed);
  WeightEvaluator ev(s.params, s.profile);
  auto rep = verify_weight_invariants(ev);

  std::ostringstream csv;
  csv.precision(17);
  csv << "t,x,gamma,gamma_eps,ell,log_xi\n";
  WeightParams pe = s.params;
  pe.eps_shift = s.params.T / 8.0;
  WeightEvaluator eve(pe, s.profile);
  for (int k = 0; k <= 96; ++k) {
    double t = s.params.T * k / 100.0;
    for (int i = 1; i <= 31; ++i) {
      double x = i / 32.0;
      auto lw = ev.log_weights(t, x, false);
      csv << t << "," << x << "," << ev.gamma(t, false) << "," << eve.gamma(t, true) << ","
          << lw.ell << "," << lw.log_xi << "\n";
    }
  }

  json sum;
  sum["subcommand"] = "weights";
  sum["invariants"] = {{"c2_ok", rep.c2_ok},
                       {"worst_c2_rel", rep.worst_c2_rel},
                       {"bridge_monotone", rep.bridge_monotone},
                       {"alpha_negative", rep.alpha_negative},
                       {"ell_negative", rep.ell_negative},
                       {"gamma_eps_bounded", rep.gamma_eps_bounded},
                       {"all_ok", rep.all_ok()}};
  sum["beta"] = {{"x0", s.profile.x0}, {"s", s.profile.s}, {"alpha0", s.profile.alpha0}};
  std::string plot =
      "set datafile separator ','\nset key autotitle columnhead\n"
      "plot 'weights.csv' using 1:3 with lines title 'gamma'\n";
  write_run_dir(opt.out_dir, cfg, sum, {{"weights.csv", csv.str()}}, plot);
  return rep.all_ok() ? 0 : 3;
}

int run_identity(const RunConfig& cfg, const RunOptions& opt) {
  int nt = static_cast<int>(cfg.integer("identity.nt", 64));
  int nx = static_cast<int>(cfg.integer("identity.nx", 64));
  std::string mode = cfg.str("identity.mode", "both");

  json cases = json::array();
  std::ostringstream csv;
  csv.precision(17);
  csv << "case,mode,n,residual,order\n";
  bool ok = true;
  for (const auto& tc : identity_test_library()) {
    json c;
    c["name"] = tc.name;
    if (mode == "analytic" || mode == "both") {
      auto r = deterministic_identity_residual(tc, nt, nx, IdentityMode::analytic);
      c["analytic_residual"] = r.residual_norm;
      csv << tc.name << ",analytic," << nx << "," << r.residual_norm << ",\n";
      ok = ok && r.residual_norm <= 1e-9;
    }
    if (mode == "fd" || mode == "both") {
      auto r = deterministic_identity_residual(tc, nt, nx, IdentityMode::fd_outer);
      c["fd_residual"] = r.residual_norm;
      c["fd_order"] = r.order_estimate;
      csv << tc.name << ",fd," << nx << "," << r.residual_norm << "," << r.order_estimate << "\n";
      ok = ok && r.order_estimate >= 1.9;
    }
    cases.push_back(c);
  }
  json sum;
  sum["subcommand"] = "identity-check";
  sum["cases"] = cases;
  sum["pass"] = ok;
  std::string plot =
      "set datafile separator ','\nset logscale y\n"
      "plot 'identity.csv' using 3:4 with points title 'residual'\n";
  write_run_dir(opt.out_dir, cfg, sum, {{"identity.csv", csv.str()}}, plot);
  return ok ? 0 : 3;
}

int run_carleman(const RunConfig& cfg, const RunOptions& opt) {
  Setup s = build_setup(cfg, opt.seed);
  WeightEvaluator ev(s.params, s.profile);
  EnsembleSpec spec;
  spec.n = static_cast<int>(cfg.integer("carleman.n", 50));
  spec.seed = opt.seed;
  spec.which = cfg.str("carleman.which", "carest2") == "carest1" ? CarlemanKind::carest1
                                                                 : CarlemanKind::carest2;
  spec.bc = s.grid.bc;
  spec.grid_n = s.grid.n;
  spec.depth = s.tree.depth;
  spec.substeps = s.tree.substeps;
  spec.g0 = s.g0;
  spec.rt_scale = cfg.num("carleman.rt_scale", 1.0);
  spec.src_scale = cfg.num("carleman.src_scale", 1.0);
  spec.localized = cfg.flag("carleman.localized", false);
  auto res = ensemble_ratio(spec, ev);

  json sum;
  sum["subcommand"] = "carleman";
  sum["which"] = spec.which == CarlemanKind::carest1 ? "carest1" : "carest2";
  sum["n"] = spec.n;
  sum["max_log_ratio"] = res.max_log_ratio;
  sum["median_log_ratio"] = res.median_log_ratio;
  sum["q90_log_ratio"] = res.q90_log_ratio;
  sum["note"] = "ratio baselines are artifact-defined; the estimates carry no reference constants";
  std::string plot =
      "set datafile separator ','\nset key autotitle columnhead\n"
      "plot 'carleman.csv' using 0:7 with points title 'log ratio'\n";
  write_run_dir(opt.out_dir, cfg, sum, {{"carleman.csv", res.csv}}, plot);
  return 0;
}

json level_json(const EpsLevelReport& lr) {
  return json{{"eps", lr.eps},
              {"converged", lr.converged},
              {"iterations", lr.iterations},
              {"log_terminal", lr.log_terminal},
              {"log_terminal_over_eps", lr.log_terminal_over_eps},
              {"log_ctrl_u", lr.log_ctrl_u},
              {"log_ctrl_U", lr.log_ctrl_U}};
}

int run_hum_like(const RunConfig& cfg, const RunOptions& opt, bool sweep) {
  Setup s = build_setup(cfg, opt.seed);
  WeightEvaluator ev(s.params, s.profile);
  LQProblem p;
  p.grid = s.grid;
  p.tree = s.tree;
  p.g0 = s.g0;
  p.y0 = initial_state(cfg, s.grid, opt.seed);
  p.eps = cfg.num("hum.eps", 1e-3);
  p.weights = track_of(cfg);
  p.tol = cfg.num("hum.tol", 1e-8);
  p.max_iter = static_cast<int>(cfg.integer("hum.max_iter", 500));

  json sum;
  std::map<std::string, std::string> csvs;
  int rc = 0;
  if (!sweep) {
    LQSolution sol = solve_lq(p, ev);
    sum["subcommand"] = "hum";
    sum["converged"] = sol.converged;
    sum["iterations"] = sol.iterations;
    sum["optimality_residual"] = sol.optimality_residual;
    sum["log_terminal"] = sol.terminal_norm_sq.log_abs();
    sum["log_J_terms"] = {{"track0", sol.J.track0.log_abs()},
                          {"track1", sol.J.track1.log_abs()},
                          {"track2", sol.J.track2.log_abs()},
                          {"ctrl_u", sol.J.ctrl_u.log_abs()},
                          {"ctrl_U", sol.J.ctrl_U.log_abs()},
                          {"terminal", sol.J.terminal.log_abs()}};
    std::ostringstream csv;
    csv.precision(17);
    csv << "x,y_T_mean,u_level0\n";
    Field yT = expectation(to_adapted(sol.y, s.grid), s.tree.slabs(), s.grid);
    Field u0 = to_field(sol.c.u.field(0, 0));
    for (int i = 0; i < s.grid.interior(); ++i)
      csv << s.grid.x(i) << "," << yT[i] << "," << u0[i] << "\n";
    csvs["terminal.csv"] = csv.str();
    rc = sol.converged ? 0 : 4;
  } else {
    int levels = static_cast<int>(cfg.integer("hum.eps_levels", 6));
    auto rep = eps_schedule(p, ev, p.eps, levels);
    sum["subcommand"] = "sweep";
    sum["all_converged"] = rep.all_converged;
    sum["terminal_nonincreasing"] = rep.terminal_nonincreasing;
    sum["log_max_ratio_factor"] = rep.log_max_ratio_factor;
    json lv = json::array();
    std::ostringstream csv;
    csv.precision(17);
    csv << "eps,converged,iterations,log_terminal,log_terminal_over_eps,log_ctrl_u,log_ctrl_U\n";
    for (const auto& lr : rep.levels) {
      lv.push_back(level_json(lr));
      csv << lr.eps << "," << lr.converged << "," << lr.iterations << "," << lr.log_terminal
          << "," << lr.log_terminal_over_eps << "," << lr.log_ctrl_u << "," << lr.log_ctrl_U
          << "\n";
    }
    sum["levels"] = lv;
    csvs["sweep.csv"] = csv.str();
    rc = rep.all_converged ? 0 : 4;
  }
  std::string plot =
      "set datafile separator ','\nset key autotitle columnhead\n"
      "plot for [i=2:3] '" +
      std::string(sweep ? "sweep.csv" : "terminal.csv") + "' using 1:i with linespoints\n";
  write_run_dir(opt.out_dir, cfg, sum, csvs, plot);
  return rc;
}

int run_semilinear(const RunConfig& cfg, const RunOptions& opt) {
  Setup s = build_setup(cfg, opt.seed);
  WeightEvaluator ev(s.params, s.profile);
  LQProblem p;
  p.grid = s.grid;
  p.tree = s.tree;
  p.g0 = s.g0;
  p.y0 = initial_state(cfg, s.grid, opt.seed);
  p.eps = cfg.num("hum.eps", 1e-3);
  p.weights = track_of(cfg);
  p.tol = cfg.num("hum.tol", 1e-8);
  p.max_iter = static_cast<int>(cfg.integer("hum.max_iter", 500));

  std::string which = cfg.str("semilinear.f", "lipschitz_mix");
  double kappa = cfg.num("semilinear.kappa", 0.1);
  NonlinearSpec nl;
  if (which == "lipschitz_mix")
    nl = make_lipschitz_mix(kappa, cfg.num("semilinear.mix_a", 1.0),
                            cfg.num("semilinear.mix_b", 1.0), cfg.num("semilinear.mix_c", 1.0));
  else if (which == "cahn_clamped")
    nl = make_cahn_clamped(kappa, cfg.num("semilinear.clamp_M", 2.0));
  else
    throw std::invalid_argument("config: semilinear.f must be lipschitz_mix or cahn_clamped");
  double g1 = cfg.num("semilinear.g_kappa1", 0.0);
  if (g1 > 0.0) nl = with_diffusion_g(nl, g1);

  auto res = picard_iterate(p, nl, ev, static_cast<int>(cfg.integer("semilinear.max_iter", 15)),
                            cfg.num("semilinear.tol", 1e-10));

  json sum;
  sum["subcommand"] = "semilinear";
  sum["nonlinearity"] = nl.name;
  sum["kappa"] = kappa;
  sum["iterations"] = res.report.iterations;
  sum["converged"] = res.report.converged;
  sum["diverged"] = res.report.diverged;
  sum["max_ratio"] = res.report.max_ratio;
  sum["asymptotic_ratio"] = res.report.asymptotic_ratio;
  sum["log_terminal"] = res.report.log_terminal;
  if (!res.report.diagnostic.empty()) sum["diagnostic"] = res.report.diagnostic;

  std::ostringstream csv;
  csv.precision(17);
  csv << "iteration,log_d,ratio\n";
  for (size_t k = 0; k < res.report.log_d.size(); ++k) {
    csv << k << "," << res.report.log_d[k] << ",";
    if (k >= 1) csv << res.report.ratios[k - 1];
    csv << "\n";
  }
  std::string plot =
      "set datafile separator ','\nset key autotitle columnhead\n"
      "plot 'picard.csv' using 1:2 with linespoints title 'log d_k'\n";
  write_run_dir(opt.out_dir, cfg, sum, {{"picard.csv", csv.str()}}, plot);
  if (res.report.diverged) return 3;
  return res.report.converged ? 0 : 4;
}

}  // namespace

const std::vector<std::string>& known_subcommands() {
  static const std::vector<std::string> cmds = {"weights",  "identity-check", "carleman",
                                                "hum",      "semilinear",     "sweep"};
  return cmds;
}

int run_subcommand(const std::string& cmd, RunConfig cfg, const RunOptions& opt,
                   std::ostream& err) {
  try {
    cfg.validate_keys();
    if (cfg.has("run.seed") || cfg.has("run.threads")) {
      // CLI flags win; config values are defaults only and already folded in
    }
    if (cmd == "weights") return run_weights(cfg, opt);
    if (cmd == "identity-check") return run_identity(cfg, opt);
    if (cmd == "carleman") return run_carleman(cfg, opt);
    if (cmd == "hum") return run_hum_like(cfg, opt, false);
    if (cmd == "sweep") return run_hum_like(cfg, opt, true);
    if (cmd == "semilinear") return run_semilinear(cfg, opt);
    err << "unknown subcommand '" << cmd << "'\n";
    return 2;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::overflow_error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace chc
