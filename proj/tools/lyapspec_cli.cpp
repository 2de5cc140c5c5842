// lyapspec: command-line front end. Exit codes: 0 success, 1 configuration
// error, 2 numerical failure, 3 verification failure.

#include "lyapspec/construction.hpp"
#include "lyapspec/errors.hpp"
#include "lyapspec/horseshoe.hpp"
#include "lyapspec/io.hpp"
#include "lyapspec/spectrum.hpp"
#include "lyapspec/symbolic.hpp"
#include "lyapspec/thermo.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <optional>

using namespace lyap;
using io::Json;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumerical = 2, kVerification = 3 };

struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<int> depth;
  std::optional<int> stage;
  std::optional<std::string> grid;
  std::vector<std::string> formats;
  std::optional<std::vector<double>> tilt;
};

// Everything a subcommand hands back to main for the run report.
struct Run {
  io::RunConfig cfg;
  Json checks = Json::array();
  Json outputs = Json::array();
  Json notes = Json::array();
  int exit = kOk;

  void check(const std::string& name, bool pass, Json detail = nullptr) {
    checks.push_back({{"name", name}, {"pass", pass}, {"detail", std::move(detail)}});
  }
  void emit(const std::string& file, const std::string& text) {
    const std::string path = cfg.out_dir + "/" + file;
    io::write_text(path, text);
    outputs.push_back(path);
  }
  void emit_json(const std::string& file, const Json& j) { emit(file, j.dump(2) + "\n"); }
};

io::RunConfig resolve_config(const Overrides& o) {
  io::RunConfig cfg = o.config.empty() ? io::RunConfig{} : io::load_config(o.config);
  if (o.config.empty()) {
    cfg.depth = cfg.construction.N_default;
    cfg.stage = cfg.construction.K_default;
  }
  if (o.out) cfg.out_dir = *o.out;
  if (o.depth) cfg.depth = *o.depth;
  if (o.stage) cfg.stage = *o.stage;
  if (o.grid) {
    const auto x = o.grid->find_first_of("xX");
    try {
      if (x == std::string::npos) throw std::invalid_argument("missing x");
      std::size_t used = 0;
      cfg.grid.nx = std::stoi(o.grid->substr(0, x), &used);
      if (used != x) throw std::invalid_argument("trailing characters");
      const std::string h = o.grid->substr(x + 1);
      cfg.grid.ny = std::stoi(h, &used);
      if (used != h.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError("--grid expects WxH, got '" + *o.grid + "'");
    }
  }
  if (!o.formats.empty()) cfg.formats = o.formats;
  if (o.tilt) {
    if (o.tilt->size() != 2) throw ConfigError("--tilt expects p,q");
    cfg.tilt = {(*o.tilt)[0], (*o.tilt)[1]};
  }
  cfg.validate();
  return cfg;
}

// ------------------------------------------------------------------ commands

void cmd_construct(Run& run) {
  const auto& p = run.cfg.construction;
  const VertexFamily fam = make_vertices(p, run.cfg.levels);
  std::vector<Vec2> pts{fam.w0, fam.w_inf};
  pts.insert(pts.end(), fam.w.begin(), fam.w.end());
  const auto hull = convex_hull(pts);
  run.check("hull_vertex_count", hull.size() == fam.size() + 2,
            {{"expected", fam.size() + 2}, {"found", hull.size()}});
  if (run.cfg.wants("json")) run.emit_json("vertices.json", io::to_json(fam, hull));
  if (run.cfg.wants("svg")) run.emit("vertices.svg", io::vertex_svg(fam, hull));
}

bool is_vertex(const std::vector<Vec2>& poly, Vec2 v) {
  return std::any_of(poly.begin(), poly.end(), [&](Vec2 q) { return norm(q - v) < 1e-12; });
}

void cmd_rotation_set(Run& run) {
  const auto& p = run.cfg.construction;
  const RotationPolygon poly = rotation_set_hull(run.cfg.period, p);
  const Potential pot(p);
  run.check("w0_is_vertex", is_vertex(poly.vertices, pot.w0()));
  run.check("w_inf_is_vertex", is_vertex(poly.vertices, pot.w_inf()));
  if (run.cfg.wants("json")) run.emit_json("rotation_set.json", io::to_json(poly));
  if (run.cfg.wants("svg")) run.emit("rotation_set.svg", io::polygon_svg(poly));
}

void cmd_pressure(Run& run) {
  const TransferOperator op(run.cfg.construction, run.cfg.depth);
  const Tilt t = run.cfg.tilt;
  const EquilibriumData db = op.equilibrium(t, Backend::DeBruijn);
  const EquilibriumData lu = op.equilibrium(t, Backend::Lumped);
  const double gibbs = std::abs(db.log_rho - (db.entropy + dot(t, db.rv)));
  run.check("backends_agree", std::abs(db.log_rho - lu.log_rho) <= 1e-10 * std::max(1.0, std::abs(db.log_rho)),
            std::abs(db.log_rho - lu.log_rho));
  run.check("gibbs_identity", gibbs <= 1e-10 * std::max(1.0, std::abs(db.log_rho)), gibbs);
  if (run.cfg.wants("json")) {
    run.emit_json("pressure.json", {{"depth", run.cfg.depth},
                                    {"debruijn", io::to_json(db, t)},
                                    {"lumped", io::to_json(lu, t)}});
  }
}

// The probe needs w_L at depth L + alpha + 1 <= N. Asked for directly, a
// shallow depth is a configuration error; after a spectrum sweep the probe
// drops to the levels the depth can resolve.
void run_probe(Run& run, bool fit_depth) {
  const int fits = run.cfg.depth - run.cfg.construction.alpha - 1;
  int levels = run.cfg.probe_levels;
  if (levels > fits) {
    if (!fit_depth) {
      throw ConfigError("probe_levels " + std::to_string(levels) + " needs depth >= " +
                        std::to_string(levels + run.cfg.construction.alpha + 1));
    }
    if (fits < 1) {
      run.notes.push_back("probe skipped: depth " + std::to_string(run.cfg.depth) + " resolves no vertex level");
      return;
    }
    run.notes.push_back("probe_levels lowered to " + std::to_string(fits) + " for depth " + std::to_string(run.cfg.depth));
    levels = fits;
  }
  const ProbeReport rep = discontinuity_probe(levels, run.cfg.depth, run.cfg.construction, run.cfg.dual_radius);
  run.check("probe_gap_positive", rep.gap > 0.0, rep.gap);
  if (run.cfg.wants("json")) run.emit_json("probe.json", io::to_json(rep));
}

void cmd_spectrum(Run& run) {
  const auto& c = run.cfg;
  GridSpec g = default_grid(c.construction, c.depth, c.grid.nx, c.grid.ny);
  if (c.grid.x_range) g.x_min = (*c.grid.x_range)[0], g.x_max = (*c.grid.x_range)[1];
  if (c.grid.y_range) g.y_min = (*c.grid.y_range)[0], g.y_max = (*c.grid.y_range)[1];
  const auto rows = spectrum_grid(c.construction, c.depth, g, c.dual_radius, c.threads);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.error.empty() ? 0 : 1;
  // Partial grids are still written; the status column marks the failures.
  if (c.wants("csv")) run.emit("spectrum.csv", io::grid_csv(rows));
  run.check("grid_solved", failed == 0, {{"points", rows.size()}, {"failed", failed}});
  if (failed) {
    run.exit = kNumerical;
    return;
  }
  run_probe(run, true);
}

void cmd_horseshoe(Run& run, bool quiet) {
  const auto& c = run.cfg;
  if (c.stage < 1 || c.stage > 3) throw ConfigError("horseshoe needs stage K in [1, 3]");
  std::vector<std::string> log;
  StageMap stage = [&] {
    try {
      return build_stage(c.construction, c.stage, {}, &log);
    } catch (...) {
      for (const auto& l : log) run.notes.push_back(l);
      throw;
    }
  }();
  for (const auto& l : log) {
    run.notes.push_back(l);
    if (!quiet) std::cerr << l << '\n';
  }
  const int n_max = c.stage + c.construction.alpha + 2;
  const VerificationReport rep = verify_phi_L(stage, n_max, c.threads);

  bool budgets = true;
  for (const auto& l : stage.levels()) budgets = budgets && l.sampled.max() < l.budget && l.min_jacobian > 0.0;
  run.check("budgets", budgets);
  run.check("verify_phi_L", rep.all_pass(), {{"passed", rep.passed}, {"total", rep.rows.size()}});

  // The orbit of 1^(1+alpha) 2 realizes w_1 of the parameters the stage was
  // actually built with (x_scale may have been shrunk).
  const std::string word = std::string(static_cast<std::size_t>(1 + c.construction.alpha), '1') + "2";
  const VertexFamily fam = make_vertices(stage.params(), 1);
  for (const auto& r : rep.rows) {
    if (r.word != word) continue;
    const double dev = std::max(std::abs(r.exponents.x - fam.w[0].x), std::abs(r.exponents.y - fam.w[0].y));
    run.check("vertex_orbit_realizes_w1", r.pass && dev < 1e-12, {{"word", word}, {"deviation", dev}});
  }
  if (c.wants("json")) {
    run.emit_json("horseshoe.json", {{"stage", io::to_json(stage)}, {"verification", io::to_json(rep)}});
  }
  if (c.wants("svg")) run.emit("boxes.svg", io::boxes_svg(stage));
  for (const auto& chk : run.checks) {
    if (!chk["pass"].get<bool>()) run.exit = kVerification;
  }
}

void cmd_selftest(Run& run) {
  ConstructionParams p = run.cfg.construction;
  const double log3 = std::log(3.0);
  double worst = 0.0;
  for (int N = 1; N <= 4; ++N) worst = std::max(worst, std::abs(pressure(0.0, 0.0, p, N) - log3));
  run.check("pressure_at_zero_tilt", worst < 1e-12, worst);

  const VertexFamily fam = make_vertices(p, 3);
  const Potential pot(p);
  double vdev = 0.0;
  for (int l = 1; l <= 3; ++l) {
    Word w = repeat(Symbol(1), static_cast<std::size_t>(l + p.alpha));
    w.push_back(Symbol(2));
    const Vec2 rv = phi_periodic_rv(PeriodicItinerary(w), pot);
    vdev = std::max({vdev, std::abs(rv.x - fam.w[l - 1].x), std::abs(rv.y - fam.w[l - 1].y)});
  }
  run.check("vertex_realization", vdev < 1e-14, vdev);

  const PrimalResult h = entropy_spectrum_primal({pot.w_inf(), 4}, p);
  const double hdev = std::abs(h.value - std::log(2.0));
  run.check("entropy_at_w_inf", h.feasible && hdev < 1e-6, hdev);

  const StageMap st = build_stage(p, 1);
  const VerificationReport rep = verify_phi_L(st, 3 + p.alpha, run.cfg.threads);
  run.check("verify_phi_L_stage1", rep.all_pass(), {{"passed", rep.passed}, {"total", rep.rows.size()}});

  for (const auto& c : run.checks) {
    if (!c["pass"].get<bool>()) run.exit = kVerification;
  }
  if (run.cfg.wants("json")) run.emit_json("selftest.json", run.checks);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lyapunov spectra of a horseshoe with a discontinuous entropy spectrum"};
  app.require_subcommand(1);
  Overrides ov;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", ov.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", ov.out, "output directory");
    sub->add_option("--depth", ov.depth, "de Bruijn depth N");
    sub->add_option("--stage", ov.stage, "horseshoe stage K");
    sub->add_option("--grid", ov.grid, "grid resolution WxH");
    sub->add_option("--format", ov.formats, "csv, json, svg (repeatable or comma-separated)")
        ->delimiter(',')
        ->check(CLI::IsMember({"csv", "json", "svg"}));
    sub->add_flag("--quiet", quiet, "no progress on stderr");
  };

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"construct", "vertex family and its polygon"},
      {"rotation-set", "hull of periodic-orbit rotation vectors"},
      {"pressure", "pressure and equilibrium state at one tilt"},
      {"spectrum", "entropy spectrum over a grid, plus the jump probe"},
      {"probe", "entropy at w_inf against upper bounds at nearby vertices"},
      {"horseshoe", "build stage K and verify Lyapunov data on periodic orbits"},
      {"selftest", "quick consistency checks"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (std::string_view(c.name) == "pressure") {
      sub->add_option("--tilt", ov.tilt, "tilt p,q")->delimiter(',')->expected(2);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  Run run;
  try {
    run.cfg = resolve_config(ov);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::string error;
  try {
    if (command == "construct") cmd_construct(run);
    else if (command == "rotation-set") cmd_rotation_set(run);
    else if (command == "pressure") cmd_pressure(run);
    else if (command == "spectrum") cmd_spectrum(run);
    else if (command == "probe") run_probe(run, false);
    else if (command == "horseshoe") cmd_horseshoe(run, quiet);
    else cmd_selftest(run);
  } catch (const ConfigError& e) {
    error = std::string("config error: ") + e.what();
    run.exit = kConfig;
  } catch (const CoreViolation& e) {
    error = std::string("verification failure: ") + e.what();
    run.exit = kVerification;
  } catch (const VerificationFailure& e) {
    error = std::string("verification failure: ") + e.what();
    run.exit = kVerification;
  } catch (const std::exception& e) {
    error = std::string("numerical failure: ") + e.what();
    run.exit = kNumerical;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const Json cfg_json = io::to_json(run.cfg);
  Json report = {{"command", command},
                 {"config_hash", io::config_hash(cfg_json)},
                 {"wall_time_s", wall},
                 {"checks", run.checks},
                 {"outputs", run.outputs},
                 {"log", run.notes},
                 {"exit_code", run.exit}};
  if (!error.empty()) {
    report["error"] = error;
    std::cerr << error << '\n';
  }
  std::cout << report.dump(2) << '\n';
  return run.exit;
}
