// pixeltrap command-line front end.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "pixeltrap/basis_cache.hpp"
#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/parallel.hpp"
#include "pixeltrap/reports.hpp"
#include "pixeltrap/scenarios.hpp"
#include "pixeltrap/spectrum.hpp"

namespace fs = std::filesystem;
using namespace pixeltrap;

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;

struct Globals {
  std::string out;
  unsigned threads = 0;
  unsigned seed = 0;
  std::string format = "csv";
};

// Layout, discretization and physics shared by the computing commands.
struct Setup {
  std::string config;
  std::size_t panels = kReferencePanels;
  std::string cache;
  std::string basis_file;
  double field = kReferenceField;
  std::string species = "Ca40_plus";

  void add_layout(CLI::App* c)
  {
    c->add_option("--config", config, "layout JSON (full electrode list or builder parameters)");
    c->add_option("--panels", panels, "target panel count")->check(CLI::PositiveNumber);
  }
  void add_basis(CLI::App* c)
  {
    add_layout(c);
    c->add_option("--cache", cache, "basis cache directory");
    c->add_option("--basis", basis_file, "precomputed basis file (overrides --config)");
  }
  void add_physics(CLI::App* c)
  {
    c->add_option("--field", field, "magnetic field, tesla")->check(CLI::PositiveNumber);
    c->add_option("--species", species, "Ca40_plus or electron");
  }

  ElectrodeLayout layout() const
  {
    if (config.empty()) return build_pixel_layout(reference_layout_params());
    Json j = read_json_file(config);
    if (j.is_object() && j.contains("electrodes")) {
      std::ifstream in(config);
      std::stringstream ss;
      ss << in.rdbuf();
      return layout_from_json(ss.str());
    }
    if (!j.is_object()) throw ParseError(config + ": expected a JSON object");
    LayoutParams p = reference_layout_params();
    auto num = [&](const char* key, auto& into) {
      if (!j.contains(key)) return;
      if (!j[key].is_number()) throw ParseError(config + ": '" + key + "' must be a number");
      into = j[key].get<std::decay_t<decltype(into)>>();
    };
    auto opt = [&](const char* key, std::optional<double>& into) {
      if (!j.contains(key)) return;
      if (!j[key].is_number()) throw ParseError(config + ": '" + key + "' must be a number");
      into = j[key].get<double>();
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
      static const std::set<std::string> known{"n_rings", "circumcircle_diameter", "gap_width",
                                               "guard_inner_radius", "guard_outer_radius", "plane_outer_radius"};
      if (!known.count(it.key())) throw ParseError(config + ": unknown layout parameter '" + it.key() + "'");
    }
    bool rescale = j.contains("n_rings") || j.contains("circumcircle_diameter") || j.contains("gap_width");
    num("n_rings", p.n_rings);
    num("circumcircle_diameter", p.circumcircle_diameter);
    num("gap_width", p.gap_width);
    if (rescale) {
      // keep the reference guard proportions for a resized array
      double R = pixel_array_radius(p.n_rings, p.circumcircle_diameter, p.gap_width);
      p.guard_inner_radius = 1.05 * R;
      p.guard_outer_radius = 5.0 * *p.guard_inner_radius;
      p.plane_outer_radius = 3.0 * *p.guard_outer_radius;
    }
    opt("guard_inner_radius", p.guard_inner_radius);
    opt("guard_outer_radius", p.guard_outer_radius);
    opt("plane_outer_radius", p.plane_outer_radius);
    return build_pixel_layout(p);
  }

  ChargeBasis basis() const
  {
    if (!basis_file.empty()) return load_basis(basis_file);
    return cached_basis(layout(), panels, cache.empty() ? default_cache_dir() : fs::path(cache));
  }

  ParticleSpecies particle() const { return species_by_name(species); }
  MagneticField magnet() const { return MagneticField{field}; }
};

fs::path out_or(const Globals& g, const std::string& fallback) { return g.out.empty() ? fs::path(fallback) : fs::path(g.out); }

void ensure_parent(const fs::path& p)
{
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

fs::path sibling(const fs::path& p, const std::string& suffix)
{
  return p.parent_path() / (p.stem().string() + suffix);
}

void print_site(const TrapSite& s, bool with_depth = true)
{
  std::printf("site (%.2f, %.2f, %.2f) um  f_z %.2f kHz  f+ %.4f MHz  f- %.3f kHz", s.position.x() * 1e6,
              s.position.y() * 1e6, s.position.z() * 1e6, s.omega_z / kTwoPi * 1e-3, s.omega_plus / kTwoPi * 1e-6,
              s.omega_minus / kTwoPi * 1e-3);
  if (with_depth) std::printf("  depth %.4f eV", s.depth_eV);
  std::printf("  %s\n", s.stable ? "stable" : "UNSTABLE");
}

// --- commands -------------------------------------------------------------

int cmd_mesh(const Globals& g, const Setup& setup)
{
  ElectrodeLayout layout = setup.layout();
  PanelMesh mesh = mesh_layout(layout, setup.panels);
  fs::path out = out_or(g, "mesh.json");
  ensure_parent(out);
  save_mesh(mesh, out);
  std::printf("%zu electrodes, %zu panels -> %s\n", layout.size(), mesh.size(), out.string().c_str());
  return 0;
}

int cmd_basis(const Globals& g, const Setup& setup)
{
  ChargeBasis b = setup.basis();
  std::printf("basis %016llx: %zu panels, %zu electrodes, residual %.3g V\n",
              static_cast<unsigned long long>(basis_key(b.layout, b.mesh)), b.panel_count(), b.electrode_count(),
              b.max_residual);
  if (!g.out.empty()) {
    fs::path out(g.out);
    ensure_parent(out);
    save_basis(b, out);
    std::printf("wrote %s\n", out.string().c_str());
  }
  return 0;
}

int cmd_scenario(const Globals& g, const Setup& setup, const std::string& name, bool list, bool no_sim)
{
  if (list) {
    for (const auto& s : scenario_registry()) std::printf("%-20s %s\n", s.name.c_str(), s.description.c_str());
    return 0;
  }
  if (name.empty()) throw InputError("scenario name required (see --list)");
  const Scenario& s = find_scenario(name);
  ChargeBasis basis = setup.basis_file.empty()
                          ? scenario_basis(s, setup.cache.empty() ? default_cache_dir() : fs::path(setup.cache))
                          : load_basis(setup.basis_file);
  ScenarioRunOptions opt;
  opt.simulate = !no_sim;
  opt.seed = g.seed;
  ScenarioResult r = run_scenario(s, basis, opt);
  fs::path dir = out_or(g, "scenario_" + name);
  write_scenario(r, dir, table_format_from_string(g.format));
  for (const auto& site : r.sites) print_site(site);
  for (const auto& [k, v] : r.metrics) std::printf("  %-32s %.6g\n", k.c_str(), v);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

int cmd_optimize(const Globals& g, const Setup& setup, const std::string& target_path, double lambda,
                 const std::vector<double>& bounds, bool sweep, const std::string& fixed_path)
{
  // validate cheap inputs before touching the basis
  ParticleSpecies sp = setup.particle();
  TargetSpec target = target_from_json(read_json_file(target_path), sp);
  RegularizationConfig reg;
  reg.lambda = lambda;
  if (bounds.size() == 2) {
    reg.v_min = bounds[0];
    reg.v_max = bounds[1];
  }
  if (!fixed_path.empty()) reg.fixed = voltages_from_json(read_json_file(fixed_path));
  reg.validate();
  ChargeBasis basis = setup.basis();

  fs::path out = out_or(g, "voltages.json");
  ensure_parent(out);
  SolveReport rep = solve_voltages(target, reg, basis);
  std::optional<TrapSite> achieved;
  if (target.center) {
    BemModel m(basis, rep.voltages);
    SiteOptions so;
    so.compute_depth = false;
    try {
      achieved = characterize_site(m, *target.center, sp, setup.magnet(), so);
      print_site(*achieved, false);
    } catch (const ComputationError& e) {
      std::fprintf(stderr, "warning: no site near the target center: %s\n", e.what());
    }
  }
  Json report = solve_report_to_json(rep, achieved);
  report["lambda"] = lambda;
  if (target.center) report["target_f_z_kHz"] = std::sqrt(target.axial_curvature * sp.charge / sp.mass) / kTwoPi * 1e-3;
  if (sweep) {
    Json rows = Json::array();
    bool monotone = true;
    double prev = INFINITY;
    for (int e = -6; e <= 0; ++e) {
      RegularizationConfig r2 = reg;
      r2.lambda = std::pow(10.0, e);
      SolveReport s2 = solve_voltages(target, r2, basis);
      rows.push_back({{"lambda", r2.lambda}, {"voltage_norm_V", s2.voltage_norm}, {"residual_rms_V", s2.residual_rms}});
      if (s2.voltage_norm > prev * (1.0 + 1e-9)) monotone = false;
      prev = s2.voltage_norm;
      std::printf("lambda %.0e  |v| %.6g V  residual %.3g V\n", r2.lambda, s2.voltage_norm, s2.residual_rms);
    }
    report["lambda_sweep"] = rows;
    report["norm_monotone_nonincreasing"] = monotone;
  }
  write_json_file(voltages_to_json(rep.voltages), out);
  write_json_file(report, sibling(out, "_report.json"));
  std::printf("residual %.3g V, |v| %.4g V, %zu active bounds -> %s\n", rep.residual_rms, rep.voltage_norm,
              rep.active_bounds.size(), out.string().c_str());
  return 0;
}

struct TransportArgs {
  std::string kind = "lateral";
  std::string from = "px0_0", to = "px1_0";
  int steps = 12;
  std::vector<double> heights{150e-6, 200e-6, 250e-6};
  double f_z = 500e3;
  double adiabaticity = 0.01;
  double max_step = 1.0;
};

int cmd_transport(const Globals& g, const Setup& setup, const TransportArgs& a)
{
  if (a.kind != "lateral" && a.kind != "vertical") throw InputError("--kind must be lateral or vertical");
  ParticleSpecies sp = setup.particle();
  TransportOptions opt;
  opt.adiabaticity = a.adiabaticity;
  opt.max_step_voltage = a.max_step;
  ChargeBasis basis = setup.basis();
  TransportPlan plan = a.kind == "lateral"
                           ? lateral_transport_plan(a.from, a.to, a.steps, basis, sp, setup.magnet(), opt)
                           : vertical_transport_plan(a.heights, basis, sp, setup.magnet(), kTwoPi * a.f_z, opt);
  PlanMetrics m = plan_metrics(plan);
  fs::path out = out_or(g, "plan.json");
  ensure_parent(out);
  write_json_file(plan_to_json(plan), out);
  write_json_file(plan_metrics_to_json(m), sibling(out, "_metrics.json"));
  std::printf("%zu waypoints over %.4g s; confining %d, monotone %d, adiabaticity %.4f, max dV %.3f V -> %s\n",
              plan.waypoints.size(), plan.duration(), m.all_confining, m.monotone, m.adiabaticity,
              m.max_step_voltage, out.string().c_str());
  return 0;
}

struct SimulateArgs {
  std::string voltages, plan;
  std::vector<double> start, velocity, offset;
  double duration = 0.0;
  double dt = 0.0;
  int stride = 10;
  std::string method = "grid";
  double damping = -1.0;
};

int cmd_simulate(const Globals& g, const Setup& setup, const SimulateArgs& a)
{
  if (a.voltages.empty() == a.plan.empty()) throw InputError("give exactly one of --voltages or --plan");
  ParticleSpecies sp = setup.particle();
  MagneticField B = setup.magnet();
  SimulationOptions so;
  so.dt = a.dt;
  so.stride = a.stride;
  so.method = field_method_from_string(a.method);
  so.damping = a.damping;
  std::optional<VoltageSet> volts;
  std::optional<TransportPlan> plan;
  if (!a.voltages.empty()) {
    volts = voltages_from_json(read_json_file(a.voltages));
    if (!(a.duration > 0.0)) throw InputError("--duration must be positive for a static run");
  } else {
    plan = plan_from_json(read_json_file(a.plan));
  }
  ChargeBasis basis = setup.basis();

  ParticleState s0;
  if (a.start.size() == 3) {
    s0.position = Vec3(a.start[0], a.start[1], a.start[2]);
  } else if (plan) {
    s0.position = plan->start_site;
  } else {
    BemModel m(basis, *volts);
    auto h = axial_minimum_height(m, 0.0, 0.0, sp);
    if (!h) throw ConfinementLostError("no trap above the array center; give --start");
    SiteOptions o;
    o.compute_depth = false;
    TrapSite site = characterize_site(m, Vec3(0.0, 0.0, *h), sp, B, o);
    print_site(site, false);
    s0.position = site.position;
  }
  if (a.offset.size() == 3) s0.position += Vec3(a.offset[0], a.offset[1], a.offset[2]);
  if (a.velocity.size() == 3) s0.velocity = Vec3(a.velocity[0], a.velocity[1], a.velocity[2]);

  Trajectory tr = plan ? simulate(s0, *plan, basis, B, sp, a.duration, so)
                       : simulate(s0, *volts, basis, B, sp, a.duration, so);
  TableFormat fmt = table_format_from_string(g.format);
  fs::path out = out_or(g, "trajectory" + extension(fmt));
  ensure_parent(out);
  trajectory_table(tr).save(out, fmt);
  for (const auto& w : tr.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto& last = tr.samples.back().state;
  std::printf("%zu samples, dt %.3g s; end (%.3f, %.3f, %.3f) um", tr.samples.size(), tr.dt, last.position.x() * 1e6,
              last.position.y() * 1e6, last.position.z() * 1e6);
  // energy is only conserved with static voltages
  if (!plan) std::printf("; energy drift %.3g", tr.relative_energy_drift());
  std::printf(" -> %s\n", out.string().c_str());
  return 0;
}

int cmd_spectrum(const Globals& g, const std::string& input, const std::string& axis, double slowest_hz, int padding)
{
  int ax = axis == "x" ? 0 : axis == "y" ? 1 : axis == "z" ? 2 : -1;
  if (ax < 0) throw InputError("--axis must be x, y or z");
  std::ifstream in(input);
  if (!in) throw InputError("cannot open " + input);
  Trajectory tr = trajectory_from_table(Table::parse_csv(in));
  Spectrum s = spectrum(tr, ax, kTwoPi * slowest_hz, padding);
  TableFormat fmt = table_format_from_string(g.format);
  fs::path out = out_or(g, "spectrum" + extension(fmt));
  ensure_parent(out);
  spectrum_table(s).save(out, fmt);
  for (const auto& p : find_peaks(s)) std::printf("peak %.6g Hz  amplitude %.4g m\n", p.frequency / kTwoPi, p.amplitude);
  std::printf("resolution %.4g Hz -> %s\n", s.resolution / kTwoPi, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Planar pixel Penning trap toolkit: electrostatics, voltage design, transport and dynamics"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--out", g.out, "output file or directory");
  app.add_option("--threads", g.threads, "worker thread cap (0 = all cores)");
  app.add_option("--seed", g.seed, "seed for randomized searches");
  app.add_option("--format", g.format, "table format")->check(CLI::IsMember({"csv", "json"}));

  Setup setup;

  auto* mesh = app.add_subcommand("mesh", "discretize a layout into panels");
  setup.add_layout(mesh);

  auto* basis = app.add_subcommand("basis", "solve and cache the unit-voltage charge basis");
  setup.add_basis(basis);

  std::string scen_name;
  bool scen_list = false, scen_nosim = false;
  auto* scen = app.add_subcommand("scenario", "run a preset configuration");
  scen->add_option("name", scen_name, "scenario name");
  scen->add_flag("--list", scen_list, "list the presets");
  scen->add_flag("--no-simulate", scen_nosim, "skip trajectory integration");
  scen->add_option("--cache", setup.cache, "basis cache directory");
  scen->add_option("--basis", setup.basis_file, "precomputed basis file");

  std::string target_path, fixed_path;
  double lambda = 1e-3;
  std::vector<double> bounds;
  bool sweep = false;
  auto* opt = app.add_subcommand("optimize", "fit electrode voltages to a target potential");
  opt->add_option("target", target_path, "target JSON")->required();
  opt->add_option("--lambda", lambda, "Tikhonov weight")->check(CLI::NonNegativeNumber);
  opt->add_option("--bounds", bounds, "voltage bounds lo hi")->expected(2);
  opt->add_flag("--lambda-sweep", sweep, "report |v| over lambda = 1e-6 .. 1");
  opt->add_option("--fixed", fixed_path, "voltage set held fixed");
  setup.add_basis(opt);
  setup.add_physics(opt);

  TransportArgs ta;
  auto* tr = app.add_subcommand("transport", "plan an adiabatic transport waveform");
  tr->add_option("--kind", ta.kind, "lateral or vertical");
  tr->add_option("--from", ta.from, "start pixel (lateral)");
  tr->add_option("--to", ta.to, "end pixel (lateral)");
  tr->add_option("--steps", ta.steps, "translation steps (lateral)")->check(CLI::PositiveNumber);
  tr->add_option("--heights", ta.heights, "well heights in metres (vertical)");
  tr->add_option("--fz", ta.f_z, "axial frequency, Hz (vertical)")->check(CLI::PositiveNumber);
  tr->add_option("--adiabaticity", ta.adiabaticity, "bound on |dw/dt|/w^2")->check(CLI::PositiveNumber);
  tr->add_option("--max-step", ta.max_step, "largest per-electrode change between waypoints, V")
      ->check(CLI::PositiveNumber);
  setup.add_basis(tr);
  setup.add_physics(tr);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "integrate an ion trajectory");
  sim->add_option("--voltages", sa.voltages, "static voltage set JSON");
  sim->add_option("--plan", sa.plan, "transport plan JSON");
  sim->add_option("--start", sa.start, "initial position x y z, m")->expected(3);
  sim->add_option("--offset", sa.offset, "displacement added to the start, m")->expected(3);
  sim->add_option("--velocity", sa.velocity, "initial velocity, m/s")->expected(3);
  sim->add_option("--duration", sa.duration, "seconds (plans default to their length)");
  sim->add_option("--dt", sa.dt, "time step, s (0: 1/100 cyclotron period)");
  sim->add_option("--stride", sa.stride, "record every n-th step")->check(CLI::PositiveNumber);
  sim->add_option("--method", sa.method, "field evaluation")->check(CLI::IsMember({"direct", "treecode", "grid"}));
  sim->add_option("--damping", sa.damping, "velocity damping rate, 1/s (negative: none)");
  setup.add_basis(sim);
  setup.add_physics(sim);

  std::string spec_in, spec_axis = "z";
  double slowest = 0.0;
  int padding = 4;
  auto* spec = app.add_subcommand("spectrum", "amplitude spectrum of a trajectory");
  spec->add_option("trajectory", spec_in, "trajectory CSV")->required();
  spec->add_option("--axis", spec_axis, "x, y or z");
  spec->add_option("--slowest-hz", slowest, "slowest frequency the window must resolve");
  spec->add_option("--padding", padding, "zero-padding factor")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    max_threads() = g.threads;
    table_format_from_string(g.format);
    if (*mesh) return cmd_mesh(g, setup);
    if (*basis) return cmd_basis(g, setup);
    if (*scen) return cmd_scenario(g, setup, scen_name, scen_list, scen_nosim);
    if (*opt) return cmd_optimize(g, setup, target_path, lambda, bounds, sweep, fixed_path);
    if (*tr) return cmd_transport(g, setup, ta);
    if (*sim) return cmd_simulate(g, setup, sa);
    if (*spec) return cmd_spectrum(g, spec_in, spec_axis, slowest, padding);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed input: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
