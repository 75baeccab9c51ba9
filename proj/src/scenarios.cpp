#include "pixeltrap/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"

namespace pixeltrap {

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;

std::vector<Scenario> make_registry()
{
  std::vector<Scenario> out;
  auto add = [&](Scenario s) { out.push_back(std::move(s)); };

  Scenario big;
  big.name = "bigtrap";
  big.description = "large trapping volume: pixels grounded, guard -10 V, outer plane +10 V";
  big.voltages = {{0.0, 0.0, 0.0, 0.0}, -10.0, 10.0};
  add(big);

  Scenario tight;
  tight.name = "tighttrap";
  tight.description = "tight single well about 0.2 mm above the center pixel";
  tight.voltages = {{0.0, -0.2369, 1.3171, -28.3125}, 8.1845, 10.2997};
  tight.broadening_temperature = 5.0;
  add(tight);

  Scenario fig1;
  fig1.name = "fig1_single";
  fig1.description = "single-pixel well: center 1 V, rings -2.8, 1, 3 V";
  fig1.voltages = {{1.0, -2.8, 1.0, 3.0}, 0.0, 0.0};
  add(fig1);

  Scenario crystal;
  crystal.name = "crystal3";
  crystal.kind = ScenarioKind::crystal;
  crystal.description = "three wells on a 300 um circle";
  add(crystal);

  Scenario race;
  race.name = "racetrack580";
  race.kind = ScenarioKind::racetrack;
  race.description = "ring-shaped crest of 580 um diameter";
  add(race);

  Scenario lat;
  lat.name = "lateral_transport";
  lat.kind = ScenarioKind::lateral_transport;
  lat.description = "shuttle from the center pixel to its neighbour";
  add(lat);

  Scenario vert;
  vert.name = "vertical_transport";
  vert.kind = ScenarioKind::vertical_transport;
  vert.description = "raise a 500 kHz well from 150 to 250 um";
  add(vert);
  return out;
}

// site characterization with a seed from the axial scan
TrapSite axial_site(const BemModel& model, double x, double y, const Scenario& s)
{
  auto h = axial_minimum_height(model, x, y, s.species);
  if (!h) throw ConfinementLostError("no axial potential minimum above (" + std::to_string(x) + ", " +
                                     std::to_string(y) + ")");
  return characterize_site(model, Vec3(x, y, *h), s.species, s.B);
}

GridSpec xy_grid_at(double half, double z, int n)
{
  GridSpec g;
  g.lo = Vec3(-half, -half, z);
  g.hi = Vec3(half, half, z);
  g.n = {n, n, 1};
  return g;
}

void put_site_metrics(ScenarioResult& r, const TrapSite& site, const std::string& prefix = "")
{
  r.metrics[prefix + "f_z_kHz"] = site.omega_z / kTwoPi * 1e-3;
  r.metrics[prefix + "f_plus_kHz"] = site.omega_plus / kTwoPi * 1e-3;
  r.metrics[prefix + "f_minus_kHz"] = site.omega_minus / kTwoPi * 1e-3;
  r.metrics[prefix + "depth_eV"] = site.depth_eV;
  r.metrics[prefix + "height_um"] = site.position.z() * 1e6;
  r.metrics[prefix + "stable"] = site.stable ? 1.0 : 0.0;
}

void simulate_plan(ScenarioResult& r, const Scenario& s, const ChargeBasis& basis, const ScenarioRunOptions& opt)
{
  const TransportPlan& plan = *r.plan;
  ParticleState s0;
  s0.position = plan.start_site;
  SimulationOptions so = opt.simulation;
  if (so.stride < 1) so.stride = 10;
  Trajectory tr = simulate(s0, plan, basis, s.B, s.species, plan.duration(), so);
  const ParticleState& last = tr.samples.back().state;
  BemModel end_model(basis, plan.waypoints.back());
  SiteOptions site_opt;
  site_opt.compute_depth = false;
  TrapSite end_site = characterize_site(end_model, plan.end_site, s.species, s.B, site_opt);
  ModeEnergies e = mode_energies(last, end_site, s.species);
  // energy of a 1 um axial oscillation in the final well
  double scale = 0.5 * s.species.mass * end_site.omega_z * end_site.omega_z * 1e-12;
  r.metrics["end_error_um"] = (last.position - end_site.position).norm() * 1e6;
  r.metrics["excitation_over_1um_quantum"] = e.excitation() / scale;
  r.metrics["excitation_axial_J"] = e.axial;
  r.metrics["excitation_cyclotron_J"] = e.cyclotron;
  r.metrics["excitation_magnetron_J"] = e.magnetron;
  r.metrics["simulated_duration_s"] = last.time;
  for (const auto& w : tr.warnings) r.warnings.push_back(w);
  r.trajectory = std::move(tr);
}

}  // namespace

LayoutParams reference_layout_params()
{
  LayoutParams p;
  p.n_rings = 3;
  p.circumcircle_diameter = 300e-6;
  p.gap_width = 4e-6;
  double R = pixel_array_radius(p.n_rings, p.circumcircle_diameter, p.gap_width);
  p.guard_inner_radius = 1.05 * R;
  p.guard_outer_radius = 5.0 * *p.guard_inner_radius;
  p.plane_outer_radius = 3.0 * *p.guard_outer_radius;
  return p;
}

VoltageSet ring_voltages(const ElectrodeLayout& layout, const RingVoltages& v)
{
  VoltageSet out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Electrode& e = layout.electrodes[i];
    switch (e.group) {
      case ElectrodeGroup::pixel: {
        int ring = std::min(pixel_ring(layout, i), 3);
        out[e.id] = v.rings[static_cast<std::size_t>(ring)];
        break;
      }
      case ElectrodeGroup::guard_quadrant: out[e.id] = v.guard; break;
      case ElectrodeGroup::outer_segment: out[e.id] = v.outer; break;
    }
  }
  return out;
}

std::string to_string(ScenarioKind k)
{
  switch (k) {
    case ScenarioKind::static_trap: return "static_trap";
    case ScenarioKind::crystal: return "crystal";
    case ScenarioKind::racetrack: return "racetrack";
    case ScenarioKind::lateral_transport: return "lateral_transport";
    case ScenarioKind::vertical_transport: return "vertical_transport";
  }
  return "unknown";
}

const std::vector<Scenario>& scenario_registry()
{
  static const std::vector<Scenario> registry = make_registry();
  return registry;
}

std::vector<std::string> scenario_names()
{
  std::vector<std::string> out;
  for (const auto& s : scenario_registry()) out.push_back(s.name);
  return out;
}

const Scenario& find_scenario(const std::string& name)
{
  for (const auto& s : scenario_registry())
    if (s.name == name) return s;
  std::string list;
  for (const auto& n : scenario_names()) list += (list.empty() ? "" : ", ") + n;
  throw InputError("unknown scenario '" + name + "' (available: " + list + ")");
}

ChargeBasis scenario_basis(const Scenario& s, const std::filesystem::path& cache_dir)
{
  return cached_basis(build_pixel_layout(s.layout), s.panels, cache_dir);
}

std::optional<double> axial_minimum_height(const PotentialModel& model, double x, double y,
                                           const ParticleSpecies& species, double z_lo, double z_max, double step)
{
  if (!(z_lo > 0.0 && z_max > z_lo && step > 0.0)) throw InputError("axial scan needs 0 < z_lo < z_max, step > 0");
  double sign = species.charge >= 0.0 ? 1.0 : -1.0;
  // force along z changes from upward to downward at a minimum
  double prev = sign * model.sample(Vec3(x, y, z_lo), false).field.z();
  for (double z = z_lo + step; z <= z_max; z += step) {
    double f = sign * model.sample(Vec3(x, y, z), false).field.z();
    if (prev > 0.0 && f <= 0.0) return z - step * f / (f - prev);
    prev = f;
  }
  return std::nullopt;
}

ScenarioResult run_scenario(const Scenario& s, const ChargeBasis& basis, const ScenarioRunOptions& opt)
{
  ScenarioResult r;
  r.name = s.name;
  r.kind = s.kind;
  double R = basis.layout.pixel_array_radius();
  Vec3 profile_xy = Vec3::Zero();
  double plot_z = 0.0;

  switch (s.kind) {
    case ScenarioKind::static_trap: {
      r.voltages = ring_voltages(basis.layout, s.voltages);
      BemModel model(basis, r.voltages);
      TrapSite site = axial_site(model, 0.0, 0.0, s);
      put_site_metrics(r, site);
      if (s.broadening_temperature > 0.0) {
        double br = anharmonic_broadening(model, site.position, s.species, s.broadening_temperature, site.depth_eV);
        r.metrics["broadening_Hz"] = br / kTwoPi;
        r.metrics["broadening_temperature_K"] = s.broadening_temperature;
      }
      r.sites.push_back(site);
      plot_z = site.position.z();
      break;
    }
    case ScenarioKind::crystal: {
      CrystalResult c = crystal_voltages(s.crystal_sites, s.crystal_radius, basis, s.species, s.B);
      r.voltages = c.voltages;
      r.sites = c.sites;
      double fmin = 1e300, fmax = 0.0, dmin = 1e300, dmax = 0.0;
      for (std::size_t k = 0; k < r.sites.size(); ++k) {
        put_site_metrics(r, r.sites[k], "site" + std::to_string(k) + "_");
        double f = r.sites[k].omega_z / kTwoPi * 1e-3;
        fmin = std::min(fmin, f);
        fmax = std::max(fmax, f);
        dmin = std::min(dmin, r.sites[k].depth_eV);
        dmax = std::max(dmax, r.sites[k].depth_eV);
      }
      r.metrics["n_sites"] = static_cast<double>(r.sites.size());
      r.metrics["f_z_min_kHz"] = fmin;
      r.metrics["f_z_max_kHz"] = fmax;
      r.metrics["depth_min_eV"] = dmin;
      r.metrics["depth_max_eV"] = dmax;
      profile_xy = r.sites.front().position;
      plot_z = r.sites.front().position.z();
      break;
    }
    case ScenarioKind::racetrack: {
      RacetrackResult rt = racetrack_voltages(s.racetrack_diameter, basis, s.species, s.racetrack);
      r.voltages = rt.voltages;
      double rmin = 1e300, rmax = 0.0;
      for (const auto& c : rt.crests) {
        rmin = std::min(rmin, c.radius);
        rmax = std::max(rmax, c.radius);
      }
      r.metrics["crest_radius_um"] = rt.mean_radius * 1e6;
      r.metrics["crest_radius_min_um"] = rmin * 1e6;
      r.metrics["crest_radius_max_um"] = rmax * 1e6;
      r.metrics["omega_z_variation"] = rt.omega_z_variation;
      r.metrics["f_z_kHz"] = rt.crests.front().omega_z / kTwoPi * 1e-3;
      r.metrics["height_um"] = rt.crests.front().height * 1e6;
      r.metrics["seed"] = opt.seed;
      profile_xy = Vec3(rt.crests.front().radius * std::cos(rt.crests.front().azimuth),
                        rt.crests.front().radius * std::sin(rt.crests.front().azimuth), 0.0);
      plot_z = rt.crests.front().height;
      r.racetrack = std::move(rt);
      break;
    }
    case ScenarioKind::lateral_transport:
    case ScenarioKind::vertical_transport: {
      TransportPlan plan = s.kind == ScenarioKind::lateral_transport
                               ? lateral_transport_plan(s.from_pixel, s.to_pixel, s.lateral_steps, basis, s.species,
                                                        s.B, s.transport)
                               : vertical_transport_plan(s.heights, basis, s.species, s.B,
                                                         kTwoPi * 500e3, s.transport);
      PlanMetrics m = plan_metrics(plan);
      r.metrics["waypoints"] = static_cast<double>(plan.waypoints.size());
      r.metrics["duration_s"] = plan.duration();
      r.metrics["all_confining"] = m.all_confining ? 1.0 : 0.0;
      r.metrics["monotone"] = m.monotone ? 1.0 : 0.0;
      r.metrics["adiabaticity"] = m.adiabaticity;
      r.metrics["max_step_voltage_V"] = m.max_step_voltage;
      r.metrics["displacement_um"] = (plan.end_site - plan.start_site).norm() * 1e6;
      r.voltages = plan.waypoints.front();
      BemModel start_model(basis, r.voltages);
      TrapSite start = characterize_site(start_model, plan.start_site, s.species, s.B);
      r.sites.push_back(start);
      profile_xy = plan.start_site;
      plot_z = plan.start_site.z();
      r.plan = std::move(plan);
      r.plan_metrics = m;
      if (s.simulate && opt.simulate) simulate_plan(r, s, basis, opt);
      break;
    }
  }

  BemModel model(basis, r.voltages);
  double z_top = std::max(4.0 * plot_z, 1.0e-3);
  r.axial_profile = axial_profile(model, profile_xy.x(), profile_xy.y(), 5e-6, z_top, opt.profile_points, s.species);
  r.xy_grid = xy_grid_at(1.2 * R, plot_z, opt.xy_points);
  r.xy_values = grid_sample(r.xy_grid, r.voltages, basis);
  for (const auto& site : r.sites)
    for (const auto& w : site.warnings) r.warnings.push_back(w);
  return r;
}

Json scenario_summary(const ScenarioResult& r)
{
  Json j;
  j["scenario"] = r.name;
  j["kind"] = to_string(r.kind);
  Json m = Json::object();
  for (const auto& [k, v] : r.metrics) m[k] = v;
  j["metrics"] = m;
  if (r.plan_metrics) j["plan_metrics"] = plan_metrics_to_json(*r.plan_metrics);
  if (r.racetrack) {
    Json crests = Json::array();
    for (const auto& c : r.racetrack->crests)
      crests.push_back({{"azimuth_rad", c.azimuth}, {"radius_m", c.radius}, {"height_m", c.height},
                        {"omega_z_rad_s", c.omega_z}});
    j["crests"] = crests;
  }
  j["warnings"] = r.warnings;
  return j;
}

void write_scenario(const ScenarioResult& r, const std::filesystem::path& dir, TableFormat format)
{
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_json_file(scenario_summary(r), dir / "summary.json");
  write_json_file(voltages_to_json(r.voltages), dir / "voltages.json");
  if (r.sites.size() == 1) {
    write_json_file(site_to_json(r.sites.front()), dir / "site.json");
  } else if (!r.sites.empty()) {
    Json all = Json::array();
    for (const auto& s : r.sites) all.push_back(site_to_json(s));
    write_json_file(all, dir / "sites.json");
  }
  r.axial_profile.save(dir / ("axial_profile" + extension(format)), format);
  grid_table(r.xy_grid, r.xy_values).save(dir / ("xy_grid" + extension(format)), format);
  if (r.plan) write_json_file(plan_to_json(*r.plan), dir / "plan.json");
  if (r.trajectory) trajectory_table(*r.trajectory).save(dir / ("trajectory" + extension(format)), format);
}

}  // namespace pixeltrap
