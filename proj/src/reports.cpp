#include "pixeltrap/reports.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"

namespace pixeltrap {

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;

const Json& field(const Json& j, const std::string& key, const std::string& where)
{
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  return j[key];
}

double number(const Json& j, const std::string& where)
{
  if (!j.is_number()) throw ParseError(where + ": expected a number");
  return j.get<double>();
}

}  // namespace

TableFormat table_format_from_string(const std::string& s)
{
  if (s == "csv") return TableFormat::csv;
  if (s == "json") return TableFormat::json;
  throw InputError("unknown format '" + s + "' (available: csv, json)");
}

std::string extension(TableFormat f) { return f == TableFormat::csv ? ".csv" : ".json"; }

void Table::write(std::ostream& out, TableFormat format) const
{
  if (format == TableFormat::csv) {
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << '\n' << std::setprecision(17);
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << r[c];
      out << '\n';
    }
    return;
  }
  Json j = Json::object();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    Json col = Json::array();
    for (const auto& r : rows) col.push_back(r[c]);
    j[columns[c]] = std::move(col);
  }
  out << j.dump(1) << '\n';
}

void Table::save(const std::filesystem::path& path, TableFormat format) const
{
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write(out, format);
}

Table Table::parse_csv(std::istream& in)
{
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("CSV: empty input");
  {
    std::stringstream ss(line);
    std::string name;
    while (std::getline(ss, name, ',')) t.columns.push_back(name);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ParseError("CSV line " + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (row.size() != t.columns.size())
      throw ParseError("CSV line " + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size()) +
                       " values");
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::size_t Table::column(const std::string& name) const
{
  for (std::size_t c = 0; c < columns.size(); ++c)
    if (columns[c] == name) return c;
  throw ParseError("table has no column '" + name + "'");
}

// --- JSON ------------------------------------------------------------------------

Json vec_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const Json& j, const std::string& where)
{
  if (!j.is_array() || j.size() != 3) throw ParseError(where + ": expected [x, y, z]");
  return {number(j[0], where), number(j[1], where), number(j[2], where)};
}

Json site_to_json(const TrapSite& s)
{
  Json j;
  j["position_m"] = vec_to_json(s.position);
  j["kind"] = to_string(s.kind);
  j["stable"] = s.stable;
  j["omega_z_rad_s"] = s.omega_z;
  j["omega_plus_rad_s"] = s.omega_plus;
  j["omega_minus_rad_s"] = s.omega_minus;
  j["omega_c_rad_s"] = s.omega_c;
  j["depth_J"] = s.depth_eV * constants::elementary_charge;
  j["axis_tilt_deg"] = s.axis_tilt_deg;
  Json h = Json::array();
  for (int r = 0; r < 3; ++r) h.push_back(Json::array({s.hessian(r, 0), s.hessian(r, 1), s.hessian(r, 2)}));
  j["hessian_V_m2"] = h;
  Json d;
  d["note"] = "derived from the SI fields above";
  d["position_um"] = vec_to_json(s.position * 1e6);
  d["f_z_kHz"] = s.omega_z / kTwoPi * 1e-3;
  d["f_plus_MHz"] = s.omega_plus / kTwoPi * 1e-6;
  d["f_minus_kHz"] = s.omega_minus / kTwoPi * 1e-3;
  d["f_c_MHz"] = s.omega_c / kTwoPi * 1e-6;
  d["depth_eV"] = s.depth_eV;
  j["derived"] = d;
  j["warnings"] = s.warnings;
  return j;
}

Json voltages_to_json(const VoltageSet& v)
{
  Json j = Json::object();
  for (const auto& [id, volts] : v) j[id] = volts;
  return j;
}

VoltageSet voltages_from_json(const Json& j)
{
  if (!j.is_object()) throw ParseError("voltage set: expected an object of id -> volts");
  VoltageSet v;
  for (auto it = j.begin(); it != j.end(); ++it) v[it.key()] = number(it.value(), "voltage set." + it.key());
  return v;
}

Json plan_to_json(const TransportPlan& plan)
{
  Json j;
  Json w = Json::array();
  for (const auto& v : plan.waypoints) w.push_back(voltages_to_json(v));
  j["waypoints"] = w;
  j["timestamps_s"] = plan.timestamps;
  j["start_site_m"] = vec_to_json(plan.start_site);
  j["end_site_m"] = vec_to_json(plan.end_site);
  if (!plan.info.empty()) {
    Json info = Json::array();
    for (const auto& i : plan.info)
      info.push_back({{"site_m", vec_to_json(i.site)},
                      {"omega_z_rad_s", i.omega_z},
                      {"omega_plus_rad_s", i.omega_plus},
                      {"omega_minus_rad_s", i.omega_minus},
                      {"stable", i.stable}});
    j["waypoint_sites"] = info;
  }
  return j;
}

TransportPlan plan_from_json(const Json& j)
{
  TransportPlan plan;
  const Json& w = field(j, "waypoints", "plan");
  const Json& t = field(j, "timestamps_s", "plan");
  if (!w.is_array() || !t.is_array()) throw ParseError("plan: waypoints and timestamps_s must be arrays");
  for (const auto& v : w) plan.waypoints.push_back(voltages_from_json(v));
  for (std::size_t i = 0; i < t.size(); ++i) plan.timestamps.push_back(number(t[i], "plan.timestamps_s"));
  if (j.contains("start_site_m")) plan.start_site = vec_from_json(j["start_site_m"], "plan.start_site_m");
  if (j.contains("end_site_m")) plan.end_site = vec_from_json(j["end_site_m"], "plan.end_site_m");
  if (j.contains("waypoint_sites")) {
    for (const auto& i : j["waypoint_sites"]) {
      WaypointInfo wi;
      wi.site = vec_from_json(field(i, "site_m", "plan.waypoint_sites"), "plan.waypoint_sites.site_m");
      wi.omega_z = number(field(i, "omega_z_rad_s", "plan.waypoint_sites"), "omega_z_rad_s");
      wi.omega_plus = i.value("omega_plus_rad_s", 0.0);
      wi.omega_minus = i.value("omega_minus_rad_s", 0.0);
      wi.stable = i.value("stable", false);
      plan.info.push_back(wi);
    }
  }
  try {
    plan.validate();
  } catch (const InputError& e) {
    throw ParseError(std::string("plan: ") + e.what());
  }
  return plan;
}

Json plan_metrics_to_json(const PlanMetrics& m)
{
  return {{"all_confining", m.all_confining},
          {"monotone", m.monotone},
          {"max_step_voltage_V", m.max_step_voltage},
          {"max_site_step_m", m.max_site_step},
          {"adiabaticity", m.adiabaticity},
          {"omega_ratio_min", m.omega_ratio_min},
          {"omega_ratio_max", m.omega_ratio_max}};
}

Json solve_report_to_json(const SolveReport& r, const std::optional<TrapSite>& achieved)
{
  Json j;
  j["residual_rms_V"] = r.residual_rms;
  j["unconstrained_residual_rms_V"] = r.unconstrained_residual_rms;
  j["offset_V"] = r.offset;
  j["voltage_norm_V"] = r.voltage_norm;
  if (r.achieved_curvature) j["achieved_phi_zz_V_m2"] = *r.achieved_curvature;
  j["active_bounds"] = r.active_bounds;
  j["passes"] = r.passes;
  if (achieved) j["achieved_site"] = site_to_json(*achieved);
  return j;
}

TargetSpec target_from_json(const Json& j, const ParticleSpecies& species)
{
  if (!j.is_object()) throw ParseError("target: expected an object");
  TargetSpec t;
  if (j.contains("center")) {
    Vec3 c = vec_from_json(j["center"], "target.center");
    double f = number(field(j, "omega_z_hz", "target"), "target.omega_z_hz");
    if (!(f > 0.0)) throw InputError("target.omega_z_hz must be positive");
    double frac = j.contains("in_plane_fraction") ? number(j["in_plane_fraction"], "target.in_plane_fraction") : 0.5;
    Vec2 axis(1.0, 0.0);
    if (j.contains("axis")) {
      const Json& a = j["axis"];
      if (!a.is_array() || a.size() != 2) throw ParseError("target.axis: expected [x, y]");
      axis = Vec2(number(a[0], "target.axis"), number(a[1], "target.axis"));
    }
    t = harmonic_target(c, curvature_for_frequency(kTwoPi * f, species), frac, axis);
  } else {
    const Json& pts = field(j, "points", "target");
    const Json& vals = field(j, "values", "target");
    if (!pts.is_array() || !vals.is_array()) throw ParseError("target: points and values must be arrays");
    for (std::size_t i = 0; i < pts.size(); ++i) t.points.push_back(vec_from_json(pts[i], "target.points"));
    for (std::size_t i = 0; i < vals.size(); ++i) t.values.push_back(number(vals[i], "target.values"));
    if (j.contains("weights"))
      for (const auto& w : j["weights"]) t.weights.push_back(number(w, "target.weights"));
    else
      t.weights.assign(t.points.size(), 1.0);
  }
  if (j.contains("free_offset")) {
    if (!j["free_offset"].is_boolean()) throw ParseError("target.free_offset: expected a boolean");
    t.free_offset = j["free_offset"].get<bool>();
  }
  t.validate();
  return t;
}

Json read_json_file(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const Json& j, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

// --- tables ----------------------------------------------------------------------

Table trajectory_table(const Trajectory& t)
{
  Table tab{{"t", "x", "y", "z", "vx", "vy", "vz", "E_kin", "E_pot"}, {}};
  tab.rows.reserve(t.samples.size());
  for (const auto& s : t.samples) {
    const auto& p = s.state.position;
    const auto& v = s.state.velocity;
    tab.rows.push_back({s.state.time, p.x(), p.y(), p.z(), v.x(), v.y(), v.z(), s.kinetic, s.potential});
  }
  return tab;
}

Trajectory trajectory_from_table(const Table& tab)
{
  std::size_t ct = tab.column("t"), cx = tab.column("x"), cy = tab.column("y"), cz = tab.column("z");
  std::size_t cvx = tab.column("vx"), cvy = tab.column("vy"), cvz = tab.column("vz");
  std::size_t ck = tab.column("E_kin"), cp = tab.column("E_pot");
  if (tab.rows.size() < 2) throw InsufficientSamplesError("trajectory needs at least two samples");
  Trajectory t;
  for (const auto& r : tab.rows) {
    TrajectorySample s;
    s.state.time = r[ct];
    s.state.position = Vec3(r[cx], r[cy], r[cz]);
    s.state.velocity = Vec3(r[cvx], r[cvy], r[cvz]);
    s.kinetic = r[ck];
    s.potential = r[cp];
    t.samples.push_back(s);
  }
  t.stride = 1;
  t.dt = (t.samples.back().state.time - t.samples.front().state.time) / static_cast<double>(t.samples.size() - 1);
  for (std::size_t i = 1; i < t.samples.size(); ++i) {
    double step = t.samples[i].state.time - t.samples[i - 1].state.time;
    if (std::abs(step - t.dt) > 1e-6 * t.dt) throw ParseError("trajectory samples are not uniformly spaced");
  }
  return t;
}

Table spectrum_table(const Spectrum& s)
{
  Table tab{{"freq_hz", "amplitude"}, {}};
  tab.rows.reserve(s.frequency.size());
  for (std::size_t k = 0; k < s.frequency.size(); ++k) tab.rows.push_back({s.frequency[k] / kTwoPi, s.amplitude[k]});
  return tab;
}

Table grid_table(const GridSpec& grid, const std::vector<double>& values)
{
  if (values.size() != grid.size()) throw InputError("grid values do not match the grid");
  Table tab{{"x", "y", "z", "phi"}, {}};
  tab.rows.reserve(values.size());
  std::size_t idx = 0;
  for (int i = 0; i < grid.n[0]; ++i)
    for (int j = 0; j < grid.n[1]; ++j)
      for (int k = 0; k < grid.n[2]; ++k) {
        Vec3 p = grid.node(i, j, k);
        tab.rows.push_back({p.x(), p.y(), p.z(), values[idx++]});
      }
  return tab;
}

void save_grid_binary(const std::vector<double>& values, const std::filesystem::path& path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

Table axial_profile(const PotentialModel& model, double x, double y, double z_lo, double z_hi, int n,
                    const ParticleSpecies& species)
{
  if (n < 2 || !(z_hi > z_lo) || !(z_lo > 0.0)) throw InputError("axial profile needs 0 < z_lo < z_hi and n >= 2");
  Table tab{{"z", "phi", "energy_eV"}, {}};
  for (int i = 0; i < n; ++i) {
    double z = z_lo + (z_hi - z_lo) * i / (n - 1);
    double phi = model.potential(Vec3(x, y, z));
    tab.rows.push_back({z, phi, phi * species.charge / constants::elementary_charge});
  }
  return tab;
}

}  // namespace pixeltrap
