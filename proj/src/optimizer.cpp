#include "pixeltrap/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/parallel.hpp"

namespace pixeltrap {

void TargetSpec::validate() const
{
  if (points.empty()) throw InputError("target needs at least one sample point");
  if (values.size() != points.size()) throw InputError("target values and points differ in length");
  if (!weights.empty()) {
    if (weights.size() != points.size()) throw InputError("target weights and points differ in length");
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw InputError("target weights must be nonnegative");
      sum += w;
    }
    if (sum <= 0.0) throw InputError("target weights are all zero");
  }
  for (const auto& p : points)
    if (p.z() <= 0.0) throw InputError("target sample points must lie above the electrode plane");
}

void RegularizationConfig::validate() const
{
  if (lambda < 0.0) throw InputError("lambda must be nonnegative");
  if (!(v_min < v_max)) throw InputError("voltage bounds need min < max");
}

std::vector<Vec3> harmonic_stencil(const Vec3& center, double half_width, double face)
{
  std::vector<Vec3> pts;
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j)
      for (int k = -1; k <= 1; ++k) pts.push_back(center + half_width * Vec3(i, j, k));
  for (int a = 0; a < 3; ++a)
    for (int s : {-1, 1}) {
      Vec3 d = Vec3::Zero();
      d[a] = s * face;
      pts.push_back(center + d);
    }
  return pts;
}

TargetSpec harmonic_target(const Vec3& center, double axial_curvature, double in_plane_fraction, const Vec2& axis)
{
  if (in_plane_fraction < 0.0 || in_plane_fraction > 1.0) throw InputError("in-plane fraction must be in [0, 1]");
  if (axis.norm() == 0.0) throw InputError("well axis must be nonzero");
  TargetSpec t;
  t.points = harmonic_stencil(center);
  Vec2 a = axis.normalized(), b(-a.y(), a.x());
  double czz = axial_curvature, caa = -in_plane_fraction * czz, cbb = -(1.0 - in_plane_fraction) * czz;
  for (const auto& p : t.points) {
    Vec3 d = p - center;
    double da = a.dot(d.head<2>()), db = b.dot(d.head<2>());
    t.values.push_back(0.5 * (czz * d.z() * d.z() + caa * da * da + cbb * db * db));
  }
  t.weights.assign(t.points.size(), 1.0);
  t.center = center;
  t.axial_curvature = axial_curvature;
  return t;
}

double curvature_for_frequency(double omega_z, const ParticleSpecies& species)
{
  return species.mass * omega_z * omega_z / species.charge;
}

namespace {

// All-electrode response at the points: n_points x K.
Eigen::MatrixXd full_response(const ChargeBasis& basis, const std::vector<Vec3>& points)
{
  Eigen::MatrixXd P(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(basis.electrode_count()));
  parallel_for(points.size(), [&](std::size_t i) {
    check_off_conductor(basis, points[i]);
    P.row(static_cast<Eigen::Index>(i)) = electrode_potentials_at(basis, points[i]).transpose();
  });
  return P;
}

}  // namespace

Eigen::MatrixXd response_matrix(const ChargeBasis& basis, const std::vector<Vec3>& points,
                                const std::vector<std::string>& free_electrodes)
{
  std::vector<std::size_t> idx;
  for (const auto& id : free_electrodes) idx.push_back(basis.layout.index_of(id));
  Eigen::MatrixXd P = full_response(basis, points);
  Eigen::MatrixXd A(P.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) A.col(static_cast<Eigen::Index>(k)) = P.col(static_cast<Eigen::Index>(idx[k]));
  return A;
}

ElectrodeGroups ring_groups(const ElectrodeLayout& layout)
{
  std::map<int, std::vector<std::string>> rings;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::pixel)) rings[pixel_ring(layout, i)].push_back(layout.electrodes[i].id);
  ElectrodeGroups out;
  for (auto& [r, ids] : rings) out.push_back(std::move(ids));
  return out;
}

SolveReport solve_voltages(const TargetSpec& target, const RegularizationConfig& reg, const ChargeBasis& basis,
                           const std::vector<std::string>& free_electrodes, const ElectrodeGroups& groups_in)
{
  target.validate();
  reg.validate();
  const auto& layout = basis.layout;
  const std::size_t K = basis.electrode_count();
  for (const auto& [id, v] : reg.fixed) {
    layout.index_of(id);
    if (std::abs(v) > kVoltageSanityBound) throw InputError("fixed voltage on '" + id + "' beyond the sanity bound");
  }
  for (const auto& [id, v] : reg.reference) layout.index_of(id);

  // unknown groups, as electrode indices
  std::vector<std::vector<std::size_t>> groups;
  std::vector<bool> used(K, false);
  auto add_group = [&](const std::vector<std::string>& ids) {
    std::vector<std::size_t> g;
    for (const auto& id : ids) {
      std::size_t k = layout.index_of(id);
      if (reg.fixed.count(id)) throw InputError("electrode '" + id + "' is both fixed and free");
      if (used[k]) throw InputError("electrode '" + id + "' appears in more than one group");
      used[k] = true;
      g.push_back(k);
    }
    if (!g.empty()) groups.push_back(std::move(g));
  };
  if (!groups_in.empty()) {
    for (const auto& g : groups_in) add_group(g);
  } else if (!free_electrodes.empty()) {
    for (const auto& id : free_electrodes) add_group({id});
  } else {
    for (const auto& e : layout.electrodes)
      if (!reg.fixed.count(e.id)) add_group({e.id});
  }
  if (groups.empty()) throw InputError("no free electrodes to optimize");

  const Eigen::Index n = static_cast<Eigen::Index>(target.points.size());
  const Eigen::Index G = static_cast<Eigen::Index>(groups.size());
  Eigen::MatrixXd P = full_response(basis, target.points);
  Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(target.values.data(), n);
  Eigen::VectorXd w = target.weights.empty() ? Eigen::VectorXd::Ones(n)
                                            : Eigen::Map<const Eigen::VectorXd>(target.weights.data(), n).eval();
  Eigen::VectorXd sw = w.cwiseSqrt();

  Eigen::VectorXd v_fixed = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
  for (const auto& [id, v] : reg.fixed) v_fixed(static_cast<Eigen::Index>(layout.index_of(id))) = v;
  Eigen::VectorXd rhs = t - P * v_fixed;

  Eigen::MatrixXd AG(n, G);
  Eigen::VectorXd ref(G), gw(G);
  for (Eigen::Index g = 0; g < G; ++g) {
    AG.col(g).setZero();
    double r = 0.0;
    for (std::size_t k : groups[g]) {
      AG.col(g) += P.col(static_cast<Eigen::Index>(k));
      auto it = reg.reference.find(layout.electrodes[k].id);
      r += it == reg.reference.end() ? 0.0 : it->second;
    }
    ref(g) = r / static_cast<double>(groups[g].size());
    gw(g) = std::sqrt(static_cast<double>(groups[g].size()));
  }

  const int off = target.free_offset ? 1 : 0;
  Eigen::VectorXd u = ref;
  double offset = 0.0;
  std::vector<bool> clamped(G, false);

  // Solves for the unclamped groups with the clamped ones moved to the RHS.
  auto solve = [&]() {
    std::vector<Eigen::Index> freeg;
    for (Eigen::Index g = 0; g < G; ++g)
      if (!clamped[g]) freeg.push_back(g);
    const Eigen::Index m = static_cast<Eigen::Index>(freeg.size());
    Eigen::VectorXd b = rhs;
    for (Eigen::Index g = 0; g < G; ++g)
      if (clamped[g]) b -= AG.col(g) * u(g);
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + m, m + off);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n + m);
    for (Eigen::Index j = 0; j < m; ++j) {
      M.col(j).head(n) = sw.cwiseProduct(AG.col(freeg[j]));
      M(n + j, j) = reg.lambda * gw(freeg[j]);
      y(n + j) = reg.lambda * gw(freeg[j]) * ref(freeg[j]);
    }
    if (off) M.col(m).head(n) = sw;
    y.head(n) = sw.cwiseProduct(b);
    Eigen::VectorXd x = M.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
    for (Eigen::Index j = 0; j < m; ++j) u(freeg[j]) = x(j);
    offset = off ? x(m) : 0.0;
  };
  auto residual_rms = [&]() {
    Eigen::VectorXd r = AG * u + Eigen::VectorXd::Constant(n, offset) - rhs;
    return std::sqrt(r.squaredNorm() / static_cast<double>(n));
  };

  SolveReport rep;
  solve();
  rep.unconstrained_residual_rms = residual_rms();
  rep.passes = 1;
  for (int pass = 1; pass < 20; ++pass) {
    bool changed = false;
    for (Eigen::Index g = 0; g < G; ++g) {
      if (clamped[g]) continue;
      if (u(g) < reg.v_min || u(g) > reg.v_max) {
        u(g) = std::clamp(u(g), reg.v_min, reg.v_max);
        clamped[g] = true;
        changed = true;
      }
    }
    if (!changed) break;
    if (std::all_of(clamped.begin(), clamped.end(), [](bool c) { return c; })) {
      // nothing left to solve; only the offset may move
      if (off) offset = (rhs - AG * u).dot(w) / w.sum();
      ++rep.passes;
      break;
    }
    solve();
    ++rep.passes;
  }
  for (Eigen::Index g = 0; g < G; ++g) u(g) = std::clamp(u(g), reg.v_min, reg.v_max);
  rep.residual_rms = residual_rms();
  double floor = std::max(rep.unconstrained_residual_rms, 1e-9);
  if (rep.residual_rms > 10.0 * floor) {
    std::ostringstream msg;
    msg << "infeasible bounds: clipped residual " << rep.residual_rms << " V exceeds 10x the unconstrained "
        << rep.unconstrained_residual_rms << " V";
    throw InfeasibleBoundsError(msg.str());
  }

  Eigen::VectorXd v = v_fixed;
  double norm2 = 0.0;
  for (Eigen::Index g = 0; g < G; ++g)
    for (std::size_t k : groups[g]) {
      v(static_cast<Eigen::Index>(k)) = u(g);
      norm2 += u(g) * u(g);
      if (clamped[g]) rep.active_bounds.push_back(layout.electrodes[k].id);
    }
  rep.voltage_norm = std::sqrt(norm2);
  rep.offset = offset;
  rep.voltages = voltage_set(basis, v);
  if (target.center) {
    Eigen::VectorXd q = basis.charges * v;
    rep.achieved_curvature = sample_from_charges(basis, q, *target.center, true).hessian(2, 2);
  }
  return rep;
}

// --- transport ---------------------------------------------------------------

void TransportPlan::validate() const
{
  if (waypoints.empty()) throw InputError("transport plan has no waypoints");
  if (timestamps.size() != waypoints.size()) throw InputError("transport plan timestamps and waypoints differ");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1])) throw InputError("transport plan timestamps must increase strictly");
}

VoltageSet TransportPlan::voltages_at(double t) const
{
  if (waypoints.size() == 1 || t <= timestamps.front()) return waypoints.front();
  if (t >= timestamps.back()) return waypoints.back();
  auto it = std::upper_bound(timestamps.begin(), timestamps.end(), t);
  std::size_t i = static_cast<std::size_t>(it - timestamps.begin()) - 1;
  double s = (t - timestamps[i]) / (timestamps[i + 1] - timestamps[i]);
  VoltageSet out = waypoints[i];
  for (auto& [id, v] : out) v *= 1.0 - s;
  for (const auto& [id, v] : waypoints[i + 1]) out[id] += s * v;
  return out;
}

VoltageSet pixel_pattern(const ElectrodeLayout& layout, const std::string& pixel, double v0, double v1, double v2,
                         double v3)
{
  std::size_t c = layout.index_of(pixel);
  if (layout.electrodes[c].group != ElectrodeGroup::pixel) throw InputError("'" + pixel + "' is not a pixel");
  HexCoord hc = pixel_cell(layout, c);
  VoltageSet v;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = layout.electrodes[i];
    if (e.group != ElectrodeGroup::pixel) {
      v[e.id] = 0.0;
      continue;
    }
    int d = hex_distance(hc, pixel_cell(layout, i));
    v[e.id] = d == 0 ? v0 : d == 1 ? v1 : d == 2 ? v2 : v3;
  }
  return v;
}

namespace {

std::vector<std::size_t> pixel_path(const ElectrodeLayout& layout, std::size_t from, std::size_t to)
{
  std::map<std::size_t, std::size_t> parent;
  std::deque<std::size_t> queue{from};
  parent[from] = from;
  while (!queue.empty()) {
    std::size_t cur = queue.front();
    queue.pop_front();
    if (cur == to) break;
    for (std::size_t nb : pixel_neighbours(layout, cur))
      if (!parent.count(nb)) {
        parent[nb] = cur;
        queue.push_back(nb);
      }
  }
  if (!parent.count(to)) throw PathNotFoundError("no adjacency path between the pixels");
  std::vector<std::size_t> path{to};
  while (path.back() != from) path.push_back(parent[path.back()]);
  std::reverse(path.begin(), path.end());
  return path;
}

double max_voltage_step(const VoltageSet& a, const VoltageSet& b)
{
  double m = 0.0;
  for (const auto& [id, v] : a) {
    auto it = b.find(id);
    m = std::max(m, std::abs(v - (it == b.end() ? 0.0 : it->second)));
  }
  for (const auto& [id, v] : b)
    if (!a.count(id)) m = std::max(m, std::abs(v));
  return m;
}

VoltageSet lerp(const VoltageSet& a, const VoltageSet& b, double s)
{
  VoltageSet out;
  for (const auto& [id, v] : a) out[id] = (1.0 - s) * v;
  for (const auto& [id, v] : b) out[id] += s * v;
  return out;
}

WaypointInfo site_info(const ChargeBasis& basis, const VoltageSet& v, const Vec3& seed, const ParticleSpecies& sp,
                       const MagneticField& B)
{
  BemModel model(basis, v);
  SiteOptions opt;
  opt.compute_depth = false;
  TrapSite s;
  try {
    s = characterize_site(model, seed, sp, B, opt);
  } catch (const ComputationError& e) {
    throw ConfinementLostError(std::string("waypoint lost its confining site: ") + e.what());
  }
  if (s.kind != SiteKind::axial_saddle) throw ConfinementLostError("waypoint site is not an axial saddle");
  return {s.position, s.omega_z, s.omega_minus, s.omega_plus, s.stable};
}

// Inserts linear voltage interpolations so that per-electrode steps stay
// below the bound and the site moves at most max_site_step per step.
void densify(std::vector<VoltageSet>& sets, std::vector<WaypointInfo>& info, const ChargeBasis& basis,
             const ParticleSpecies& sp, const MagneticField& B, double max_dv, double max_site_step)
{
  std::vector<VoltageSet> out_sets{sets.front()};
  std::vector<WaypointInfo> out_info{info.front()};
  for (std::size_t i = 0; i + 1 < sets.size(); ++i) {
    int m = std::max(1, static_cast<int>(std::ceil(max_voltage_step(sets[i], sets[i + 1]) / max_dv - 1e-12)));
    for (int attempt = 0; attempt < 6; ++attempt) {
      std::vector<VoltageSet> seg;
      std::vector<WaypointInfo> seg_info;
      Vec3 prev = out_info.back().site;
      bool ok = true;
      for (int j = 1; j <= m; ++j) {
        VoltageSet v = j == m ? sets[i + 1] : lerp(sets[i], sets[i + 1], static_cast<double>(j) / m);
        WaypointInfo wi = j == m ? info[i + 1] : site_info(basis, v, prev, sp, B);
        if ((wi.site - prev).norm() > max_site_step) {
          ok = false;
          break;
        }
        prev = wi.site;
        seg.push_back(std::move(v));
        seg_info.push_back(wi);
      }
      if (ok || attempt == 5) {
        out_sets.insert(out_sets.end(), seg.begin(), seg.end());
        out_info.insert(out_info.end(), seg_info.begin(), seg_info.end());
        break;
      }
      m *= 2;
    }
  }
  sets = std::move(out_sets);
  info = std::move(out_info);
}

// Interval lengths from the adiabaticity contract.
std::vector<double> schedule(const std::vector<WaypointInfo>& info, const TransportOptions& opt)
{
  double wmin = std::numeric_limits<double>::infinity(), wminus = wmin;
  for (const auto& w : info) {
    wmin = std::min({wmin, w.omega_z, w.omega_minus});
    wminus = std::min(wminus, w.omega_minus);
  }
  std::size_t n = info.size() - 1;
  std::vector<double> dt(n), ds(n);
  double dwell = opt.min_interval_periods * 2.0 * constants::pi / wmin;
  for (std::size_t i = 0; i < n; ++i) {
    double dw = std::max(std::abs(info[i + 1].omega_z - info[i].omega_z),
                         std::abs(info[i + 1].omega_minus - info[i].omega_minus));
    dt[i] = std::max(dw / (opt.safety * opt.adiabaticity * wmin * wmin), dwell);
    ds[i] = (info[i + 1].site - info[i].site).norm();
  }
  // A jump dV in site velocity leaves a magnetron circle of about dV / omega_-;
  // ramp the speed so that no waypoint adds more than max_kick.
  if (!(opt.max_kick > 0.0)) throw InputError("max_kick must be positive");
  double dv = wminus * opt.max_kick;
  std::vector<double> cap(n);
  for (std::size_t i = 0; i < n; ++i) cap[i] = ds[i] / dt[i];
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) prev = cap[i] = std::min(cap[i], prev + dv);
  prev = 0.0;
  for (std::size_t i = n; i-- > 0;) prev = cap[i] = std::min(cap[i], prev + dv);
  std::vector<double> t{0.0};
  for (std::size_t i = 0; i < n; ++i) {
    double step = dt[i];
    if (ds[i] > 0.0) step = std::max(step, ds[i] / cap[i]);
    t.push_back(t.back() + step);
  }
  return t;
}

}  // namespace

TransportPlan lateral_transport_plan(const std::string& from_pixel, const std::string& to_pixel, int n_steps,
                                     const ChargeBasis& basis, const ParticleSpecies& species,
                                     const MagneticField& B, const TransportOptions& options)
{
  const auto& layout = basis.layout;
  std::size_t from = layout.index_of(from_pixel), to = layout.index_of(to_pixel);
  if (layout.electrodes[from].group != ElectrodeGroup::pixel || layout.electrodes[to].group != ElectrodeGroup::pixel)
    throw InputError("transport endpoints must be pixels");
  if (n_steps < 3) throw InputError("lateral transport needs at least 3 steps");

  // endpoint wells: the single-pixel pattern on each end
  const double p0 = 1.0, p1 = -2.8, p2 = 1.0, p3 = 3.0;
  VoltageSet v_start = pixel_pattern(layout, from_pixel, p0, p1, p2, p3);
  Vec2 c_from = polygon_centroid(layout.electrodes[from].polygon);
  Vec3 seed(c_from.x(), c_from.y(), 0.55 * layout.circumcircle_diameter);
  WaypointInfo w_start = site_info(basis, v_start, seed, species, B);

  TransportPlan plan;
  plan.start_site = w_start.site;
  if (from == to) {
    plan.waypoints = {v_start};
    plan.timestamps = {0.0};
    plan.end_site = w_start.site;
    plan.info = {w_start};
    return plan;
  }

  VoltageSet v_end = pixel_pattern(layout, to_pixel, p0, p1, p2, p3);
  Vec2 c_to = polygon_centroid(layout.electrodes[to].polygon);
  WaypointInfo w_end = site_info(basis, v_end, Vec3(c_to.x(), c_to.y(), w_start.site.z()), species, B);

  // path polyline through the site positions over each pixel
  std::vector<std::size_t> path = pixel_path(layout, from, to);
  std::vector<Vec2> poly;
  for (std::size_t k : path) poly.push_back(polygon_centroid(layout.electrodes[k].polygon));
  poly.front() = w_start.site.head<2>();
  poly.back() = w_end.site.head<2>();
  std::vector<double> arc{0.0};
  for (std::size_t i = 1; i < poly.size(); ++i) arc.push_back(arc.back() + (poly[i] - poly[i - 1]).norm());
  auto along = [&](double s, Vec2& pos, Vec2& dir) {
    double L = s * arc.back();
    std::size_t i = 0;
    while (i + 2 < poly.size() && arc[i + 1] < L) ++i;
    dir = (poly[i + 1] - poly[i]).normalized();
    double f = (L - arc[i]) / (arc[i + 1] - arc[i]);
    pos = poly[i] + std::clamp(f, 0.0, 1.0) * (poly[i + 1] - poly[i]);
  };

  double czz = BemModel(basis, v_start).sample(w_start.site, true).hessian(2, 2);
  double height = 0.5 * (w_start.site.z() + w_end.site.z());
  RegularizationConfig reg;
  reg.lambda = options.lambda;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::guard_quadrant)) reg.fixed[layout.electrodes[i].id] = 0.0;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::outer_segment)) reg.fixed[layout.electrodes[i].id] = 0.0;

  const int n1 = std::max(1, n_steps / 3), n2 = std::max(n1 + 1, (2 * n_steps) / 3);
  std::vector<VoltageSet> keys{v_start};
  std::vector<WaypointInfo> info{w_start};
  for (int i = 1; i < n_steps; ++i) {
    Vec2 pos, dir;
    double frac;
    if (i <= n1) {
      along(0.0, pos, dir);
      double s = static_cast<double>(i) / n1;
      frac = 0.5 + s * (options.elongation - 0.5);
    } else if (i <= n2) {
      along(static_cast<double>(i - n1) / (n2 - n1), pos, dir);
      frac = options.elongation;
    } else {
      along(1.0, pos, dir);
      double s = static_cast<double>(i - n2) / (n_steps - n2);
      frac = options.elongation + s * (0.5 - options.elongation);
    }
    Vec3 c(pos.x(), pos.y(), height);
    reg.reference = keys.back();
    for (const auto& [id, v] : reg.fixed) reg.reference.erase(id);
    SolveReport r = solve_voltages(harmonic_target(c, czz, frac, dir), reg, basis);
    WaypointInfo wi = site_info(basis, r.voltages, info.back().site, species, B);
    keys.push_back(std::move(r.voltages));
    info.push_back(wi);
  }
  keys.push_back(v_end);
  info.push_back(w_end);

  double pitch = std::sqrt(3.0) * 0.5 * layout.circumcircle_diameter;
  densify(keys, info, basis, species, B, options.max_step_voltage, 0.25 * pitch);
  plan.waypoints = std::move(keys);
  plan.info = std::move(info);
  plan.timestamps = schedule(plan.info, options);
  plan.end_site = w_end.site;
  return plan;
}

TransportPlan vertical_transport_plan(const std::vector<double>& heights_in, const ChargeBasis& basis,
                                      const ParticleSpecies& species, const MagneticField& B,
                                      double omega_z_target, const TransportOptions& options)
{
  if (heights_in.empty()) throw InputError("vertical transport needs at least one height");
  const auto& layout = basis.layout;
  double R = layout.pixel_array_radius();
  double lo = 0.05 * R, hi = 2.0 * R;
  std::vector<double> heights = heights_in;
  std::sort(heights.begin(), heights.end());
  for (double h : heights)
    if (h < lo || h > hi) {
      std::ostringstream msg;
      msg << "unreachable height " << h << " m; achievable range is [" << lo << ", " << hi << "] m";
      throw UnreachableHeightError(msg.str());
    }
  RegularizationConfig reg;
  reg.lambda = options.lambda;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::guard_quadrant)) reg.fixed[layout.electrodes[i].id] = 0.0;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::outer_segment)) reg.fixed[layout.electrodes[i].id] = 0.0;
  ElectrodeGroups groups = ring_groups(layout);
  double czz = curvature_for_frequency(omega_z_target, species);

  TransportPlan plan;
  for (double h : heights) {
    Vec3 c(0, 0, h);
    SolveReport r = solve_voltages(harmonic_target(c, czz), reg, basis, {}, groups);
    WaypointInfo wi;
    try {
      wi = site_info(basis, r.voltages, c, species, B);
    } catch (const ConfinementLostError& e) {
      throw UnreachableHeightError("no confining site near height " + std::to_string(h) + " m: " + e.what());
    }
    if (std::abs(wi.site.z() - h) > 0.05 * h) {
      std::ostringstream msg;
      msg << "height " << h << " m not reached (site at " << wi.site.z() << " m); achievable range is [" << lo
          << ", " << hi << "] m";
      throw UnreachableHeightError(msg.str());
    }
    plan.waypoints.push_back(std::move(r.voltages));
    plan.info.push_back(wi);
  }
  plan.timestamps = schedule(plan.info, options);
  plan.start_site = plan.info.front().site;
  plan.end_site = plan.info.back().site;
  return plan;
}

PlanMetrics plan_metrics(const TransportPlan& plan)
{
  constexpr double kMonotoneTolerance = 0.5e-6;
  PlanMetrics m;
  if (plan.info.empty()) return m;
  double w0 = plan.info.front().omega_z;
  m.omega_ratio_min = m.omega_ratio_max = 1.0;
  double wmin = std::numeric_limits<double>::infinity();
  for (const auto& w : plan.info) {
    if (!(w.omega_z > 0.0)) m.all_confining = false;
    wmin = std::min({wmin, w.omega_z, w.omega_minus});
    m.omega_ratio_min = std::min(m.omega_ratio_min, w.omega_z / w0);
    m.omega_ratio_max = std::max(m.omega_ratio_max, w.omega_z / w0);
  }
  Vec3 dir = plan.end_site - plan.start_site;
  double prev_proj = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < plan.info.size(); ++i) {
    double proj = dir.norm() > 0 ? (plan.info[i].site - plan.start_site).dot(dir.normalized()) : 0.0;
    // sub-micron back-steps are site-finder jitter on a held well
    if (proj < prev_proj - kMonotoneTolerance) m.monotone = false;
    prev_proj = proj;
    if (i == 0) continue;
    m.max_step_voltage = std::max(m.max_step_voltage, max_voltage_step(plan.waypoints[i - 1], plan.waypoints[i]));
    m.max_site_step = std::max(m.max_site_step, (plan.info[i].site - plan.info[i - 1].site).norm());
    double dt = plan.timestamps[i] - plan.timestamps[i - 1];
    double dw = std::max(std::abs(plan.info[i].omega_z - plan.info[i - 1].omega_z),
                         std::abs(plan.info[i].omega_minus - plan.info[i - 1].omega_minus));
    m.adiabaticity = std::max(m.adiabaticity, dw / dt / (wmin * wmin));
  }
  return m;
}

// --- crystals and racetracks -------------------------------------------------------

namespace {

std::optional<double> axial_seed(const PotentialModel& model, const Vec2& xy, double charge, double z_top)
{
  // walk up until the axial force on the species changes from repulsive to restoring
  double prev = 0.0;
  for (double z = 10e-6; z < z_top; z += 5e-6) {
    double f = charge * model.sample(Vec3(xy.x(), xy.y(), z), false).field.z();
    if (z > 10e-6 && prev > 0.0 && f < 0.0) return z - 2.5e-6;
    prev = f;
  }
  return std::nullopt;
}

}  // namespace

CrystalResult crystal_voltages(int n_sites, double ring_radius, const ChargeBasis& basis,
                               const ParticleSpecies& species, const MagneticField& B, bool with_depth, double v_site,
                               double v_neighbour, double v_rest)
{
  if (n_sites < 2) throw InputError("a crystal needs at least two sites");
  const auto& layout = basis.layout;
  if (ring_radius <= 0.0 || ring_radius > layout.pixel_array_radius())
    throw InputError("crystal ring radius must lie within the pixel array");
  auto pixels = layout.indices_of(ElectrodeGroup::pixel);
  std::vector<Vec2> centers;
  for (std::size_t i : pixels) centers.push_back(polygon_centroid(layout.electrodes[i].polygon));
  std::set<std::size_t> site_px, nb_px;
  std::vector<Vec2> anchors;
  for (int k = 0; k < n_sites; ++k) {
    double th = 2.0 * constants::pi * k / n_sites;
    Vec2 a(ring_radius * std::cos(th), ring_radius * std::sin(th));
    anchors.push_back(a);
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < pixels.size(); ++j) d.push_back({(centers[j] - a).norm(), pixels[j]});
    // round distances so lattice-symmetric ties resolve by index
    for (auto& [dist, idx] : d) dist = std::round(dist * 1e9) / 1e9;
    std::sort(d.begin(), d.end());
    for (int j = 0; j < 3 && j < static_cast<int>(d.size()); ++j) site_px.insert(d[j].second);
  }
  for (std::size_t i : site_px)
    for (std::size_t j : pixel_neighbours(layout, i))
      if (!site_px.count(j)) nb_px.insert(j);

  CrystalResult out;
  for (const auto& e : layout.electrodes) out.voltages[e.id] = e.group == ElectrodeGroup::pixel ? v_rest : 0.0;
  for (std::size_t i : nb_px) out.voltages[layout.electrodes[i].id] = v_neighbour;
  for (std::size_t i : site_px) out.voltages[layout.electrodes[i].id] = v_site;

  BemModel model(basis, out.voltages);
  SiteOptions opt;
  opt.compute_depth = with_depth;
  for (const auto& a : anchors) {
    auto z = axial_seed(model, a, species.charge, 4.0 * layout.circumcircle_diameter * 2.0);
    if (!z) throw ConfinementLostError("no axial minimum above a crystal site");
    TrapSite s = characterize_site(model, Vec3(a.x(), a.y(), *z), species, B, opt);
    for (const auto& prev : out.sites)
      if ((prev.position - s.position).norm() < 5e-6) throw SitesMergeError("crystal sites coalesce");
    out.sites.push_back(std::move(s));
  }
  return out;
}

std::vector<RayCrest> ridge_crests(const BemModel& model, const ParticleSpecies& species, double rho_guess,
                                   double z_guess, int n_rays)
{
  if (n_rays < 1) throw InputError("need at least one ray");
  std::vector<RayCrest> out(static_cast<std::size_t>(n_rays));
  std::vector<std::string> failures(out.size());
  parallel_for(out.size(), [&](std::size_t r) {
    double phi = 2.0 * constants::pi * static_cast<double>(r) / n_rays;
    Vec3 er(std::cos(phi), std::sin(phi), 0.0), ez(0, 0, 1);
    double rho = rho_guess, z = z_guess;
    for (int it = 0; it < 100; ++it) {
      Vec3 p = rho * er + z * ez;
      FieldSample s = model.sample(p, true);
      Eigen::Vector2d g(-s.field.dot(er), -s.field.z());
      Eigen::Matrix2d H;
      H << er.dot(s.hessian * er), er.dot(s.hessian * ez), ez.dot(s.hessian * er), s.hessian(2, 2);
      if (g.norm() <= 1e-6) {
        double qrr = species.charge * H(0, 0), qzz = species.charge * H(1, 1);
        if (!(qrr < 0.0 && qzz > 0.0)) {
          failures[r] = "stationary point on ray is not a radial crest";
          return;
        }
        out[r] = {phi, rho, z, std::sqrt(qzz / species.mass)};
        return;
      }
      Eigen::Vector2d step = -H.fullPivLu().solve(g);
      double cap = 0.25 * z;
      if (step.norm() > cap) step *= cap / step.norm();
      rho += step(0);
      z += step(1);
      if (z <= 0.0 || rho <= 0.0) {
        failures[r] = "crest search left the half-plane";
        return;
      }
    }
    failures[r] = "crest search did not converge";
  });
  for (std::size_t r = 0; r < out.size(); ++r)
    if (!failures[r].empty()) {
      std::ostringstream msg;
      msg << "ridge broken at azimuth " << 360.0 * r / n_rays << " deg: " << failures[r];
      throw RidgeBrokenError(msg.str());
    }
  return out;
}

RacetrackResult racetrack_voltages(double ring_diameter, const ChargeBasis& basis, const ParticleSpecies& species,
                                   const RacetrackOptions& options)
{
  const auto& layout = basis.layout;
  double rho0 = 0.5 * ring_diameter;
  if (rho0 <= 0.0 || rho0 > layout.pixel_array_radius()) throw InputError("racetrack must lie within the pixel array");
  double czz = curvature_for_frequency(options.omega_z, species);

  // cross-section targets around the ring: in (rho, z) the well is a 2D
  // saddle, flat along the track
  TargetSpec t;
  const double hw = 30e-6, face = 60e-6;
  for (int a = 0; a < options.n_azimuth_samples; ++a) {
    double phi = 2.0 * constants::pi * (a + 0.5) / options.n_azimuth_samples;
    Vec3 er(std::cos(phi), std::sin(phi), 0.0);
    std::vector<Eigen::Vector2d> offs;
    for (int i = -1; i <= 1; ++i)
      for (int k = -1; k <= 1; ++k) offs.emplace_back(i * hw, k * hw);
    offs.emplace_back(face, 0);
    offs.emplace_back(-face, 0);
    offs.emplace_back(0, face);
    offs.emplace_back(0, -face);
    for (const auto& o : offs) {
      t.points.push_back((rho0 + o.x()) * er + Vec3(0, 0, options.height + o.y()));
      t.values.push_back(0.5 * czz * (o.y() * o.y() - o.x() * o.x()));
    }
  }
  t.weights.assign(t.points.size(), 1.0);

  RegularizationConfig reg;
  reg.lambda = options.lambda;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::guard_quadrant)) reg.fixed[layout.electrodes[i].id] = 0.0;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::outer_segment)) reg.fixed[layout.electrodes[i].id] = 0.0;
  // ring-symmetric ansatz, then every pixel on its own, pulled toward the ansatz
  SolveReport ring = solve_voltages(t, reg, basis, {}, ring_groups(layout));
  reg.reference = ring.voltages;
  for (const auto& [id, v] : reg.fixed) reg.reference.erase(id);
  SolveReport fine = solve_voltages(t, reg, basis);

  RacetrackResult out;
  out.voltages = fine.voltages;
  BemModel model(basis, out.voltages);
  out.crests = ridge_crests(model, species, rho0, options.height, options.n_rays);
  double wmin = 1e300, wmax = 0.0, wsum = 0.0, rsum = 0.0;
  for (const auto& c : out.crests) {
    rsum += c.radius;
    wsum += c.omega_z;
    wmin = std::min(wmin, c.omega_z);
    wmax = std::max(wmax, c.omega_z);
  }
  out.mean_radius = rsum / out.crests.size();
  out.omega_z_variation = (wmax - wmin) / (wsum / out.crests.size());
  return out;
}

}  // namespace pixeltrap
