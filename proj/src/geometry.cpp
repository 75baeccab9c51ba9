#include "pixeltrap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"

namespace pixeltrap {

using nlohmann::json;
using constants::pi;

namespace {

std::uint64_t fnv1a(const std::string& text, std::uint64_t h = 1469598103934665603ull)
{
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

constexpr std::array<HexCoord, 6> kHexDirections{{{1, 0}, {0, 1}, {-1, 1}, {-1, 0}, {0, -1}, {1, -1}}};

// Arcs are sampled finely enough that the chord sagitta stays below this.
constexpr double kArcSagitta = 0.5e-9;

std::vector<Vec2> sample_arc(double r, double phi0, double phi1)
{
  double span = std::abs(phi1 - phi0);
  double dphi = std::sqrt(8.0 * kArcSagitta / r);
  int n = std::clamp(static_cast<int>(std::ceil(span / dphi)), 4, 8192);
  std::vector<Vec2> pts;
  pts.reserve(n + 1);
  for (int i = 0; i <= n; ++i) {
    double phi = phi0 + (phi1 - phi0) * static_cast<double>(i) / n;
    pts.emplace_back(r * std::cos(phi), r * std::sin(phi));
  }
  return pts;
}

/// Annulus segment between r_in and r_out centred on `center`, cut by
/// straight lines offset gap/2 from the radial lines at center +- half.
std::vector<Vec2> sector_polygon(double r_in, double r_out, double center, double half, double gap)
{
  auto lo = [&](double r) { return center - half + std::asin(0.5 * gap / r); };
  auto hi = [&](double r) { return center + half - std::asin(0.5 * gap / r); };
  std::vector<Vec2> poly = sample_arc(r_out, lo(r_out), hi(r_out));
  std::vector<Vec2> inner = sample_arc(r_in, hi(r_in), lo(r_in));
  poly.insert(poly.end(), inner.begin(), inner.end());
  return poly;
}

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b)
{
  Vec2 ab = b - a;
  double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d)
{
  double d1 = cross2(b - a, c - a);
  double d2 = cross2(b - a, d - a);
  double d3 = cross2(d - c, a - c);
  double d4 = cross2(d - c, b - c);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

}  // namespace

std::string to_string(ElectrodeGroup group)
{
  switch (group) {
    case ElectrodeGroup::pixel: return "pixel";
    case ElectrodeGroup::guard_quadrant: return "guard_quadrant";
    case ElectrodeGroup::outer_segment: return "outer_segment";
  }
  return "pixel";
}

ElectrodeGroup group_from_string(const std::string& name)
{
  if (name == "pixel") return ElectrodeGroup::pixel;
  if (name == "guard_quadrant") return ElectrodeGroup::guard_quadrant;
  if (name == "outer_segment") return ElectrodeGroup::outer_segment;
  throw ParseError("unknown electrode group '" + name + "'");
}

// --- ElectrodeLayout ----------------------------------------------------------

std::optional<std::size_t> ElectrodeLayout::find(const std::string& id) const
{
  for (std::size_t i = 0; i < electrodes.size(); ++i)
    if (electrodes[i].id == id) return i;
  return std::nullopt;
}

std::size_t ElectrodeLayout::index_of(const std::string& id) const
{
  if (auto i = find(id)) return *i;
  throw UnknownElectrodeError("unknown electrode id '" + id + "'");
}

std::vector<std::string> ElectrodeLayout::ids() const
{
  std::vector<std::string> out;
  out.reserve(electrodes.size());
  for (const auto& e : electrodes) out.push_back(e.id);
  return out;
}

std::vector<std::size_t> ElectrodeLayout::indices_of(ElectrodeGroup group) const
{
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < electrodes.size(); ++i)
    if (electrodes[i].group == group) out.push_back(i);
  return out;
}

double ElectrodeLayout::pixel_array_radius() const
{
  double r = 0.0;
  for (const auto& e : electrodes)
    if (e.group == ElectrodeGroup::pixel)
      for (const auto& v : e.polygon) r = std::max(r, v.norm());
  return r;
}

double ElectrodeLayout::outer_radius() const
{
  double r = 0.0;
  for (const auto& e : electrodes)
    for (const auto& v : e.polygon) r = std::max(r, v.norm());
  return r;
}

std::uint64_t ElectrodeLayout::hash() const { return fnv1a(layout_to_json(*this)); }

// --- hex lattice ------------------------------------------------------------

int hex_distance(HexCoord a, HexCoord b)
{
  int dq = a.q - b.q;
  int dr = a.r - b.r;
  return (std::abs(dq) + std::abs(dr) + std::abs(dq + dr)) / 2;
}

Vec2 hex_center(HexCoord c, double circumradius)
{
  return {1.5 * circumradius * c.q, std::sqrt(3.0) * circumradius * (c.r + 0.5 * c.q)};
}

HexCoord hex_round(const Vec2& p, double circumradius)
{
  double qf = p.x() / (1.5 * circumradius);
  double rf = p.y() / (std::sqrt(3.0) * circumradius) - 0.5 * qf;
  double sf = -qf - rf;
  double q = std::round(qf), r = std::round(rf), s = std::round(sf);
  double dq = std::abs(q - qf), dr = std::abs(r - rf), ds = std::abs(s - sf);
  if (dq > dr && dq > ds)
    q = -r - s;
  else if (dr > ds)
    r = -q - s;
  return {static_cast<int>(q), static_cast<int>(r)};
}

std::vector<HexCoord> hex_ring(int ring)
{
  if (ring == 0) return {{0, 0}};
  std::vector<HexCoord> cells;
  HexCoord c{kHexDirections[0].q * ring, kHexDirections[0].r * ring};
  for (int side = 0; side < 6; ++side) {
    HexCoord d = kHexDirections[(side + 2) % 6];
    for (int k = 0; k < ring; ++k) {
      cells.push_back(c);
      c.q += d.q;
      c.r += d.r;
    }
  }
  return cells;
}

double pixel_array_radius(int n_rings, double circumcircle_diameter, double gap_width)
{
  double R = 0.5 * circumcircle_diameter;
  double Rs = R - gap_width / std::sqrt(3.0);
  double best = 0.0;
  for (int ring = 0; ring <= n_rings; ++ring)
    for (HexCoord c : hex_ring(ring)) {
      Vec2 ctr = hex_center(c, R);
      for (int k = 0; k < 6; ++k)
        best = std::max(best, (ctr + Rs * Vec2(std::cos(k * pi / 3), std::sin(k * pi / 3))).norm());
    }
  return best;
}

ElectrodeLayout build_pixel_layout(int n_rings, double d, double gap, double guard_inner, double guard_outer,
                                   double plane_outer)
{
  if (n_rings < 0) throw InputError("n_rings must be >= 0");
  if (!(d > 0.0)) throw InputError("circumcircle diameter must be positive");
  if (!(gap > 0.0 && gap < d / 4.0)) throw InputError("gap width must lie in (0, d/4)");
  double array_r = pixel_array_radius(n_rings, d, gap);
  if (!(guard_inner > array_r + gap))
    throw GeometryConflictError("guard annulus (inner radius " + std::to_string(guard_inner) +
                                " m) overlaps the pixel array (outer radius " + std::to_string(array_r) + " m)");
  if (!(guard_outer > guard_inner + gap)) throw GeometryConflictError("guard outer radius must exceed inner radius");
  if (!(plane_outer > guard_outer + 2.0 * gap))
    throw GeometryConflictError("outer plane radius must exceed the guard outer radius");

  ElectrodeLayout layout;
  layout.circumcircle_diameter = d;
  layout.gap_width = gap;
  layout.n_pixel_rings = n_rings;

  double R = 0.5 * d;
  double Rs = R - gap / std::sqrt(3.0);
  for (int ring = 0; ring <= n_rings; ++ring) {
    auto cells = hex_ring(ring);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      Electrode e;
      e.id = "px" + std::to_string(ring) + "_" + std::to_string(k);
      e.group = ElectrodeGroup::pixel;
      Vec2 ctr = hex_center(cells[k], R);
      for (int v = 0; v < 6; ++v) e.polygon.push_back(ctr + Rs * Vec2(std::cos(v * pi / 3), std::sin(v * pi / 3)));
      layout.electrodes.push_back(std::move(e));
    }
  }
  double seg_inner = guard_outer + gap;
  for (int k = 0; k < 4; ++k) {
    Electrode e;
    e.id = "guard" + std::to_string(k);
    e.group = ElectrodeGroup::guard_quadrant;
    e.polygon = sector_polygon(guard_inner, guard_outer, k * pi / 2, pi / 4, gap);
    layout.electrodes.push_back(std::move(e));
  }
  for (int k = 0; k < 4; ++k) {
    Electrode e;
    e.id = "outer" + std::to_string(k);
    e.group = ElectrodeGroup::outer_segment;
    e.polygon = sector_polygon(seg_inner, plane_outer, k * pi / 2, pi / 4, gap);
    layout.electrodes.push_back(std::move(e));
  }
  return layout;
}

ElectrodeLayout build_pixel_layout(const LayoutParams& p)
{
  double array_r = pixel_array_radius(p.n_rings, p.circumcircle_diameter, p.gap_width);
  double gi = p.guard_inner_radius.value_or(1.05 * array_r);
  double go = p.guard_outer_radius.value_or(2.0 * gi);
  double po = p.plane_outer_radius.value_or(2.0 * go);
  return build_pixel_layout(p.n_rings, p.circumcircle_diameter, p.gap_width, gi, go, po);
}

HexCoord pixel_cell(const ElectrodeLayout& layout, std::size_t electrode)
{
  const auto& e = layout.electrodes.at(electrode);
  if (e.group != ElectrodeGroup::pixel) throw InputError("electrode '" + e.id + "' is not a pixel");
  return hex_round(polygon_centroid(e.polygon), 0.5 * layout.circumcircle_diameter);
}

int pixel_ring(const ElectrodeLayout& layout, std::size_t electrode)
{
  return hex_distance(pixel_cell(layout, electrode), {0, 0});
}

std::vector<std::size_t> pixel_neighbours(const ElectrodeLayout& layout, std::size_t electrode)
{
  HexCoord c = pixel_cell(layout, electrode);
  std::vector<std::size_t> out;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::pixel))
    if (i != electrode && hex_distance(pixel_cell(layout, i), c) == 1) out.push_back(i);
  return out;
}

std::size_t nearest_pixel(const ElectrodeLayout& layout, const Vec2& p)
{
  std::size_t best = layout.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i : layout.indices_of(ElectrodeGroup::pixel)) {
    double d = (polygon_centroid(layout.electrodes[i].polygon) - p).norm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best == layout.size()) throw InputError("layout has no pixel electrodes");
  return best;
}

// --- polygons ------------------------------------------------------------------

double polygon_signed_area(std::span<const Vec2> poly)
{
  double a = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) a += cross2(poly[i], poly[(i + 1) % n]);
  return 0.5 * a;
}

Vec2 polygon_centroid(std::span<const Vec2> poly)
{
  // Shift to the first vertex to keep the shoelace sums well conditioned.
  Vec2 o = poly[0];
  double a = 0.0;
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    Vec2 p = poly[i] - o, q = poly[(i + 1) % n] - o;
    double w = cross2(p, q);
    a += w;
    c += w * (p + q);
  }
  return o + c / (3.0 * a);
}

bool point_in_polygon(std::span<const Vec2> poly, const Vec2& p)
{
  bool inside = false;
  for (std::size_t i = 0, n = poly.size(), j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

bool polygon_is_convex(std::span<const Vec2> poly)
{
  std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    const Vec2& c = poly[(i + 2) % n];
    if (cross2(b - a, c - b) <= 0.0) return false;
  }
  return true;
}

bool polygon_is_simple(std::span<const Vec2> poly)
{
  std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  return true;
}

double polygon_separation(std::span<const Vec2> a, std::span<const Vec2> b)
{
  double best = std::numeric_limits<double>::infinity();
  auto sweep = [&](std::span<const Vec2> pts, std::span<const Vec2> poly) {
    for (const auto& p : pts)
      for (std::size_t i = 0, n = poly.size(); i < n; ++i)
        best = std::min(best, point_segment_distance(p, poly[i], poly[(i + 1) % n]));
  };
  sweep(a, b);
  sweep(b, a);
  return best;
}

// --- panels --------------------------------------------------------------------

Panel make_panel(std::span<const Vec2> v, const std::string& electrode_id, std::size_t electrode)
{
  if (v.size() != 3 && v.size() != 4) throw DegeneratePanelError("panel must have 3 or 4 vertices");
  Panel p;
  p.n_vertices = static_cast<int>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) p.vertices[i] = Vec3(v[i].x(), v[i].y(), 0.0);
  double area = polygon_signed_area(v);
  double scale = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) scale = std::max(scale, (v[i] - v[j]).norm());
  if (!(area > 1e-12 * scale * scale)) throw DegeneratePanelError("panel of electrode '" + electrode_id + "' has zero area");
  Vec2 c = polygon_centroid(v);
  // second moments about the centroid via the polygon moment sums
  double ixx = 0.0, ixy = 0.0, iyy = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) {
    Vec2 a = v[i] - c, b = v[(i + 1) % n] - c;
    double w = cross2(a, b);
    ixx += w * (a.x() * a.x() + a.x() * b.x() + b.x() * b.x());
    iyy += w * (a.y() * a.y() + a.y() * b.y() + b.y() * b.y());
    ixy += w * (a.x() * b.y() + 2.0 * a.x() * a.y() + 2.0 * b.x() * b.y() + b.x() * a.y());
  }
  p.area = area;
  p.centroid = Vec3(c.x(), c.y(), 0.0);
  p.diameter = scale;
  p.mxx = ixx / 12.0 / area;
  p.myy = iyy / 12.0 / area;
  p.mxy = ixy / 24.0 / area;
  if (v.size() == 4) {
    const std::array<double, 3> gx{0.5 - 0.5 * std::sqrt(0.6), 0.5, 0.5 + 0.5 * std::sqrt(0.6)};
    const std::array<double, 3> gw{5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    double total = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double u = gx[i], w = gx[j];
        Vec2 x = ((1 - u) * (1 - w)) * v[0] + (u * (1 - w)) * v[1] + (u * w) * v[2] + ((1 - u) * w) * v[3];
        Vec2 du = (1 - w) * (v[1] - v[0]) + w * (v[2] - v[3]);
        Vec2 dw = (1 - u) * (v[3] - v[0]) + u * (v[2] - v[1]);
        double wt = gw[i] * gw[j] * cross2(du, dw);
        p.nodes[i * 3 + j] = x;
        p.weights[i * 3 + j] = wt;
        total += wt;
      }
    for (int k = 0; k < 9; ++k) p.weights[k] /= total;
    p.n_nodes = 9;
  } else {
    // 7-point degree-5 rule on the triangle
    const std::array<std::array<double, 3>, 3> orbit{{{1.0 / 3.0, 1.0 / 3.0, 0.225},
                                                     {0.059715871789770, 0.470142064105115, 0.132394152788506},
                                                     {0.797426985353087, 0.101286507323456, 0.125939180544827}}};
    p.nodes[0] = (v[0] + v[1] + v[2]) / 3.0;
    p.weights[0] = orbit[0][2];
    int k = 1;
    for (int o = 1; o < 3; ++o) {
      double a = orbit[o][0], b = orbit[o][1];
      p.nodes[k] = a * v[0] + b * v[1] + b * v[2];
      p.nodes[k + 1] = b * v[0] + a * v[1] + b * v[2];
      p.nodes[k + 2] = b * v[0] + b * v[1] + a * v[2];
      for (int t = 0; t < 3; ++t) p.weights[k + t] = orbit[o][2];
      k += 3;
    }
    p.n_nodes = 7;
  }
  p.electrode_id = electrode_id;
  p.electrode = electrode;
  return p;
}

std::uint64_t PanelMesh::hash() const { return fnv1a(mesh_to_json(*this)); }

std::vector<double> graded_partition(int m, bool refine_low, bool refine_high)
{
  int ends = (refine_low ? 1 : 0) + (refine_high ? 1 : 0);
  std::vector<double> widths;
  if (ends == 0 || m < 4 * ends + 1) {
    widths.assign(m, 1.0 / m);
  } else {
    double h = 1.0 / ((m - 4 * ends) + 1.5 * ends);
    const std::array<double, 4> edge{0.25, 0.25, 0.5, 0.5};
    if (refine_low)
      for (double f : edge) widths.push_back(f * h);
    for (int i = 0; i < m - 4 * ends; ++i) widths.push_back(h);
    if (refine_high)
      for (auto it = edge.rbegin(); it != edge.rend(); ++it) widths.push_back(*it * h);
  }
  std::vector<double> nodes(1, 0.0);
  for (double w : widths) nodes.push_back(nodes.back() + w);
  nodes.back() = 1.0;
  return nodes;
}

namespace {

// A quadrilateral patch mapped from the unit square.
struct Patch {
  std::function<Vec2(double, double)> map;
  bool grade_u_lo = false, grade_u_hi = false, grade_v_lo = false, grade_v_hi = false;
  // preferred aspect (cells along u per cell along v)
  double aspect = 1.0;
  int min_v = 1;     // minimum cells along v
  bool square = true; // kite patches use m x m
};

struct Decomposition {
  std::vector<Patch> patches;
  double weight = 0.0;
};

double density(double r, double ell) { return 1.0 / ((1.0 + r / ell) * (1.0 + r / ell)); }

Decomposition decompose_convex(std::span<const Vec2> poly, double ell)
{
  Decomposition d;
  Vec2 c = polygon_centroid(poly);
  std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 v = poly[i];
    Vec2 m_prev = 0.5 * (poly[(i + n - 1) % n] + v);
    Vec2 m_next = 0.5 * (v + poly[(i + 1) % n]);
    Patch p;
    p.map = [c, m_prev, v, m_next](double u, double w) {
      return ((1 - u) * (1 - w)) * c + (u * (1 - w)) * m_prev + (u * w) * v + ((1 - u) * w) * m_next;
    };
    p.grade_u_hi = p.grade_v_hi = true;
    d.patches.push_back(std::move(p));
  }
  d.weight = std::abs(polygon_signed_area(poly)) * density(c.norm(), ell);
  return d;
}

std::optional<Decomposition> decompose_sector(std::span<const Vec2> poly, double ell)
{
  std::size_t n = poly.size();
  double r_in = std::numeric_limits<double>::infinity(), r_out = 0.0;
  for (const auto& v : poly) {
    r_in = std::min(r_in, v.norm());
    r_out = std::max(r_out, v.norm());
  }
  if (!(r_out > r_in) || r_in <= 0.0) return std::nullopt;
  double tol = 1e-9 * r_out;
  std::vector<int> cls(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = poly[i].norm();
    if (std::abs(r - r_in) <= tol)
      cls[i] = 0;
    else if (std::abs(r - r_out) <= tol)
      cls[i] = 1;
    else
      return std::nullopt;
  }
  // corners: transitions between the outer and inner arcs
  std::optional<std::size_t> out_end, in_end;
  int transitions = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = (i + 1) % n;
    if (cls[i] != cls[j]) {
      ++transitions;
      if (cls[i] == 1)
        out_end = i;
      else
        in_end = i;
    }
  }
  if (transitions != 2 || !out_end || !in_end) return std::nullopt;
  Vec2 b_out = poly[*out_end], b_in = poly[(*out_end + 1) % n];
  Vec2 a_in = poly[*in_end], a_out = poly[(*in_end + 1) % n];

  // intersection of circle |p| = r with segment from s0 to s1
  auto on_cut = [](const Vec2& s0, const Vec2& s1, double r) {
    Vec2 dir = s1 - s0;
    double A = dir.squaredNorm(), B = 2.0 * s0.dot(dir), C = s0.squaredNorm() - r * r;
    double disc = std::max(0.0, B * B - 4 * A * C);
    double t = (-B + std::sqrt(disc)) / (2 * A);
    if (t < -1e-9 || t > 1 + 1e-9) t = (-B - std::sqrt(disc)) / (2 * A);
    Vec2 p = s0 + std::clamp(t, 0.0, 1.0) * dir;
    return std::atan2(p.y(), p.x());
  };
  auto span_at = [=](double r) {
    double lo = on_cut(a_in, a_out, r);
    double hi = on_cut(b_in, b_out, r);
    while (hi <= lo) hi += 2 * pi;
    return std::pair{lo, hi};
  };
  Decomposition d;
  Patch p;
  p.map = [=](double u, double w) {
    double r = r_in + u * (r_out - r_in);
    auto [lo, hi] = span_at(r);
    double phi = lo + w * (hi - lo);
    return Vec2(r * std::cos(phi), r * std::sin(phi));
  };
  p.grade_u_lo = p.grade_u_hi = p.grade_v_lo = p.grade_v_hi = true;
  p.square = false;
  double r_mid = 0.5 * (r_in + r_out);
  auto [lo_mid, hi_mid] = span_at(r_mid);
  double span = hi_mid - lo_mid;
  p.aspect = (r_out - r_in) / (r_mid * span);
  // interior angular cells no wider than ~0.12 rad keep chord area errors small
  p.min_v = static_cast<int>(std::ceil(span / 0.12)) + 5;
  // weight by integrating the density over the annulus segment
  double weight = 0.0;
  const int nq = 64;
  for (int k = 0; k < nq; ++k) {
    double r = r_in + (k + 0.5) / nq * (r_out - r_in);
    auto [lo, hi] = span_at(r);
    weight += density(r, ell) * r * (hi - lo) * (r_out - r_in) / nq;
  }
  d.patches.push_back(std::move(p));
  d.weight = weight;
  return d;
}

Decomposition decompose(const Electrode& e, double ell)
{
  if (e.polygon.size() < 3) throw RefinementError("electrode '" + e.id + "' has fewer than 3 vertices");
  if (e.polygon.size() <= 16 && polygon_is_convex(e.polygon)) return decompose_convex(e.polygon, ell);
  if (auto d = decompose_sector(e.polygon, ell)) return *d;
  throw RefinementError("electrode '" + e.id + "' is neither convex nor an annulus segment; cannot decompose");
}

std::pair<int, int> patch_resolution(const Patch& p, double allotment)
{
  if (p.square) {
    int m = std::max(1, static_cast<int>(std::lround(std::sqrt(std::max(allotment, 0.0)))));
    return {m, m};
  }
  int mu = std::max(1, static_cast<int>(std::lround(std::sqrt(std::max(allotment, 0.0) * p.aspect))));
  int mv = std::max(p.min_v, static_cast<int>(std::lround(std::max(allotment, 0.0) / mu)));
  return {mu, mv};
}

std::size_t count_for(const Decomposition& d, double allotment)
{
  std::size_t total = 0;
  double per_patch = allotment / static_cast<double>(d.patches.size());
  for (const auto& p : d.patches) {
    auto [mu, mv] = patch_resolution(p, per_patch);
    total += static_cast<std::size_t>(mu) * mv;
  }
  return total;
}

double length_scale(const ElectrodeLayout& layout)
{
  if (layout.circumcircle_diameter > 0.0) return layout.circumcircle_diameter;
  double r = layout.outer_radius();
  return r > 0.0 ? 0.2 * r : 1.0;
}

}  // namespace

std::size_t minimum_panel_count(const ElectrodeLayout& layout)
{
  double ell = length_scale(layout);
  std::size_t n = 0;
  for (const auto& e : layout.electrodes) n += count_for(decompose(e, ell), 0.0);
  return n;
}

PanelMesh mesh_layout(const ElectrodeLayout& layout, std::size_t target)
{
  if (target < layout.size())
    throw InputError("target panel count " + std::to_string(target) + " is below the electrode count " +
                     std::to_string(layout.size()));
  double ell = length_scale(layout);
  std::vector<Decomposition> parts;
  parts.reserve(layout.size());
  double total_weight = 0.0;
  for (const auto& e : layout.electrodes) {
    parts.push_back(decompose(e, ell));
    total_weight += parts.back().weight;
  }

  auto total_for = [&](double scale) {
    std::size_t n = 0;
    for (const auto& d : parts) n += count_for(d, scale * target * d.weight / total_weight);
    return n;
  };
  // total_for is a nondecreasing step function of scale; bisect for target
  double lo = 0.0, hi = 1.0;
  while (total_for(hi) < target && hi < 1e6) hi *= 2.0;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    if (total_for(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  double scale = std::abs(static_cast<double>(total_for(lo)) - target) <
                         std::abs(static_cast<double>(total_for(hi)) - target)
                     ? lo
                     : hi;

  PanelMesh mesh;
  mesh.electrode_ids = layout.ids();
  mesh.layout_hash = layout.hash();
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& d = parts[k];
    double per_patch = scale * target * d.weight / total_weight / static_cast<double>(d.patches.size());
    for (const auto& p : d.patches) {
      auto [mu, mv] = patch_resolution(p, per_patch);
      auto us = graded_partition(mu, p.grade_u_lo, p.grade_u_hi);
      auto vs = graded_partition(mv, p.grade_v_lo, p.grade_v_hi);
      std::vector<Vec2> nodes((mu + 1) * (mv + 1));
      for (int i = 0; i <= mu; ++i)
        for (int j = 0; j <= mv; ++j) nodes[i * (mv + 1) + j] = p.map(us[i], vs[j]);
      for (int i = 0; i < mu; ++i)
        for (int j = 0; j < mv; ++j) {
          std::array<Vec2, 4> q{nodes[i * (mv + 1) + j], nodes[(i + 1) * (mv + 1) + j],
                                nodes[(i + 1) * (mv + 1) + j + 1], nodes[i * (mv + 1) + j + 1]};
          mesh.panels.push_back(make_panel(q, layout.electrodes[k].id, k));
        }
    }
  }
  return mesh;
}

// --- JSON persistence ----------------------------------------------------------

std::string layout_to_json(const ElectrodeLayout& layout)
{
  json j;
  j["circumcircle_diameter"] = layout.circumcircle_diameter;
  j["gap_width"] = layout.gap_width;
  j["n_pixel_rings"] = layout.n_pixel_rings;
  j["electrodes"] = json::array();
  for (const auto& e : layout.electrodes) {
    json poly = json::array();
    for (const auto& v : e.polygon) poly.push_back({v.x(), v.y()});
    j["electrodes"].push_back({{"id", e.id}, {"group", to_string(e.group)}, {"polygon", std::move(poly)}});
  }
  return j.dump(1);
}

namespace {

std::string line_col(const std::string& text, std::size_t byte)
{
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

double number_field(const json& j, const std::string& key, const std::string& where)
{
  if (!j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  if (!j[key].is_number()) throw ParseError(where + "." + key + ": expected a number");
  return j[key].get<double>();
}

}  // namespace

ElectrodeLayout layout_from_json(const std::string& text)
{
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("layout JSON syntax error at " + line_col(text, e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("layout: top level must be an object");
  ElectrodeLayout layout;
  layout.circumcircle_diameter = number_field(j, "circumcircle_diameter", "layout");
  layout.gap_width = number_field(j, "gap_width", "layout");
  if (j.contains("n_pixel_rings")) {
    if (!j["n_pixel_rings"].is_number_integer()) throw ParseError("layout.n_pixel_rings: expected an integer");
    layout.n_pixel_rings = j["n_pixel_rings"].get<int>();
  }
  if (!j.contains("electrodes") || !j["electrodes"].is_array())
    throw ParseError("layout: missing array field 'electrodes'");
  std::set<std::string> seen;
  const auto& list = j["electrodes"];
  for (std::size_t i = 0; i < list.size(); ++i) {
    std::string where = "electrodes[" + std::to_string(i) + "]";
    const auto& je = list[i];
    if (!je.is_object()) throw ParseError(where + ": expected an object");
    if (!je.contains("id") || !je["id"].is_string()) throw ParseError(where + ".id: expected a string");
    if (!je.contains("group") || !je["group"].is_string()) throw ParseError(where + ".group: expected a string");
    if (!je.contains("polygon") || !je["polygon"].is_array()) throw ParseError(where + ".polygon: expected an array");
    Electrode e;
    e.id = je["id"].get<std::string>();
    if (!seen.insert(e.id).second) throw DuplicateIdError(where + ".id: duplicate electrode id '" + e.id + "'");
    try {
      e.group = group_from_string(je["group"].get<std::string>());
    } catch (const ParseError& err) {
      throw ParseError(where + ".group: " + err.what());
    }
    const auto& poly = je["polygon"];
    for (std::size_t k = 0; k < poly.size(); ++k) {
      const auto& v = poly[k];
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ParseError(where + ".polygon[" + std::to_string(k) + "]: expected [x, y]");
      e.polygon.emplace_back(v[0].get<double>(), v[1].get<double>());
    }
    if (e.polygon.size() < 3) throw ParseError(where + ".polygon: needs at least 3 vertices");
    if (!(polygon_signed_area(e.polygon) > 0.0))
      throw ParseError(where + ".polygon: vertices must be counterclockwise with nonzero area");
    layout.electrodes.push_back(std::move(e));
  }
  return layout;
}

void save_layout(const ElectrodeLayout& layout, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out) throw InputError("cannot write layout file " + path.string());
  out << layout_to_json(layout) << '\n';
}

ElectrodeLayout load_layout(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) throw InputError("cannot read layout file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return layout_from_json(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string mesh_to_json(const PanelMesh& mesh)
{
  json j;
  j["layout_hash"] = mesh.layout_hash;
  j["electrode_ids"] = mesh.electrode_ids;
  j["panel_count"] = mesh.panels.size();
  j["panels"] = json::array();
  for (const auto& p : mesh.panels) {
    json verts = json::array();
    for (const auto& v : p.corners()) verts.push_back({v.x(), v.y()});
    j["panels"].push_back({{"electrode", p.electrode_id}, {"area", p.area}, {"vertices", std::move(verts)}});
  }
  return j.dump();
}

void save_mesh(const PanelMesh& mesh, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out) throw InputError("cannot write mesh file " + path.string());
  out << mesh_to_json(mesh) << '\n';
}

}  // namespace pixeltrap
