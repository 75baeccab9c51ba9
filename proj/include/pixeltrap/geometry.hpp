#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pixeltrap/types.hpp"

namespace pixeltrap {

enum class ElectrodeGroup { pixel, guard_quadrant, outer_segment };

std::string to_string(ElectrodeGroup group);
ElectrodeGroup group_from_string(const std::string& name);

/// One planar conductor in the z = 0 plane. The polygon is simple and
/// counterclockwise.
struct Electrode {
  std::string id;
  ElectrodeGroup group = ElectrodeGroup::pixel;
  std::vector<Vec2> polygon;

  bool operator==(const Electrode&) const = default;
};

struct ElectrodeLayout {
  std::vector<Electrode> electrodes;
  double circumcircle_diameter = 0.0;
  double gap_width = 0.0;
  int n_pixel_rings = 0;

  bool operator==(const ElectrodeLayout&) const = default;

  std::size_t size() const { return electrodes.size(); }
  /// Index of the electrode with this id; throws UnknownElectrodeError.
  std::size_t index_of(const std::string& id) const;
  std::optional<std::size_t> find(const std::string& id) const;
  std::vector<std::string> ids() const;
  std::vector<std::size_t> indices_of(ElectrodeGroup group) const;

  /// Largest vertex radius over all pixel electrodes.
  double pixel_array_radius() const;
  /// Largest vertex radius over all electrodes.
  double outer_radius() const;
  /// Stable content hash (FNV-1a over the canonical JSON form).
  std::uint64_t hash() const;
};

/// Knobs for the standard Pixel-trap layout. Unset radii take the defaults
/// guard_inner = 1.05 R_array, guard_outer = 2 guard_inner,
/// plane_outer = 2 guard_outer.
struct LayoutParams {
  int n_rings = 3;
  double circumcircle_diameter = 300e-6;
  double gap_width = 4e-6;
  std::optional<double> guard_inner_radius;
  std::optional<double> guard_outer_radius;
  std::optional<double> plane_outer_radius;
};

ElectrodeLayout build_pixel_layout(const LayoutParams& params);
ElectrodeLayout build_pixel_layout(int n_rings, double circumcircle_diameter, double gap_width,
                                   double guard_inner_radius, double guard_outer_radius,
                                   double plane_outer_radius);

/// Outer vertex radius of the pixel array built from these parameters.
double pixel_array_radius(int n_rings, double circumcircle_diameter, double gap_width);
/// Number of pixels in a hexagonal array with n_rings rings around the center.
constexpr int pixel_count(int n_rings) { return 1 + 3 * n_rings * (n_rings + 1); }

// --- hexagonal lattice helpers ------------------------------------------------

/// Axial coordinates of a flat-topped hexagon lattice cell.
struct HexCoord {
  int q = 0;
  int r = 0;
  bool operator==(const HexCoord&) const = default;
};

int hex_distance(HexCoord a, HexCoord b);
/// Center of the cell for a lattice with the given cell circumradius.
Vec2 hex_center(HexCoord c, double circumradius);
/// Nearest lattice cell to a point.
HexCoord hex_round(const Vec2& p, double circumradius);
/// Cells at exactly `ring` steps from the origin, counterclockwise starting
/// at the 30 degree direction.
std::vector<HexCoord> hex_ring(int ring);

/// Lattice cell of a pixel electrode, recovered from its centroid.
HexCoord pixel_cell(const ElectrodeLayout& layout, std::size_t electrode);
/// Ring index (hex distance from the central pixel).
int pixel_ring(const ElectrodeLayout& layout, std::size_t electrode);
/// Pixel indices whose cells are lattice neighbours of this pixel.
std::vector<std::size_t> pixel_neighbours(const ElectrodeLayout& layout, std::size_t electrode);
/// Pixel electrode whose cell center is closest to p.
std::size_t nearest_pixel(const ElectrodeLayout& layout, const Vec2& p);

// --- polygon helpers ------------------------------------------------------

/// Signed shoelace area (positive for counterclockwise).
double polygon_signed_area(std::span<const Vec2> poly);
Vec2 polygon_centroid(std::span<const Vec2> poly);
bool point_in_polygon(std::span<const Vec2> poly, const Vec2& p);
bool polygon_is_convex(std::span<const Vec2> poly);
bool polygon_is_simple(std::span<const Vec2> poly);
/// Minimum distance between the boundaries of two polygons.
double polygon_separation(std::span<const Vec2> a, std::span<const Vec2> b);

// --- panel mesh -------------------------------------------------------------

/// Flat triangular or quadrilateral panel in the z = 0 plane carrying a
/// uniform surface charge.
struct Panel {
  std::array<Vec3, 4> vertices{};
  int n_vertices = 0;
  Vec3 centroid = Vec3::Zero();
  double area = 0.0;
  /// Largest vertex-to-vertex distance.
  double diameter = 0.0;
  /// Second area moments about the centroid, per unit area.
  double mxx = 0.0, mxy = 0.0, myy = 0.0;
  /// Degree-5 quadrature nodes with weights summing to one.
  std::array<Vec2, 9> nodes{};
  std::array<double, 9> weights{};
  int n_nodes = 0;
  std::string electrode_id;
  std::size_t electrode = 0;

  std::span<const Vec3> corners() const { return {vertices.data(), static_cast<std::size_t>(n_vertices)}; }
  bool operator==(const Panel&) const = default;
};

/// Builds a panel from 3 or 4 counterclockwise vertices; throws
/// DegeneratePanelError for zero area.
Panel make_panel(std::span<const Vec2> vertices, const std::string& electrode_id, std::size_t electrode);

struct PanelMesh {
  std::vector<Panel> panels;
  std::vector<std::string> electrode_ids;
  std::uint64_t layout_hash = 0;

  std::size_t size() const { return panels.size(); }
  std::size_t electrode_count() const { return electrode_ids.size(); }
  std::uint64_t hash() const;
  bool operator==(const PanelMesh&) const = default;
};

/// Panel count a given electrode contributes with the minimum decomposition.
std::size_t minimum_panel_count(const ElectrodeLayout& layout);

/// Discretizes every electrode into graded quadrilateral panels. The result
/// holds max(target, minimum_panel_count) panels within 20%.
PanelMesh mesh_layout(const ElectrodeLayout& layout, std::size_t target_panel_count);

/// Node positions in [0,1] for m cells with two 2:1 grading levels toward
/// the requested ends (uniform when m is too small to grade).
std::vector<double> graded_partition(int m, bool refine_low, bool refine_high);

// --- persistence --------------------------------------------------------------

std::string layout_to_json(const ElectrodeLayout& layout);
ElectrodeLayout layout_from_json(const std::string& text);
void save_layout(const ElectrodeLayout& layout, const std::filesystem::path& path);
ElectrodeLayout load_layout(const std::filesystem::path& path);

std::string mesh_to_json(const PanelMesh& mesh);
void save_mesh(const PanelMesh& mesh, const std::filesystem::path& path);

}  // namespace pixeltrap
