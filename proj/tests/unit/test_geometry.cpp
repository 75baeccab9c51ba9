#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/geometry.hpp"

using namespace pixeltrap;

namespace {

ElectrodeLayout standard() { return build_pixel_layout(LayoutParams{}); }

std::filesystem::path temp_file(const std::string& name)
{
  return std::filesystem::temp_directory_path() / ("pixeltrap_test_" + name);
}

}  // namespace

TEST(Layout, PixelCountFormula)
{
  for (int n = 0; n <= 5; ++n) {
    LayoutParams p;
    p.n_rings = n;
    auto layout = build_pixel_layout(p);
    EXPECT_EQ(static_cast<int>(layout.indices_of(ElectrodeGroup::pixel).size()), 1 + 3 * n * (n + 1));
    EXPECT_EQ(pixel_count(n), 1 + 3 * n * (n + 1));
  }
}

TEST(Layout, StandardHas45Electrodes)
{
  auto layout = standard();
  EXPECT_EQ(layout.size(), 45u);
  EXPECT_EQ(layout.indices_of(ElectrodeGroup::pixel).size(), 37u);
  EXPECT_EQ(layout.indices_of(ElectrodeGroup::guard_quadrant).size(), 4u);
  EXPECT_EQ(layout.indices_of(ElectrodeGroup::outer_segment).size(), 4u);
  std::set<std::string> ids;
  for (const auto& e : layout.electrodes) ids.insert(e.id);
  EXPECT_EQ(ids.size(), 45u);
}

TEST(Layout, PolygonsAreSimpleCounterclockwise)
{
  for (const auto& e : standard().electrodes) {
    EXPECT_GE(e.polygon.size(), 3u);
    EXPECT_GT(polygon_signed_area(e.polygon), 0.0) << e.id;
    if (e.group == ElectrodeGroup::pixel) EXPECT_TRUE(polygon_is_simple(e.polygon)) << e.id;
  }
}

TEST(Layout, SingleHexagonForZeroRings)
{
  LayoutParams p;
  p.n_rings = 0;
  auto layout = build_pixel_layout(p);
  EXPECT_EQ(layout.indices_of(ElectrodeGroup::pixel).size(), 1u);
}

TEST(Layout, SixFoldSymmetry)
{
  auto layout = standard();
  std::vector<Vec2> verts;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::pixel))
    for (const auto& v : layout.electrodes[i].polygon) verts.push_back(v);
  double c = std::cos(constants::pi / 3), s = std::sin(constants::pi / 3);
  for (const auto& v : verts) {
    Vec2 r(c * v.x() - s * v.y(), s * v.x() + c * v.y());
    double best = 1e9;
    for (const auto& w : verts) best = std::min(best, (r - w).norm());
    EXPECT_LT(best, 1e-12);
  }
}

TEST(Layout, RasterizationOracle)
{
  auto layout = standard();
  double R = 150e-6;
  // brute-force raster of the ideal hexagons: count pixels hit and extents
  double h = 2e-6;
  double extent = 0.0;
  std::set<std::size_t> hit;
  auto pixels = layout.indices_of(ElectrodeGroup::pixel);
  for (double x = -1e-3; x <= 1e-3; x += h)
    for (double y = -1e-3; y <= 1e-3; y += h) {
      Vec2 p(x, y);
      for (std::size_t i : pixels)
        if (point_in_polygon(layout.electrodes[i].polygon, p)) {
          hit.insert(i);
          extent = std::max(extent, p.norm());
          break;
        }
    }
  EXPECT_EQ(hit.size(), 37u);
  double r_array = layout.pixel_array_radius();
  EXPECT_NEAR(extent, r_array, 2.0 * h);
  // analytic: farthest vertex of the ring-3 corner cell at distance 3 sqrt(3) R
  double Rs = R - 4e-6 / std::sqrt(3.0);
  Vec2 corner = hex_center({3, 0}, R);
  double expect = 0.0;
  for (int k = 0; k < 6; ++k) expect = std::max(expect, (corner + Rs * Vec2(std::cos(k * constants::pi / 3), std::sin(k * constants::pi / 3))).norm());
  EXPECT_NEAR(r_array, expect, 1e-12);
  EXPECT_NEAR(r_array, pixel_array_radius(3, 300e-6, 4e-6), 1e-15);
}

TEST(Layout, GapSeparation)
{
  auto layout = standard();
  double gap = layout.gap_width;
  const auto& e = layout.electrodes;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::pixel))
    for (std::size_t j : pixel_neighbours(layout, i))
      EXPECT_NEAR(polygon_separation(e[i].polygon, e[j].polygon), gap, 1e-9);
  auto guards = layout.indices_of(ElectrodeGroup::guard_quadrant);
  auto outers = layout.indices_of(ElectrodeGroup::outer_segment);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(polygon_separation(e[guards[k]].polygon, e[guards[(k + 1) % 4]].polygon), gap, 1e-9);
    EXPECT_NEAR(polygon_separation(e[outers[k]].polygon, e[outers[(k + 1) % 4]].polygon), gap, 1e-9);
    EXPECT_NEAR(polygon_separation(e[guards[k]].polygon, e[outers[k]].polygon), gap, 1e-9);
  }
}

TEST(Layout, GuardOverlapRejected)
{
  EXPECT_THROW(build_pixel_layout(3, 300e-6, 4e-6, 500e-6, 1e-3, 2e-3), GeometryConflictError);
  EXPECT_THROW(build_pixel_layout(3, 300e-6, 100e-6, 1e-3, 2e-3, 4e-3), InputError);
}

TEST(Hex, RingWalkAndDistance)
{
  for (int ring = 1; ring <= 4; ++ring) {
    auto cells = hex_ring(ring);
    EXPECT_EQ(static_cast<int>(cells.size()), 6 * ring);
    for (auto c : cells) EXPECT_EQ(hex_distance(c, {0, 0}), ring);
    for (std::size_t k = 0; k < cells.size(); ++k) EXPECT_EQ(hex_distance(cells[k], cells[(k + 1) % cells.size()]), 1);
  }
  for (int q = -3; q <= 3; ++q)
    for (int r = -3; r <= 3; ++r) EXPECT_EQ(hex_round(hex_center({q, r}, 1.0), 1.0), (HexCoord{q, r}));
}

TEST(Mesh, PaperPanelCount)
{
  auto layout = standard();
  auto mesh = mesh_layout(layout, 12446);
  EXPECT_GE(mesh.size(), 9957u);
  EXPECT_LE(mesh.size(), 14935u);
}

TEST(Mesh, AreasMatchPolygons)
{
  auto layout = standard();
  for (std::size_t target : {45ul, 2000ul, 12446ul}) {
    auto mesh = mesh_layout(layout, target);
    std::vector<double> area(layout.size(), 0.0);
    for (const auto& p : mesh.panels) {
      EXPECT_GT(p.area, 0.0);
      area[p.electrode] += p.area;
      EXPECT_TRUE(layout.find(p.electrode_id));
    }
    for (std::size_t k = 0; k < layout.size(); ++k) {
      double exact = polygon_signed_area(layout.electrodes[k].polygon);
      EXPECT_NEAR(area[k] / exact, 1.0, 5e-3) << layout.electrodes[k].id << " target " << target;
    }
  }
}

TEST(Mesh, CentroidInsidePanel)
{
  auto mesh = mesh_layout(standard(), 3000);
  for (const auto& p : mesh.panels) {
    std::vector<Vec2> poly;
    for (const auto& v : p.corners()) poly.emplace_back(v.x(), v.y());
    EXPECT_TRUE(point_in_polygon(poly, p.centroid.head<2>()));
  }
}

TEST(Mesh, SquareSplitsIntoFourEqualPanels)
{
  ElectrodeLayout layout;
  layout.electrodes.push_back({"sq", ElectrodeGroup::pixel, {{0, 0}, {1, 0}, {1, 1}, {0, 1}}});
  auto mesh = mesh_layout(layout, 4);
  ASSERT_EQ(mesh.size(), 4u);
  for (const auto& p : mesh.panels) EXPECT_NEAR(p.area, 0.25, 1e-15);
}

TEST(Mesh, EdgeGrading)
{
  // edge cells of a graded partition are at most half the interior width
  auto nodes = graded_partition(20, true, true);
  ASSERT_EQ(nodes.size(), 21u);
  double interior = nodes[10] - nodes[9];
  EXPECT_LE(nodes[1] - nodes[0], 0.5 * interior + 1e-15);
  EXPECT_LE(nodes[20] - nodes[19], 0.5 * interior + 1e-15);
  auto uniform = graded_partition(3, true, true);
  EXPECT_NEAR(uniform[1], 1.0 / 3.0, 1e-15);
}

TEST(Mesh, Deterministic)
{
  auto layout = standard();
  EXPECT_EQ(mesh_layout(layout, 5000), mesh_layout(layout, 5000));
}

TEST(Mesh, RejectsTooFewPanels)
{
  EXPECT_THROW(mesh_layout(standard(), 10), InputError);
}

TEST(Persistence, RoundTrip)
{
  auto layout = standard();
  auto path = temp_file("layout.json");
  save_layout(layout, path);
  auto loaded = load_layout(path);
  EXPECT_EQ(loaded, layout);
  std::filesystem::remove(path);
}

TEST(Persistence, EmptyLayout)
{
  auto layout = layout_from_json(R"({"circumcircle_diameter": 3e-4, "gap_width": 4e-6, "electrodes": []})");
  EXPECT_EQ(layout.size(), 0u);
}

TEST(Persistence, DuplicateIdRejected)
{
  std::string text = R"({"circumcircle_diameter": 3e-4, "gap_width": 4e-6, "electrodes": [
    {"id": "a", "group": "pixel", "polygon": [[0,0],[1,0],[0,1]]},
    {"id": "a", "group": "pixel", "polygon": [[2,0],[3,0],[2,1]]}]})";
  EXPECT_THROW(layout_from_json(text), DuplicateIdError);
}

TEST(Persistence, MalformedDiagnostics)
{
  try {
    layout_from_json("{\n \"gap_width\": 4e-6,\n \"electrodes\": [ }");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  try {
    layout_from_json(R"({"circumcircle_diameter": 3e-4, "gap_width": 4e-6, "electrodes": [{"id": "a", "group": "pixel", "polygon": [[0,0],[1],[0,1]]}]})");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("electrodes[0].polygon[1]"), std::string::npos) << e.what();
  }
}
