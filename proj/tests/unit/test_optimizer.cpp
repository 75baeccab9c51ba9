#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/optimizer.hpp"
#include "test_support.hpp"

using namespace pixeltrap;
using pixeltrap::fixtures::coarse_basis;

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;

// Samples of a known voltage set on a cloud of points above the array.
TargetSpec sampled_target(const ChargeBasis& basis, const VoltageSet& v, int n, unsigned seed)
{
  std::mt19937 rng(seed);
  double R = basis.layout.pixel_array_radius();
  std::uniform_real_distribution<double> xy(-1.5 * R, 1.5 * R), z(50e-6, 1.5e-3);
  TargetSpec t;
  for (int i = 0; i < n; ++i) {
    Vec3 p(xy(rng), xy(rng), z(rng));
    t.points.push_back(p);
    t.values.push_back(potential_at(p, v, basis));
  }
  t.weights.assign(t.points.size(), 1.0);
  t.free_offset = false;
  return t;
}

VoltageSet pixel_voltages(const ChargeBasis& basis, unsigned seed)
{
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  VoltageSet v;
  for (std::size_t i : basis.layout.indices_of(ElectrodeGroup::pixel)) v[basis.layout.electrodes[i].id] = u(rng);
  return v;
}

RegularizationConfig pixels_only(const ChargeBasis& basis, double lambda)
{
  RegularizationConfig reg;
  reg.lambda = lambda;
  for (std::size_t i = 0; i < basis.layout.size(); ++i)
    if (basis.layout.electrodes[i].group != ElectrodeGroup::pixel) reg.fixed[basis.layout.electrodes[i].id] = 0.0;
  return reg;
}

}  // namespace

TEST(Solve, RoundTripRecoversVoltages)
{
  const auto& basis = coarse_basis();
  auto truth = pixel_voltages(basis, 3);
  auto target = sampled_target(basis, truth, 300, 11);
  auto rep = solve_voltages(target, pixels_only(basis, 1e-9), basis);
  for (const auto& [id, v] : truth) EXPECT_NEAR(rep.voltages.at(id), v, 1e-6) << id;
  EXPECT_LT(rep.residual_rms, 1e-8);
}

TEST(Solve, NormIsMonotoneInLambda)
{
  const auto& basis = coarse_basis();
  auto sp = ParticleSpecies::ca40_plus();
  auto target = harmonic_target(Vec3(0, 0, 200e-6), curvature_for_frequency(kTwoPi * 1e6, sp));
  double prev = INFINITY, prev_res = 0.0;
  for (int e = -6; e <= 0; ++e) {
    RegularizationConfig reg;
    reg.lambda = std::pow(10.0, e);
    auto rep = solve_voltages(target, reg, basis);
    EXPECT_LE(rep.voltage_norm, prev * (1.0 + 1e-9)) << reg.lambda;
    EXPECT_GE(rep.residual_rms, prev_res * (1.0 - 1e-9)) << reg.lambda;
    prev = rep.voltage_norm;
    prev_res = rep.residual_rms;
  }
}

TEST(Solve, AchievesRequestedAxialCurvature)
{
  const auto& basis = coarse_basis();
  auto sp = ParticleSpecies::ca40_plus();
  double k = curvature_for_frequency(kTwoPi * 1e6, sp);
  auto target = harmonic_target(Vec3(0, 0, 200e-6), k);
  RegularizationConfig reg;
  reg.lambda = 1e-3;
  auto rep = solve_voltages(target, reg, basis);
  ASSERT_TRUE(rep.achieved_curvature.has_value());
  EXPECT_NEAR(*rep.achieved_curvature / k, 1.0, 0.1);
  BemModel m(basis, rep.voltages);
  auto site = characterize_site(m, Vec3(0, 0, 200e-6), sp, MagneticField{kReferenceField}, {false});
  EXPECT_NEAR(site.omega_z / (kTwoPi * 1e6), 1.0, 0.05);
  EXPECT_NEAR(site.position.z(), 200e-6, 10e-6);
}

TEST(Solve, BoundsAreRespectedAndReported)
{
  const auto& basis = coarse_basis();
  auto sp = ParticleSpecies::ca40_plus();
  auto target = harmonic_target(Vec3(0, 0, 200e-6), curvature_for_frequency(kTwoPi * 1e6, sp));
  RegularizationConfig reg;
  reg.lambda = 1e-3;
  auto free = solve_voltages(target, reg, basis);
  double vmax = 0.0;
  for (const auto& [id, v] : free.voltages) vmax = std::max(vmax, std::abs(v));
  // a mild clip leaves a slightly worse but still feasible fit
  reg.v_min = -0.9 * vmax;
  reg.v_max = 0.9 * vmax;
  auto rep = solve_voltages(target, reg, basis);
  for (const auto& [id, v] : rep.voltages) {
    EXPECT_GE(v, reg.v_min - 1e-12);
    EXPECT_LE(v, reg.v_max + 1e-12);
  }
  EXPECT_FALSE(rep.active_bounds.empty());
  EXPECT_GE(rep.residual_rms, free.residual_rms * (1.0 - 1e-9));
}

TEST(Solve, InfeasibleBoundsThrow)
{
  const auto& basis = coarse_basis();
  auto truth = pixel_voltages(basis, 9);
  auto target = sampled_target(basis, truth, 200, 4);
  auto reg = pixels_only(basis, 1e-6);
  reg.v_min = -0.01;
  reg.v_max = 0.01;
  EXPECT_THROW(solve_voltages(target, reg, basis), InfeasibleBoundsError);
}

TEST(Solve, InputValidation)
{
  const auto& basis = coarse_basis();
  TargetSpec t;
  RegularizationConfig reg;
  EXPECT_THROW(solve_voltages(t, reg, basis), InputError);
  t.points = {Vec3(0, 0, -1e-4)};
  t.values = {1.0};
  EXPECT_THROW(solve_voltages(t, reg, basis), InputError);
  t.points = {Vec3(0, 0, 1e-4)};
  reg.lambda = -1.0;
  EXPECT_THROW(solve_voltages(t, reg, basis), InputError);
  reg.lambda = 1e-3;
  reg.v_min = 1.0;
  reg.v_max = -1.0;
  EXPECT_THROW(solve_voltages(t, reg, basis), InputError);
  reg = RegularizationConfig{};
  reg.fixed["nope"] = 1.0;
  EXPECT_THROW(solve_voltages(t, reg, basis), UnknownElectrodeError);
}

TEST(Solve, FixedElectrodesAreHeld)
{
  const auto& basis = coarse_basis();
  auto sp = ParticleSpecies::ca40_plus();
  auto target = harmonic_target(Vec3(0, 0, 200e-6), curvature_for_frequency(kTwoPi * 0.8e6, sp));
  RegularizationConfig reg;
  std::string g = basis.layout.electrodes[basis.layout.indices_of(ElectrodeGroup::guard_quadrant).front()].id;
  reg.fixed[g] = 4.25;
  auto rep = solve_voltages(target, reg, basis);
  EXPECT_DOUBLE_EQ(rep.voltages.at(g), 4.25);
}

TEST(Patterns, PixelPatternShells)
{
  const auto& layout = coarse_basis().layout;
  auto v = pixel_pattern(layout, "px0_0", 1.0, -2.8, 1.0, 3.0);
  int count[4] = {0, 0, 0, 0};
  for (std::size_t i : layout.indices_of(ElectrodeGroup::pixel)) {
    double x = v.at(layout.electrodes[i].id);
    int ring = pixel_ring(layout, i);
    double want = ring == 0 ? 1.0 : ring == 1 ? -2.8 : ring == 2 ? 1.0 : 3.0;
    EXPECT_EQ(x, want);
    ++count[std::min(ring, 3)];
  }
  EXPECT_EQ(count[0], 1);
  EXPECT_EQ(count[1], 6);
  EXPECT_EQ(count[2], 12);
  EXPECT_EQ(count[3], 18);
  EXPECT_THROW(pixel_pattern(layout, "guard0", 1, 1, 1, 1), InputError);
}

TEST(Plan, VoltageInterpolationAndValidation)
{
  TransportPlan p;
  p.waypoints = {{{"a", 0.0}, {"b", 1.0}}, {{"a", 2.0}}};
  p.timestamps = {0.0, 1e-3};
  EXPECT_NO_THROW(p.validate());
  auto mid = p.voltages_at(0.25e-3);
  EXPECT_NEAR(mid.at("a"), 0.5, 1e-12);
  EXPECT_NEAR(mid.at("b"), 0.75, 1e-12);  // missing entries are 0 V
  EXPECT_EQ(p.voltages_at(-1.0).at("a"), 0.0);
  EXPECT_EQ(p.voltages_at(1.0).at("a"), 2.0);
  p.timestamps = {0.0, 0.0};
  EXPECT_THROW(p.validate(), InputError);
}

TEST(Plan, MetricsOnSyntheticTrack)
{
  TransportPlan p;
  for (int i = 0; i < 5; ++i) {
    p.waypoints.push_back({{"a", 0.1 * i}});
    p.timestamps.push_back(1e-4 * i);
    WaypointInfo w;
    w.site = Vec3(10e-6 * i, 0, 150e-6);
    w.omega_z = kTwoPi * 1e6;
    w.omega_minus = kTwoPi * 50e3;
    w.stable = true;
    p.info.push_back(w);
  }
  p.start_site = p.info.front().site;
  p.end_site = p.info.back().site;
  auto m = plan_metrics(p);
  EXPECT_TRUE(m.all_confining);
  EXPECT_TRUE(m.monotone);
  EXPECT_NEAR(m.max_step_voltage, 0.1, 1e-12);
  EXPECT_NEAR(m.max_site_step, 10e-6, 1e-15);
  EXPECT_EQ(m.adiabaticity, 0.0);
  // a 2 um back-step breaks monotonicity
  p.info[2].site.x() = 8e-6;
  p.info[3].site.x() = 5e-6;
  EXPECT_FALSE(plan_metrics(p).monotone);
}

TEST(Transport, LateralPlanProperties)
{
  const auto& basis = coarse_basis();
  auto sp = ParticleSpecies::ca40_plus();
  auto plan = lateral_transport_plan("px0_0", "px1_0", 8, basis, sp, MagneticField{kReferenceField});
  auto m = plan_metrics(plan);
  EXPECT_TRUE(m.all_confining);
  EXPECT_TRUE(m.monotone);
  EXPECT_LE(m.adiabaticity, 0.01);
  EXPECT_LE(m.max_step_voltage, 1.0 + 1e-9);
  Vec2 target = hex_center(pixel_cell(basis.layout, basis.layout.index_of("px1_0")), 150e-6);
  EXPECT_NEAR(plan.end_site.x(), target.x(), 10e-6);
  EXPECT_NEAR(plan.end_site.y(), target.y(), 10e-6);
  EXPECT_THROW(lateral_transport_plan("px0_0", "nope", 8, basis, sp, MagneticField{kReferenceField}),
               UnknownElectrodeError);
}

TEST(Transport, VerticalPlanHitsHeights)
{
  const auto& basis = coarse_basis();
  auto sp = ParticleSpecies::ca40_plus();
  std::vector<double> h{150e-6, 200e-6, 250e-6};
  auto plan = vertical_transport_plan(h, basis, sp, MagneticField{kReferenceField});
  ASSERT_EQ(plan.info.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(plan.info[i].site.z(), h[i], 5e-6);
    EXPECT_NEAR(plan.info[i].omega_z / (kTwoPi * 500e3), 1.0, 0.1);
  }
  EXPECT_TRUE(plan_metrics(plan).monotone);
  EXPECT_THROW(vertical_transport_plan({1e-2}, basis, sp, MagneticField{kReferenceField}), UnreachableHeightError);
}

TEST(Crystal, ThreeFoldSites)
{
  const auto& basis = coarse_basis();
  auto sp = ParticleSpecies::ca40_plus();
  auto c = crystal_voltages(3, 300e-6, basis, sp, MagneticField{kReferenceField}, false);
  ASSERT_EQ(c.sites.size(), 3u);
  for (const auto& s : c.sites) {
    EXPECT_TRUE(s.stable);
    EXPECT_NEAR(s.omega_z / c.sites[0].omega_z, 1.0, 0.02);
    EXPECT_NEAR(s.position.z() / c.sites[0].position.z(), 1.0, 0.02);
  }
  double r0 = c.sites[0].position.head<2>().norm();
  for (const auto& s : c.sites) EXPECT_NEAR(s.position.head<2>().norm(), r0, 0.03 * r0);
}
