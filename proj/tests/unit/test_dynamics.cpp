#include <gtest/gtest.h>

#include <cmath>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/dynamics.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/spectrum.hpp"
#include "test_support.hpp"

using namespace pixeltrap;
using pixeltrap::fixtures::coarse_basis;
using pixeltrap::fixtures::ModelField;
using pixeltrap::fixtures::UniformField;

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;

const ParticleSpecies& ca() {
  static const ParticleSpecies s = ParticleSpecies::ca40_plus();
  return s;
}

// 1 V over 300 um, centered 300 um up: f_z about 1.2 MHz, stable at 10 T.
IdealQuadrupole quad() { return IdealQuadrupole(1.0, 300e-6, Vec3(0, 0, 300e-6)); }

TrapSite ideal_site(const IdealQuadrupole& q, const MagneticField& B)
{
  TrapSite s;
  s.position = q.stationary_point();
  auto f = motional_frequencies(q.sample(s.position, true).hessian, ca(), B);
  s.omega_z = f.omega_z;
  s.omega_plus = f.omega_plus;
  s.omega_minus = f.omega_minus;
  s.omega_c = f.omega_c;
  s.stable = f.stable;
  return s;
}

Vec3 final_position(const FieldSource& src, const ParticleState& s0, const MagneticField& B, double dt, double T)
{
  SimulationOptions o;
  o.dt = dt;
  o.stride = static_cast<int>(std::lround(T / dt));
  return integrate(s0, src, B, ca(), T, o).samples.back().state.position;
}

}  // namespace

TEST(Boris, FreeGyrationConservesRadius)
{
  MagneticField B{1.0};
  UniformField none(Vec3::Zero());
  ParticleState s0;
  s0.position = Vec3(0, 0, 1e-3);
  s0.velocity = Vec3(30.0, 0, 0);
  SimulationOptions o;
  o.dt = default_time_step(ca(), B);
  o.stride = 1;
  auto tr = integrate(s0, none, B, ca(), 1e4 * o.dt, o);
  ASSERT_GE(tr.samples.size(), 10000u);
  // the discrete orbit is a circle of radius v dt / (2 sin(w dt / 2)), slightly
  // larger than v / w
  double half = 0.5 * cyclotron_frequency(ca(), B) * o.dt;
  double stretch = half / std::sin(half);
  auto center = [&](const ParticleState& s) {
    return Vec3(s.position +
                stretch * ca().mass / (ca().charge * B.B0 * B.B0) * s.velocity.cross(Vec3(0, 0, B.B0)));
  };
  Vec3 c0 = center(tr.samples.front().state);
  double r0 = (tr.samples.front().state.position - c0).norm();
  for (const auto& s : tr.samples) {
    EXPECT_NEAR((s.state.position - c0).norm() / r0, 1.0, 1e-12);
    EXPECT_NEAR(s.state.velocity.norm() / 30.0, 1.0, 1e-12);
  }
  EXPECT_NEAR(r0, ca().mass * 30.0 / (ca().charge * B.B0), 1e-3 * r0);
}

TEST(Boris, ExBDriftVelocity)
{
  MagneticField B{1.0};
  Vec3 E(1.0, 0, 0);
  UniformField src(E);
  ParticleState s0;
  s0.position = Vec3(0, 0, 1e-3);
  double Tc = kTwoPi / cyclotron_frequency(ca(), B);
  SimulationOptions o;
  o.dt = Tc / 100.0;
  o.stride = 100;
  o.escape_radius = 1.0;
  auto tr = integrate(s0, src, B, ca(), 200 * Tc, o);
  const auto& a = tr.samples.front().state;
  const auto& b = tr.samples.back().state;
  Vec3 drift = (b.position - a.position) / (b.time - a.time);
  Vec3 expect = E.cross(Vec3(0, 0, B.B0)) / (B.B0 * B.B0);
  EXPECT_NEAR(drift.y() / expect.y(), 1.0, 1e-3);
  EXPECT_NEAR(drift.x(), 0.0, 1e-3 * expect.norm());
}

TEST(Boris, SecondOrderConvergence)
{
  MagneticField B{10.0};
  auto q = quad();
  ModelField src(q);
  ParticleState s0;
  s0.position = q.center + Vec3(3e-6, 0, 2e-6);
  s0.velocity = Vec3(0, 5.0, 0);
  double Tc = kTwoPi / cyclotron_frequency(ca(), B);
  double T = 400 * Tc, dt = Tc / 50.0;
  Vec3 x1 = final_position(src, s0, B, dt, T), x2 = final_position(src, s0, B, dt / 2, T),
       x4 = final_position(src, s0, B, dt / 4, T);
  double ratio = (x1 - x2).norm() / (x2 - x4).norm();
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 5.0);
}

TEST(Boris, RestAtEquilibriumStays)
{
  MagneticField B{10.0};
  IdealQuadrupole q(1.0, 300e-6, Vec3(0, 0, 300e-6), Vec3(20.0, -10.0, 5.0));
  ModelField src(q);
  ParticleState s0;
  s0.position = q.stationary_point();
  SimulationOptions o;
  o.stride = 100;
  auto tr = integrate(s0, src, B, ca(), 1e4 * default_time_step(ca(), B), o);
  for (const auto& s : tr.samples) EXPECT_LT((s.state.position - s0.position).norm(), 1e-12);
}

TEST(Boris, StepChecks)
{
  MagneticField B{1.0};
  ParticleState s;
  s.position = Vec3(0, 0, 5e-8);
  s.velocity = Vec3(0, 0, -10.0);
  EXPECT_THROW(boris_step(s, Vec3::Zero(), B, 1e-8, ca()), PlaneCrossingError);
  double Tc = kTwoPi / cyclotron_frequency(ca(), B);
  s.position.z() = 1e-3;
  EXPECT_THROW(boris_step(s, Vec3::Zero(), B, 0.2 * Tc, ca()), InputError);
}

TEST(Boris, EnergyConservationInIdealTrap)
{
  MagneticField B{10.0};
  auto q = quad();
  ModelField src(q);
  ParticleState s0;
  s0.position = q.center + Vec3(3e-6, -1e-6, 3e-6);
  SimulationOptions o;
  o.stride = 500;
  auto site = ideal_site(q, B);
  // Boris energy error oscillates with amplitude ~ (w dt)^2; bounded, not secular
  o.dt = default_time_step(ca(), B) / 40.0;
  auto fine = integrate(s0, src, B, ca(), 1000 * kTwoPi / site.omega_z, o);
  EXPECT_LT(fine.relative_energy_drift(), 1e-6);
  o.dt *= 2.0;
  o.stride /= 2;
  double coarse = integrate(s0, src, B, ca(), 1000 * kTwoPi / site.omega_z, o).relative_energy_drift();
  EXPECT_NEAR(coarse / fine.relative_energy_drift(), 4.0, 1.0);
}

TEST(Boris, IdealTrapSpectrumMatchesEigenfrequencies)
{
  MagneticField B{10.0};
  auto q = quad();
  ModelField src(q);
  auto site = ideal_site(q, B);
  ASSERT_TRUE(site.stable);
  ParticleState s0;
  s0.position = q.center + Vec3(3e-6, 0, 3e-6);
  SimulationOptions o;
  o.stride = 4;
  double T = 40.0 * kTwoPi / site.omega_minus;
  auto tr = integrate(s0, src, B, ca(), T, o);
  auto sz = spectrum(tr, 2, site.omega_minus), sx = spectrum(tr, 0, site.omega_minus);
  EXPECT_NEAR(peak_near(sz, site.omega_z).frequency / site.omega_z, 1.0, 0.01);
  EXPECT_NEAR(peak_near(sx, site.omega_plus).frequency / site.omega_plus, 1.0, 0.01);
  EXPECT_NEAR(peak_near(sx, site.omega_minus).frequency / site.omega_minus, 1.0, 0.01);
}

TEST(Boris, FreeCyclotronPeak)
{
  MagneticField B{1.0};
  UniformField none(Vec3::Zero());
  ParticleState s0;
  s0.position = Vec3(0, 0, 1e-3);
  s0.velocity = Vec3(10.0, 0, 0);
  double wc = cyclotron_frequency(ca(), B);
  SimulationOptions o;
  o.stride = 5;
  auto tr = integrate(s0, none, B, ca(), 300 * kTwoPi / wc, o);
  auto s = spectrum(tr, 0, wc);
  EXPECT_NEAR(find_peaks(s, 1).front().frequency / wc, 1.0, 1e-3);
}

TEST(Modes, MagnetronLaunchIsPureAndMetastable)
{
  MagneticField B{10.0};
  auto q = quad();
  auto site = ideal_site(q, B);
  auto s = magnetron_launch(site, 4e-6, ca().charge);
  auto m = decompose_radial(s, site.position, site, ca().charge);
  EXPECT_NEAR(m.r_minus(), 4e-6, 1e-12);
  EXPECT_NEAR(m.r_plus(), 0.0, 1e-12);
  auto e = mode_energies(s, site, ca());
  // magnetron energy is negative: the orbit sits on a radial hill
  EXPECT_LT(e.magnetron, 0.0);
  EXPECT_NEAR(e.cyclotron, 0.0, 1e-30);
  EXPECT_GT(e.excitation(), 0.0);
}

TEST(Modes, MagnetronOrbitKeepsItsRadius)
{
  MagneticField B{10.0};
  auto q = quad();
  ModelField src(q);
  auto site = ideal_site(q, B);
  auto s0 = magnetron_launch(site, 4e-6, ca().charge);
  SimulationOptions o;
  o.stride = 200;
  auto tr = integrate(s0, src, B, ca(), 5 * kTwoPi / site.omega_minus, o);
  for (const auto& s : tr.samples) {
    auto m = decompose_radial(s.state, site.position, site, ca().charge);
    EXPECT_NEAR(m.r_minus(), 4e-6, 0.02e-6);
    EXPECT_LT(m.r_plus(), 0.05e-6);
  }
}

TEST(Grid, ReproducesTricubicPolynomial)
{
  GridBox box = GridBox::cube(Vec3(0, 0, 100e-6), 10e-6);
  box.yaw = 0.3;
  double h = 2e-6;
  TricubicGrid g(box, h, 1);
  double L = 10e-6;
  auto f = [&](const Vec3& l) {
    Vec3 u = l / L;
    return u.x() * u.x() * u.x() - 3 * u.x() * u.y() * u.y() + u.x() * u.y() * u.z() + u.z() * u.z() * u.z() * u.y();
  };
  auto c = std::cos(box.yaw), s = std::sin(box.yaw);
  auto local = [&](const Vec3& p) {
    Vec3 d = p - box.center;
    return Vec3(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  };
  const auto& n = g.dims();
  std::vector<TricubicGrid::NodeData> data(g.node_count());
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        Vec3 l = local(g.node(i, j, k));
        double x = l.x() / L, y = l.y() / L, z = l.z() / L;
        data[static_cast<std::size_t>(i + n[0] * (j + n[1] * k))] = {
            f(l),
            (3 * x * x - 3 * y * y + y * z) / L,
            (-6 * x * y + x * z + z * z * z) / L,
            (x * y + 3 * z * z * y) / L,
            (-6 * y + z) / (L * L),
            y / (L * L),
            (x + 3 * z * z) / (L * L),
            1.0 / (L * L * L)};
      }
  g.set_component(0, data);
  for (const Vec3& p : {Vec3(1.3e-6, -2.7e-6, 103.1e-6), Vec3(-7.7e-6, 4.4e-6, 95.5e-6)}) {
    double v;
    Vec3 grad;
    g.eval(p, v, grad);
    EXPECT_NEAR(v, f(local(p)), 1e-12);
  }
  EXPECT_FALSE(g.contains(Vec3(0, 0, 200e-6)));
  EXPECT_THROW(TricubicGrid(GridBox::cube(Vec3(0, 0, 5e-6), 10e-6), h, 1), InputError);
}

TEST(Grid, BemGridMatchesDirectEvaluation)
{
  const auto& basis = coarse_basis();
  auto v = ring_voltages(basis.layout, {{0.0, -0.2369, 1.3171, -28.3125}, 8.1845, 10.2997});
  Eigen::MatrixXd q = panel_charges(basis, v);
  auto g = build_grid(basis, q, GridBox::cube(Vec3(0, 0, 250e-6), 10e-6), 2e-6);
  EXPECT_LT(grid_error(g, 0, basis, q.col(0)), 1e-5);
}

TEST(Simulate, DeterministicAndMethodsAgree)
{
  const auto& basis = coarse_basis();
  auto v = ring_voltages(basis.layout, {{0.0, -0.2369, 1.3171, -28.3125}, 8.1845, 10.2997});
  BemModel m(basis, v);
  MagneticField B{kReferenceField};
  auto h = axial_minimum_height(m, 0, 0, ca());
  ASSERT_TRUE(h.has_value());
  auto site = characterize_site(m, Vec3(0, 0, *h), ca(), B, {false});
  ParticleState s0;
  s0.position = site.position + Vec3(2e-6, 0, 2e-6);
  SimulationOptions o;
  o.stride = 20;
  double T = 5e-6;
  auto a = simulate(s0, v, basis, B, ca(), T, o);
  auto b = simulate(s0, v, basis, B, ca(), T, o);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].state.position, b.samples[i].state.position);
  o.method = FieldMethod::direct;
  auto c = simulate(s0, v, basis, B, ca(), T, o);
  EXPECT_LT((a.samples.back().state.position - c.samples.back().state.position).norm(), 1e-9);
}

TEST(Simulate, PlanDurationMustMatch)
{
  const auto& basis = coarse_basis();
  TransportPlan p;
  p.waypoints = {ring_voltages(basis.layout, {{1.0, -2.8, 1.0, 3.0}, 0, 0}),
                 ring_voltages(basis.layout, {{1.0, -2.8, 1.0, 3.0}, 0, 0})};
  p.timestamps = {0.0, 1e-6};
  ParticleState s0;
  s0.position = Vec3(0, 0, 150e-6);
  EXPECT_THROW(simulate(s0, p, basis, MagneticField{kReferenceField}, ca(), 2e-6), InputError);
}

TEST(Axialization, TunedDriveShrinksMagnetronDetunedDoesNot)
{
  const auto& basis = coarse_basis();
  auto v = ring_voltages(basis.layout, {{0.0, 0.0, 0.0, 0.0}, -10.0, 10.0});
  BemModel m(basis, v);
  MagneticField B{kReferenceField};
  auto h = axial_minimum_height(m, 0, 0, ca());
  ASSERT_TRUE(h.has_value());
  auto site = characterize_site(m, Vec3(0, 0, *h), ca(), B, {false});
  auto s0 = magnetron_launch(site, 5e-6, ca().charge);
  SimulationOptions o;
  o.stride = 50;
  o.damping = default_damping(ca(), B);
  double T = 1e-3;
  double sum = site.omega_plus + site.omega_minus;

  auto off = axialize(s0, v, basis, B, ca(), site, RotatingWallDrive::guard_quadrants(basis.layout, 0.0, sum), T, o);
  EXPECT_NEAR(off.envelope_ratio(), 1.0, 0.05);
  auto tuned = axialize(s0, v, basis, B, ca(), site, RotatingWallDrive::guard_quadrants(basis.layout, 1.0, sum), T, o);
  EXPECT_LT(tuned.envelope_ratio(), 0.7);
  auto detuned =
      axialize(s0, v, basis, B, ca(), site, RotatingWallDrive::guard_quadrants(basis.layout, 1.0, 1.5 * sum), T, o);
  EXPECT_GT(detuned.envelope_ratio(), 0.9);
}

TEST(Spectrum, PureToneAndErrors)
{
  double dt = 1e-7, w = kTwoPi * 123.4e3;
  std::vector<double> x(4000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2e-6 * std::cos(w * dt * static_cast<double>(i)) + 1e-5;
  auto s = spectrum(x, dt, w);
  auto p = find_peaks(s, 1).front();
  EXPECT_NEAR(p.frequency / w, 1.0, 1e-4);
  EXPECT_NEAR(p.amplitude / 2e-6, 1.0, 0.05);
  EXPECT_THROW(spectrum(std::vector<double>(8, 0.0), dt), InsufficientSamplesError);
  EXPECT_THROW(spectrum(x, dt, kTwoPi * 1e3), InsufficientSamplesError);
  EXPECT_THROW(spectrum(x, -1.0), InputError);
}

TEST(Spectrum, PeakNearPicksTheRightLine)
{
  double dt = 1e-7, w1 = kTwoPi * 100e3, w2 = kTwoPi * 300e3;
  std::vector<double> x(8000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double t = dt * static_cast<double>(i);
    x[i] = std::cos(w1 * t) + 0.1 * std::sin(w2 * t);
  }
  auto s = spectrum(x, dt);
  EXPECT_NEAR(peak_near(s, 1.02 * w2).frequency / w2, 1.0, 1e-3);
  EXPECT_NEAR(peak_near(s, 0.97 * w1).frequency / w1, 1.0, 1e-3);
}
