#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pixeltrap/analysis.hpp"
#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "test_support.hpp"

using namespace pixeltrap;

namespace {
constexpr double kTwoPi = 2.0 * constants::pi;
}

TEST(Frequencies, SumAndProductIdentities)
{
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> curv(1e3, 1e8), field(0.5, 12.0);
  auto sp = ParticleSpecies::ca40_plus();
  int stable = 0;
  for (int i = 0; i < 200; ++i) {
    auto f = motional_frequencies(curv(rng), sp, MagneticField{field(rng)});
    if (!f.stable) continue;
    ++stable;
    EXPECT_NEAR((f.omega_plus + f.omega_minus) / f.omega_c, 1.0, 1e-12);
    EXPECT_NEAR(f.omega_plus * f.omega_minus / (0.5 * f.omega_z * f.omega_z), 1.0, 1e-12);
    EXPECT_GT(f.omega_plus, 0.5 * f.omega_c);
    EXPECT_LT(f.omega_minus, 0.5 * f.omega_c);
    EXPECT_LT(f.omega_minus, f.omega_z);
  }
  EXPECT_GT(stable, 50);
}

TEST(Frequencies, UnstableIsFlaggedNotThrown)
{
  auto sp = ParticleSpecies::ca40_plus();
  MagneticField B{1.0};
  double wc = cyclotron_frequency(sp, B);
  // 2 w_z^2 = 1.1 w_c^2
  double phi_zz = 0.55 * wc * wc * sp.mass / sp.charge;
  TrapFrequencies f;
  ASSERT_NO_THROW(f = motional_frequencies(phi_zz, sp, B));
  EXPECT_FALSE(f.stable);
  EXPECT_THROW(motional_frequencies(-phi_zz, sp, B), ComputationError);
}

TEST(Constants, CyclotronFrequencies)
{
  double f_ca = cyclotron_frequency(ParticleSpecies::ca40_plus(), MagneticField{1.0}) / kTwoPi;
  EXPECT_NEAR(f_ca, 384e3, 0.01 * 384e3);
  double f_e = cyclotron_frequency(ParticleSpecies::electron(), MagneticField{4.0}) / kTwoPi;
  EXPECT_GT(f_e, 100e9);
}

TEST(Constants, CyclotronRadiusFormula)
{
  auto sp = ParticleSpecies::ca40_plus();
  MagneticField B{2.0};
  double v = std::sqrt(2.0 * constants::boltzmann * 300.0 / sp.mass);
  EXPECT_NEAR(cyclotron_radius(sp, 300.0, B), sp.mass * v / (sp.charge * 2.0), 1e-18);
  // radius scales as sqrt(T) / B
  EXPECT_NEAR(cyclotron_radius(sp, 1200.0, B) / cyclotron_radius(sp, 300.0, B), 2.0, 1e-12);
  EXPECT_NEAR(cyclotron_radius(sp, 300.0, MagneticField{4.0}) / cyclotron_radius(sp, 300.0, B), 0.5, 1e-12);
}

TEST(Species, LookupByName)
{
  EXPECT_EQ(species_by_name("electron").mass, ParticleSpecies::electron().mass);
  EXPECT_LT(species_by_name("electron").charge, 0.0);
  EXPECT_THROW(species_by_name("muon"), InputError);
}

TEST(IdealQuadrupole, AxialFrequencyMatchesCurvature)
{
  auto sp = ParticleSpecies::ca40_plus();
  IdealQuadrupole q(2.0, 300e-6, Vec3(0, 0, 200e-6));
  double wz = ideal_axial_frequency(q, sp);
  auto s = q.sample(q.center, true);
  auto f = motional_frequencies(s.hessian, sp, MagneticField{5.0});
  EXPECT_NEAR(f.omega_z / wz, 1.0, 1e-12);
  // Laplace
  EXPECT_NEAR(s.hessian.trace(), 0.0, 1e-9 * std::abs(s.hessian(2, 2)));
}

TEST(StationaryPoint, FindsShiftedCenterAndClassifies)
{
  auto sp = ParticleSpecies::ca40_plus();
  IdealQuadrupole q(1.0, 500e-6, Vec3(10e-6, -5e-6, 300e-6), Vec3(0, 0, 50.0));
  auto st = find_stationary_point(q, q.center + Vec3(3e-6, 2e-6, -4e-6), sp, 1e-9);
  EXPECT_LT((st.position - q.stationary_point()).norm(), 1e-10);
  EXPECT_EQ(st.kind, SiteKind::axial_saddle);
}

TEST(StationaryPoint, LeavingDomainIsReported)
{
  auto sp = ParticleSpecies::ca40_plus();
  // the stationary point sits below the plane
  IdealQuadrupole q(1.0, 500e-6, Vec3(0, 0, -100e-6));
  EXPECT_THROW(find_stationary_point(q, Vec3(0, 0, 50e-6), sp), LeftDomainError);
}

TEST(Anharmonic, HarmonicProfileHasNoShift)
{
  double m = ParticleSpecies::ca40_plus().mass, w = kTwoPi * 1e6;
  auto U = [&](double s) { return 0.5 * m * w * w * s * s; };
  for (double E : {1e-24, 1e-22, 1e-20}) EXPECT_NEAR(axial_frequency_at_energy(U, m, E, 1e-6) / w, 1.0, 1e-8);
}

TEST(Anharmonic, QuarticTermRaisesFrequency)
{
  double m = ParticleSpecies::ca40_plus().mass, w = kTwoPi * 1e6;
  double k4 = 0.5 * m * w * w / (50e-6 * 50e-6);
  auto U = [&](double s) { return 0.5 * m * w * w * s * s + k4 * s * s * s * s; };
  double E_lo = 1e-26, E_hi = 1e-23;
  double lo = axial_frequency_at_energy(U, m, E_lo, 1e-6), hi = axial_frequency_at_energy(U, m, E_hi, 1e-6);
  EXPECT_GT(hi, lo);
  // first-order perturbation, valid while the shift is small: dw/w = 3 k4 E / (m^2 w^4)
  double slope = 3.0 * k4 / (m * m * w * w * w * w);
  EXPECT_LT(slope * E_hi, 0.01);
  EXPECT_NEAR((hi - lo) / w, slope * (E_hi - E_lo), 0.05 * slope * E_hi);
}

TEST(SpinCoupling, FormulaAndScaling)
{
  auto sp = ParticleSpecies::ca40_plus();
  double b = 20.0, w = kTwoPi * 100e3;
  double mu = constants::bohr_magneton * b;
  EXPECT_NEAR(spin_coupling_estimate(b, w, sp), mu * mu / (2.0 * sp.mass * constants::hbar * w * w), 1e-12);
  EXPECT_NEAR(spin_coupling_estimate(2 * b, w, sp) / spin_coupling_estimate(b, w, sp), 4.0, 1e-12);
  EXPECT_NEAR(spin_coupling_estimate(b, 2 * w, sp) / spin_coupling_estimate(b, w, sp), 0.25, 1e-12);
}

// --- on the coarse reference basis -----------------------------------------------

TEST(Site, TightPresetIsConfiningWithDepth)
{
  const auto& basis = fixtures::coarse_basis();
  auto v = ring_voltages(basis.layout, {{0.0, -0.2369, 1.3171, -28.3125}, 8.1845, 10.2997});
  BemModel m(basis, v);
  auto sp = ParticleSpecies::ca40_plus();
  auto h = axial_minimum_height(m, 0, 0, sp);
  ASSERT_TRUE(h.has_value());
  auto site = characterize_site(m, Vec3(0, 0, *h), sp, MagneticField{kReferenceField});
  EXPECT_TRUE(site.stable);
  EXPECT_EQ(site.kind, SiteKind::axial_saddle);
  EXPECT_NEAR(site.position.x(), 0.0, 1e-6);
  EXPECT_GT(site.depth_eV, 0.1);
  EXPECT_LT(site.axis_tilt_deg, 1.0);
  EXPECT_NEAR(site.omega_plus + site.omega_minus, site.omega_c, 1e-9 * site.omega_c);
}

TEST(Site, MagnetronHillIsRadialMaximum)
{
  // metastability: the in-plane curvature of q Phi is negative at a site
  const auto& basis = fixtures::coarse_basis();
  auto v = ring_voltages(basis.layout, {{0.0, 0.0, 0.0, 0.0}, -10.0, 10.0});
  BemModel m(basis, v);
  auto sp = ParticleSpecies::ca40_plus();
  auto h = axial_minimum_height(m, 0, 0, sp);
  ASSERT_TRUE(h.has_value());
  auto site = characterize_site(m, Vec3(0, 0, *h), sp, MagneticField{kReferenceField}, {false});
  EXPECT_GT(sp.charge * site.hessian(2, 2), 0.0);
  EXPECT_LT(sp.charge * site.hessian(0, 0), 0.0);
  EXPECT_LT(sp.charge * site.hessian(1, 1), 0.0);
}

TEST(Symmetry, SixtyDegreeRotationOfPixelPattern)
{
  // guards and outer plane grounded: only the hexagonal array matters
  const auto& basis = fixtures::coarse_basis();
  auto v = ring_voltages(basis.layout, {{1.0, -2.8, 1.0, 3.0}, 0.0, 0.0});
  BemModel m(basis, v);
  double r = 120e-6, z = 150e-6;
  for (double a0 : {0.1, 0.4}) {
    double p0 = m.potential(Vec3(r * std::cos(a0), r * std::sin(a0), z));
    for (int k = 1; k < 6; ++k) {
      double a = a0 + k * constants::pi / 3.0;
      EXPECT_NEAR(m.potential(Vec3(r * std::cos(a), r * std::sin(a), z)), p0, 2e-3 * std::abs(p0)) << k;
    }
  }
}
