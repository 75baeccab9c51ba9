#include "pixeltrap/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/parallel.hpp"

namespace pixeltrap {

ParticleSpecies ParticleSpecies::ca40_plus()
{
  // 40 u is the convention used throughout; the actual 40Ca+ mass differs by ~1e-3
  return {constants::elementary_charge, 40.0 * constants::atomic_mass_unit, "Ca40_plus"};
}

ParticleSpecies ParticleSpecies::electron()
{
  return {-constants::elementary_charge, constants::electron_mass, "electron"};
}

ParticleSpecies species_by_name(const std::string& name)
{
  if (name == "Ca40_plus" || name == "ca40_plus" || name == "Ca+") return ParticleSpecies::ca40_plus();
  if (name == "electron" || name == "e-") return ParticleSpecies::electron();
  throw InputError("unknown species '" + name + "' (available: Ca40_plus, electron)");
}

// --- models -------------------------------------------------------------------

BemModel::BemModel(const ChargeBasis& basis, const VoltageSet& voltages)
    : basis_(&basis), q_(panel_charges(basis, voltages))
{
}

BemModel::BemModel(const ChargeBasis& basis, Eigen::VectorXd panel_charges) : basis_(&basis), q_(std::move(panel_charges))
{
}

double BemModel::potential(const Vec3& p) const { return potential_from_charges(*basis_, q_, p); }

FieldSample BemModel::sample(const Vec3& p, bool with_hessian) const
{
  return sample_from_charges(*basis_, q_, p, with_hessian);
}

namespace {

Mat3 quad_hessian(const IdealQuadrupole& q)
{
  double c = q.U / (q.r0 * q.r0);
  return Vec3(-2.0 * c, -2.0 * c, 4.0 * c).asDiagonal();
}

}  // namespace

double IdealQuadrupole::potential(const Vec3& p) const
{
  Vec3 d = p - center;
  return U / (r0 * r0) * (2.0 * d.z() * d.z() - d.x() * d.x() - d.y() * d.y()) - uniform_field.dot(d);
}

FieldSample IdealQuadrupole::sample(const Vec3& p, bool with_hessian) const
{
  FieldSample s;
  Mat3 H = quad_hessian(*this);
  Vec3 d = p - center;
  s.potential = potential(p);
  s.field = -(H * d) + uniform_field;
  if (with_hessian) s.hessian = H;
  return s;
}

Vec3 IdealQuadrupole::stationary_point() const
{
  return center + quad_hessian(*this).diagonal().cwiseInverse().cwiseProduct(uniform_field);
}

double ideal_axial_frequency(const IdealQuadrupole& quad, const ParticleSpecies& species)
{
  return std::sqrt(4.0 * std::abs(species.charge * quad.U) / (species.mass * quad.r0 * quad.r0));
}

std::string to_string(SiteKind kind)
{
  switch (kind) {
    case SiteKind::axial_saddle: return "axial_saddle";
    case SiteKind::minimum: return "minimum";
    case SiteKind::maximum: return "maximum";
    case SiteKind::other: break;
  }
  return "other";
}

namespace {

SiteKind classify(const Mat3& hessian, double charge)
{
  Eigen::SelfAdjointEigenSolver<Mat3> es(charge > 0 ? hessian : Mat3(-hessian));
  const Vec3& ev = es.eigenvalues();
  double scale = ev.cwiseAbs().maxCoeff();
  if (scale == 0.0) return SiteKind::other;
  double eps = 1e-9 * scale;
  int pos = 0, neg = 0;
  for (int i = 0; i < 3; ++i) {
    if (ev[i] > eps) ++pos;
    if (ev[i] < -eps) ++neg;
  }
  if (pos == 3) return SiteKind::minimum;
  if (neg == 3) return SiteKind::maximum;
  if (pos == 1 && neg == 2) {
    // the confining direction must be closer to z than to the plane
    Vec3 axis = es.eigenvectors().col(2);
    if (std::abs(axis.z()) > std::sqrt(0.5)) return SiteKind::axial_saddle;
  }
  return SiteKind::other;
}

}  // namespace

StationaryPoint find_stationary_point(const PotentialModel& model, const Vec3& seed, const ParticleSpecies& species,
                                      double tolerance, int max_iterations, double max_excursion)
{
  if (seed.z() <= 0.0) throw InputError("stationary-point seed must lie above the electrode plane");
  if (max_excursion <= 0.0) max_excursion = 20.0 * seed.z();
  Vec3 x = seed;
  StationaryPoint out;
  for (int it = 0; it <= max_iterations; ++it) {
    FieldSample s = model.sample(x, true);
    Vec3 grad = -s.field;
    out.gradient_norm = grad.norm();
    out.iterations = it;
    if (out.gradient_norm <= tolerance) {
      out.position = x;
      out.kind = classify(s.hessian, species.charge);
      return out;
    }
    if (it == max_iterations) break;
    Eigen::FullPivLU<Mat3> lu(s.hessian);
    if (!lu.isInvertible()) throw ConvergenceError("singular Hessian during stationary-point search");
    Vec3 step = -lu.solve(grad);
    // keep each step to a fraction of the height so the plane is not jumped over
    double cap = 0.5 * x.z();
    if (step.norm() > cap) step *= cap / step.norm();
    x += step;
    // steps are capped, so a target below the plane shows up as a collapse toward z = 0
    if (x.z() <= 1e-3 * seed.z() || (x - seed).norm() > max_excursion) {
      std::ostringstream msg;
      msg << "stationary-point iterate left the domain at (" << x.x() << ", " << x.y() << ", " << x.z() << ")";
      throw LeftDomainError(msg.str());
    }
  }
  std::ostringstream msg;
  msg << "stationary-point search did not converge in " << max_iterations << " iterations (|grad| = "
      << out.gradient_norm << " V/m)";
  throw ConvergenceError(msg.str());
}

// --- frequencies ---------------------------------------------------------------

double cyclotron_frequency(const ParticleSpecies& species, const MagneticField& B)
{
  return std::abs(species.charge) * B.B0 / species.mass;
}

TrapFrequencies motional_frequencies(double phi_zz, const ParticleSpecies& species, const MagneticField& B)
{
  if (B.B0 <= 0.0) throw InputError("magnetic field must be positive");
  double wz2 = species.charge * phi_zz / species.mass;
  if (!(wz2 > 0.0)) throw ComputationError("axial curvature does not confine this species");
  TrapFrequencies f;
  f.omega_c = cyclotron_frequency(species, B);
  f.omega_z = std::sqrt(wz2);
  double disc = f.omega_c * f.omega_c - 2.0 * wz2;
  if (disc > 0.0) {
    f.omega_plus = 0.5 * (f.omega_c + std::sqrt(disc));
    // product form avoids cancellation in the small root
    f.omega_minus = wz2 / (2.0 * f.omega_plus);
    f.stable = true;
  } else {
    f.omega_plus = f.omega_minus = 0.5 * f.omega_c;
    f.stable = false;
  }
  return f;
}

TrapFrequencies motional_frequencies(const Mat3& hessian, const ParticleSpecies& species, const MagneticField& B)
{
  return motional_frequencies(hessian(2, 2), species, B);
}

// --- depth ---------------------------------------------------------------------

namespace {

// Largest value of f on [a, b] near a sampled maximum at m, by golden section.
double refine_max(const std::function<double(double)>& f, double a, double b)
{
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < 40; ++i) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return std::max(fc, fd);
}

// Highest barrier met walking from s = 0 to s = end in steps of `step`;
// values are energies relative to the start.
double scan_barrier(const std::function<double(double)>& U, double end, double step)
{
  double len = std::abs(end);
  int n = std::max(2, static_cast<int>(std::ceil(len / step)));
  std::vector<double> s(n + 1), u(n + 1);
  for (int i = 0; i <= n; ++i) s[i] = end * static_cast<double>(i) / n;
  parallel_for(static_cast<std::size_t>(n + 1), [&](std::size_t i) { u[i] = U(s[i]); });
  int best = static_cast<int>(std::max_element(u.begin(), u.end()) - u.begin());
  double top = u[best];
  if (best > 0 && best < n) top = std::max(top, refine_max(U, std::min(s[best - 1], s[best + 1]),
                                                             std::max(s[best - 1], s[best + 1])));
  return top;
}

std::function<double(double)> axial_profile(const PotentialModel& model, const Vec3& site, const ParticleSpecies& sp)
{
  double phi0 = model.potential(site);
  return [&model, site, phi0, q = sp.charge](double s) {
    return q * (model.potential(site + Vec3(0, 0, s)) - phi0);
  };
}

}  // namespace

double trap_depth(const PotentialModel& model, const Vec3& site, const ParticleSpecies& species, double z_max,
                  double step)
{
  if (site.z() <= 0.0) throw InputError("trap site must lie above the electrode plane");
  if (z_max <= 0.0) z_max = 10.0 * site.z();
  if (z_max <= site.z()) throw InputError("depth search box must extend above the site");
  auto U = axial_profile(model, site, species);
  double up = scan_barrier(U, z_max - site.z(), step);
  double down = scan_barrier(U, -site.z(), step);
  double barrier = std::min(up, down);
  if (!(barrier > 0.0)) throw ComputationError("unbounded basin: no confining barrier along the field line");
  return barrier / constants::elementary_charge;
}

// --- anharmonicity -------------------------------------------------------------

namespace {

// Legendre P_n and its derivative at z.
std::pair<double, double> legendre(int n, double z)
{
  double p0 = 1.0, p1 = z;
  for (int k = 2; k <= n; ++k) {
    double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  return {p1, n * (z * p1 - p0) / (z * z - 1.0)};
}

// 64-point Gauss-Legendre nodes and weights mapped to [0, 1].
const std::pair<std::vector<double>, std::vector<double>>& gauss_legendre_unit()
{
  static const auto table = [] {
    const int n = 64;
    std::vector<double> x(n), w(n);
    for (int i = 0; i < n; ++i) {
      double z = std::cos(constants::pi * (i + 0.75) / (n + 0.5));
      for (int it = 0; it < 100; ++it) {
        auto [p, dp] = legendre(n, z);
        double dz = p / dp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      double dp = legendre(n, z).second;
      x[i] = 0.5 * (1.0 - z);
      w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    return std::make_pair(x, w);
  }();
  return table;
}

// Turning point on the side given by sign: U(s) = E.
double turning_point(const std::function<double(double)>& U, double energy, double sign, double guess, double limit)
{
  double lo = 0.0, hi = guess;
  while (U(sign * hi) < energy) {
    lo = hi;
    hi *= 1.6;
    if (hi > limit) throw ComputationError("barrier exceeded: energy above the confining barrier");
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    double mid = 0.5 * (lo + hi);
    (U(sign * mid) < energy ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Integral over [0, s_t] of ds / sqrt(E - U(sign s)) via s = s_t (1 - u^2).
double half_period_integral(const std::function<double(double)>& U, double energy, double sign, double st)
{
  const auto& [x, w] = gauss_legendre_unit();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double u = x[i];
    double s = st * (1.0 - u * u);
    double gap = energy - U(sign * s);
    if (gap <= 0.0) throw ComputationError("axial profile is not monotone between the minimum and turning point");
    sum += w[i] * 2.0 * st * u / std::sqrt(gap);
  }
  return sum;
}

}  // namespace

double axial_frequency_at_energy(const std::function<double(double)>& U, double mass, double energy,
                                 double length_scale)
{
  if (!(energy > 0.0)) throw InputError("oscillation energy must be positive");
  double limit = 1e3 * length_scale;
  double sp = turning_point(U, energy, +1.0, 1e-3 * length_scale, limit);
  double sm = turning_point(U, energy, -1.0, 1e-3 * length_scale, limit);
  // T = 2 * sqrt(m/2) * integral ds / sqrt(E - U) across both sides
  double I = half_period_integral(U, energy, +1.0, sp) + half_period_integral(U, energy, -1.0, sm);
  double period = 2.0 * std::sqrt(0.5 * mass) * I;
  return 2.0 * constants::pi / period;
}

double anharmonic_broadening(const PotentialModel& model, const Vec3& site, const ParticleSpecies& species,
                             double temperature, double depth_eV)
{
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  double energy = constants::boltzmann * temperature;
  if (depth_eV < 0.0) depth_eV = trap_depth(model, site, species);
  if (energy >= depth_eV * constants::elementary_charge)
    throw ComputationError("barrier exceeded: k_B T is above the trap depth");
  double phi_zz = model.sample(site, true).hessian(2, 2);
  double w0 = std::sqrt(species.charge * phi_zz / species.mass);
  auto U = axial_profile(model, site, species);
  // amplitude of the harmonic orbit sets the bracketing scale
  double amp = std::sqrt(2.0 * energy / (species.charge * phi_zz));
  double wE = axial_frequency_at_energy(U, species.mass, energy, std::min(amp, 0.5 * site.z()));
  return std::abs(wE - w0);
}

double cyclotron_radius(const ParticleSpecies& species, double temperature, const MagneticField& B)
{
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  if (!(B.B0 > 0.0)) throw InputError("magnetic field must be positive");
  return std::sqrt(2.0 * species.mass * constants::boltzmann * temperature) / (std::abs(species.charge) * B.B0);
}

double spin_coupling_estimate(double gradient, double omega_z, const ParticleSpecies& species)
{
  if (gradient < 0.0) throw InputError("field gradient must be nonnegative");
  if (!(omega_z > 0.0)) throw InputError("axial frequency must be positive");
  double mb = constants::bohr_magneton * gradient;
  return mb * mb / (2.0 * species.mass * constants::hbar * omega_z * omega_z);
}

// --- composite -------------------------------------------------------------------

TrapSite characterize_site(const PotentialModel& model, const Vec3& seed, const ParticleSpecies& species,
                           const MagneticField& B, const SiteOptions& options)
{
  StationaryPoint sp = find_stationary_point(model, seed, species);
  TrapSite site;
  site.position = sp.position;
  site.kind = sp.kind;
  site.hessian = model.sample(sp.position, true).hessian;
  TrapFrequencies f = motional_frequencies(site.hessian, species, B);
  site.omega_z = f.omega_z;
  site.omega_plus = f.omega_plus;
  site.omega_minus = f.omega_minus;
  site.omega_c = f.omega_c;
  site.stable = f.stable;

  Eigen::SelfAdjointEigenSolver<Mat3> es(site.hessian);
  site.principal_axes = es.eigenvectors();
  if (site.principal_axes.determinant() < 0.0) site.principal_axes.col(0) *= -1.0;
  // axial principal axis: the eigenvector confining this species
  int ax = species.charge > 0 ? 2 : 0;
  double c = std::min(1.0, std::abs(site.principal_axes.col(ax).z()));
  site.axis_tilt_deg = std::acos(c) * 180.0 / constants::pi;
  if (site.axis_tilt_deg > 5.0) {
    std::ostringstream msg;
    msg << "principal axis tilted " << site.axis_tilt_deg << " deg from the field axis";
    site.warnings.push_back(msg.str());
  }
  if (!site.stable) site.warnings.push_back("unstable: 2 omega_z^2 >= omega_c^2");
  if (site.kind != SiteKind::axial_saddle) site.warnings.push_back("site is not an axial saddle (" + to_string(site.kind) + ")");
  if (options.compute_depth) site.depth_eV = trap_depth(model, site.position, species, options.z_max);
  return site;
}

}  // namespace pixeltrap
