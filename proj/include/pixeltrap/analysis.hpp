#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pixeltrap/bem.hpp"
#include "pixeltrap/types.hpp"

namespace pixeltrap {

struct ParticleSpecies {
  double charge = 0.0;  // C, signed
  double mass = 0.0;    // kg
  std::string name;

  static ParticleSpecies ca40_plus();
  static ParticleSpecies electron();
};

/// Looks up a preset by name ("Ca40_plus", "electron").
ParticleSpecies species_by_name(const std::string& name);

struct MagneticField {
  double B0 = 1.0;  // tesla, along +z
};

/// Anything that can report potential, field and curvature at a point.
class PotentialModel {
 public:
  virtual ~PotentialModel() = default;
  virtual double potential(const Vec3& p) const = 0;
  virtual FieldSample sample(const Vec3& p, bool with_hessian) const = 0;
};

/// BEM-backed model for one voltage assignment.
class BemModel : public PotentialModel {
 public:
  BemModel(const ChargeBasis& basis, const VoltageSet& voltages);
  BemModel(const ChargeBasis& basis, Eigen::VectorXd panel_charges);
  double potential(const Vec3& p) const override;
  FieldSample sample(const Vec3& p, bool with_hessian) const override;
  const ChargeBasis& basis() const { return *basis_; }
  const Eigen::VectorXd& charges() const { return q_; }

 private:
  const ChargeBasis* basis_;
  Eigen::VectorXd q_;
};

/// Phi = U / r0^2 (2 z^2 - rho^2) about `center`, so U > 0 confines cations
/// axially; plus an optional uniform
/// field (Phi -= E0 . (p - center)).
struct IdealQuadrupole : PotentialModel {
  double U = 1.0;
  double r0 = 1e-3;
  Vec3 center = Vec3::Zero();
  Vec3 uniform_field = Vec3::Zero();

  IdealQuadrupole() = default;
  IdealQuadrupole(double U_, double r0_, Vec3 center_ = Vec3::Zero(), Vec3 E0 = Vec3::Zero())
      : U(U_), r0(r0_), center(center_), uniform_field(E0)
  {
  }
  double potential(const Vec3& p) const override;
  FieldSample sample(const Vec3& p, bool with_hessian) const override;
  /// Analytic stationary point including the uniform-field shift.
  Vec3 stationary_point() const;
};

/// omega_z = sqrt(q Phi_zz / m) = sqrt(4 q U / (m r0^2)); the textbook
/// sqrt(2 e U / (m d^2)) form matches with d = r0 / sqrt(2).
double ideal_axial_frequency(const IdealQuadrupole& quad, const ParticleSpecies& species);

enum class SiteKind { axial_saddle, minimum, maximum, other };
std::string to_string(SiteKind kind);

struct StationaryPoint {
  Vec3 position = Vec3::Zero();
  double gradient_norm = 0.0;
  int iterations = 0;
  SiteKind kind = SiteKind::other;
};

/// Newton iteration on grad Phi = 0 with the analytic Hessian. Iterates
/// that cross z = 0 or wander more than max_excursion from the seed
/// (default 20 seed heights) raise LeftDomainError.
StationaryPoint find_stationary_point(const PotentialModel& model, const Vec3& seed, const ParticleSpecies& species,
                                      double tolerance = 1e-6, int max_iterations = 100, double max_excursion = 0.0);

struct TrapFrequencies {
  double omega_z = 0.0, omega_plus = 0.0, omega_minus = 0.0, omega_c = 0.0;
  bool stable = false;
};

TrapFrequencies motional_frequencies(const Mat3& hessian, const ParticleSpecies& species, const MagneticField& B);
/// Same, from the axial curvature alone.
TrapFrequencies motional_frequencies(double phi_zz, const ParticleSpecies& species, const MagneticField& B);

double cyclotron_frequency(const ParticleSpecies& species, const MagneticField& B);

/// Smallest escape barrier (eV) along the magnetic-field line through the
/// site: upward to z_max and downward to the electrode surface.
double trap_depth(const PotentialModel& model, const Vec3& site, const ParticleSpecies& species, double z_max = 0.0,
                  double step = 1e-6);

/// Axial oscillation frequency at energy E (J) above the minimum of the
/// 1D potential energy profile U(s) (J), U(0) = 0 the minimum, from the
/// period integral.
double axial_frequency_at_energy(const std::function<double(double)>& U, double mass, double energy,
                                 double length_scale);

/// |omega(k_B T) - omega(0+)| for the axial potential through the site.
double anharmonic_broadening(const PotentialModel& model, const Vec3& site, const ParticleSpecies& species,
                             double temperature, double depth_eV = -1.0);

/// m v / (|q| B) with v = sqrt(2 k_B T / m).
double cyclotron_radius(const ParticleSpecies& species, double temperature, const MagneticField& B);

/// Order-of-magnitude gradient-induced spin-spin coupling,
/// J = (mu_B b)^2 / (2 m hbar omega_z^2), rad/s.
double spin_coupling_estimate(double gradient, double omega_z, const ParticleSpecies& species);

struct TrapSite {
  Vec3 position = Vec3::Zero();
  double omega_z = 0.0, omega_plus = 0.0, omega_minus = 0.0, omega_c = 0.0;
  double depth_eV = 0.0;
  bool stable = false;
  Mat3 principal_axes = Mat3::Identity();
  Mat3 hessian = Mat3::Zero();
  /// Angle between the axial principal axis and z, degrees.
  double axis_tilt_deg = 0.0;
  SiteKind kind = SiteKind::other;
  std::vector<std::string> warnings;
};

struct SiteOptions {
  bool compute_depth = true;
  double z_max = 0.0;  // 0: ten times the site height
};

TrapSite characterize_site(const PotentialModel& model, const Vec3& seed, const ParticleSpecies& species,
                           const MagneticField& B, const SiteOptions& options = {});

}  // namespace pixeltrap
