#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pixeltrap/analysis.hpp"
#include "pixeltrap/bem.hpp"

namespace pixeltrap {

/// Potential targets at sample points. When `center` is set the target came
/// from an analytic well and reports carry the achieved curvature there.
struct TargetSpec {
  std::vector<Vec3> points;
  std::vector<double> values;
  std::vector<double> weights;
  /// Solve for an additive constant as well (unregularized).
  bool free_offset = true;
  std::optional<Vec3> center;
  double axial_curvature = 0.0;

  void validate() const;
};

/// Harmonic well of the quadrupole form about `center` with Phi_zz given.
/// `in_plane_fraction` splits the (negative) in-plane curvature between
/// the `axis` direction and its perpendicular: 0.5 is rotationally
/// symmetric, smaller values elongate the well along `axis`.
TargetSpec harmonic_target(const Vec3& center, double axial_curvature, double in_plane_fraction = 0.5,
                           const Vec2& axis = Vec2(1.0, 0.0));

/// Sampling stencil: 3x3x3 grid of half-width 30 um plus six face points at 60 um.
std::vector<Vec3> harmonic_stencil(const Vec3& center, double half_width = 30e-6, double face = 60e-6);

/// Axial curvature that gives `omega_z` for the species.
double curvature_for_frequency(double omega_z, const ParticleSpecies& species);

struct RegularizationConfig {
  double lambda = 1e-3;
  double v_min = -kVoltageSanityBound;
  double v_max = kVoltageSanityBound;
  /// Held exactly at these values; everything else in the layout not
  /// listed as free is held at 0 V.
  VoltageSet fixed;
  /// Optional prior: the penalty is lambda^2 |v - reference|^2.
  VoltageSet reference;

  void validate() const;
};

/// Electrodes tied to one shared voltage.
using ElectrodeGroups = std::vector<std::vector<std::string>>;

/// Entry (i, k): potential at point i with free electrode k at 1 V.
Eigen::MatrixXd response_matrix(const ChargeBasis& basis, const std::vector<Vec3>& points,
                                const std::vector<std::string>& free_electrodes);

struct SolveReport {
  VoltageSet voltages;
  double residual_rms = 0.0;              // volts, unweighted
  double unconstrained_residual_rms = 0.0;
  double offset = 0.0;
  double voltage_norm = 0.0;              // 2-norm over free electrodes
  std::optional<double> achieved_curvature;  // Phi_zz at the target center
  std::vector<std::string> active_bounds;
  int passes = 0;
};

/// Minimizes |W(A v - t)|^2 + lambda^2 |v - v_ref|^2 within bounds by
/// active-set clipping. `free_electrodes` empty means every non-fixed
/// electrode; `groups`, when given, replaces the free list.
SolveReport solve_voltages(const TargetSpec& target, const RegularizationConfig& reg, const ChargeBasis& basis,
                           const std::vector<std::string>& free_electrodes = {}, const ElectrodeGroups& groups = {});

/// Pixels grouped by ring index (center first).
ElectrodeGroups ring_groups(const ElectrodeLayout& layout);

// --- transport ---------------------------------------------------------------

struct WaypointInfo {
  Vec3 site = Vec3::Zero();
  double omega_z = 0.0;
  double omega_minus = 0.0;
  double omega_plus = 0.0;
  bool stable = false;
};

struct TransportPlan {
  std::vector<VoltageSet> waypoints;
  std::vector<double> timestamps;
  Vec3 start_site = Vec3::Zero();
  Vec3 end_site = Vec3::Zero();
  std::vector<WaypointInfo> info;

  void validate() const;
  /// Voltages at time t by linear interpolation (clamped at the ends).
  VoltageSet voltages_at(double t) const;
  double duration() const { return timestamps.empty() ? 0.0 : timestamps.back() - timestamps.front(); }
};

struct TransportOptions {
  double max_step_voltage = 1.0;  // per electrode between waypoints
  double adiabaticity = 0.01;     // bound on |d omega/dt| / omega_min^2
  double safety = 0.5;            // timestamps aim at safety * bound
  double lambda = 2e-3;
  /// Elongation used while translating (in-plane fraction along the path).
  double elongation = 0.2;
  /// Minimum dwell per interval, in magnetron periods.
  double min_interval_periods = 2.0;
  /// Magnetron radius (m) one waypoint's change of site velocity may excite.
  double max_kick = 0.05e-6;
};

/// Single-site pattern centered on a pixel: the pixel at v0, hex shells
/// 1, 2 and >= 3 at v1, v2, v3; guards and outer plane at 0 V.
VoltageSet pixel_pattern(const ElectrodeLayout& layout, const std::string& pixel, double v0, double v1, double v2,
                         double v3);

/// Widen, translate, recompress between two pixels. The endpoint well is
/// fitted to the single-pixel pattern at `from_pixel`.
TransportPlan lateral_transport_plan(const std::string& from_pixel, const std::string& to_pixel, int n_steps,
                                     const ChargeBasis& basis, const ParticleSpecies& species,
                                     const MagneticField& B, const TransportOptions& options = {});

/// Ring-symmetric wells at the requested heights (monotone order).
TransportPlan vertical_transport_plan(const std::vector<double>& heights, const ChargeBasis& basis,
                                      const ParticleSpecies& species, const MagneticField& B,
                                      double omega_z_target = 2.0 * 3.141592653589793 * 500e3,
                                      const TransportOptions& options = {});

/// Transport-plan checks used by the tests and reports.
struct PlanMetrics {
  bool all_confining = true;
  bool monotone = true;
  double max_step_voltage = 0.0;
  double max_site_step = 0.0;
  double adiabaticity = 0.0;
  double omega_ratio_min = 0.0, omega_ratio_max = 0.0;  // omega_z / endpoint omega_z
};
PlanMetrics plan_metrics(const TransportPlan& plan);

// --- multi-site layouts ---------------------------------------------------------

struct CrystalResult {
  VoltageSet voltages;
  std::vector<TrapSite> sites;
};

/// n sites on a circle of the given radius at angles 2 pi k / n. Each site
/// is built from the three pixels nearest to it (0.6 V), their lattice
/// neighbours (-4.0 V) and all other pixels at 0.5 V.
CrystalResult crystal_voltages(int n_sites, double ring_radius, const ChargeBasis& basis,
                               const ParticleSpecies& species, const MagneticField& B, bool with_depth = true,
                               double v_site = 0.6, double v_neighbour = -4.0, double v_rest = 0.5);

struct RayCrest {
  double azimuth = 0.0;
  double radius = 0.0;
  double height = 0.0;
  double omega_z = 0.0;
};

struct RacetrackResult {
  VoltageSet voltages;
  std::vector<RayCrest> crests;
  double mean_radius = 0.0;
  double omega_z_variation = 0.0;  // (max - min) / mean
};

struct RacetrackOptions {
  double height = 150e-6;
  double omega_z = 2.0 * 3.141592653589793 * 500e3;
  double lambda = 2e-3;
  int n_rays = 36;
  int n_azimuth_samples = 24;
};

RacetrackResult racetrack_voltages(double ring_diameter, const ChargeBasis& basis, const ParticleSpecies& species,
                                   const RacetrackOptions& options = {});

/// Crest analysis on n rays for any voltage set (2D stationary point in
/// the (rho, z) half-plane of each ray).
std::vector<RayCrest> ridge_crests(const BemModel& model, const ParticleSpecies& species, double rho_guess,
                                   double z_guess, int n_rays);

}  // namespace pixeltrap
