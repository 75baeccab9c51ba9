#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pixeltrap/analysis.hpp"
#include "pixeltrap/bem.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/optimizer.hpp"

namespace pixeltrap {

struct ParticleState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double time = 0.0;
};

/// Quadrupolar drive on the guard segments: V_k = A cos(w t + phase - 2 phi_k)
/// with phi_k the segment's central azimuth. With four quadrants this is
/// the split-ring form whose co-rotating half couples the two radial modes.
struct RotatingWallDrive {
  double amplitude = 0.0;   // volts
  double frequency = 0.0;   // rad/s
  double phase = 0.0;
  std::vector<std::string> target_electrodes;

  void validate() const;
  /// Drive on the four guard quadrants of a layout.
  static RotatingWallDrive guard_quadrants(const ElectrodeLayout& layout, double amplitude, double frequency,
                                           double phase = 0.0);
};

struct TrajectorySample {
  ParticleState state;
  double kinetic = 0.0;    // J
  double potential = 0.0;  // J, q Phi
  double total() const { return kinetic + potential; }
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  double dt = 0.0;
  int stride = 1;
  std::vector<std::string> warnings;

  double sample_interval() const { return dt * stride; }
  /// max |E(t) - E(0)| / |E(0)| over the samples.
  double relative_energy_drift() const;
  /// Same drift relative to the motional energy above `reference` (J).
  double motional_energy_drift(double reference) const;
  void validate() const;
};

/// One Boris step: half electric kick, exact magnetic rotation, half kick,
/// then drift. E is the field at the state, V/m.
ParticleState boris_step(const ParticleState& state, const Vec3& E, const MagneticField& B, double dt,
                         const ParticleSpecies& species);

double default_time_step(const ParticleSpecies& species, const MagneticField& B);

// --- field sources -------------------------------------------------------------

/// Potential (V) and field (V/m) at a point and time.
struct FieldValue {
  double potential = 0.0;
  Vec3 field = Vec3::Zero();
};

class FieldSource {
 public:
  virtual ~FieldSource() = default;
  virtual FieldValue at(const Vec3& p, double t) const = 0;
};

/// Box of an interpolation grid: center, half extents in its own frame,
/// and the frame's rotation about z (local x along `yaw`).
struct GridBox {
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Constant(12e-6);
  double yaw = 0.0;

  static GridBox cube(const Vec3& center, double half_width);
  /// Smallest box aligned with first -> last point holding every point
  /// plus `margin` on all sides.
  static GridBox around(const std::vector<Vec3>& points, double margin);
};

/// Tricubic (Lekien-Marsden) interpolant on a regular grid from nodal f,
/// grad f, mixed second derivatives and f_xyz, for several components
/// that are combined with weights at evaluation time (the interpolant is
/// linear in the nodal data).
class TricubicGrid {
 public:
  /// Nodal data in the grid frame: f, fx, fy, fz, fxy, fxz, fyz, fxyz.
  using NodeData = std::array<double, 8>;

  TricubicGrid(const GridBox& box, double spacing, std::size_t components);

  std::size_t components() const { return data_.size(); }
  const std::array<int, 3>& dims() const { return n_; }
  double spacing() const { return h_; }
  const GridBox& box() const { return box_; }
  std::size_t node_count() const { return static_cast<std::size_t>(n_[0]) * n_[1] * n_[2]; }
  /// Global position of node (i, j, k).
  Vec3 node(int i, int j, int k) const;
  void set_component(std::size_t c, std::vector<NodeData> nodes);

  bool contains(const Vec3& p) const;
  /// Weighted value and global gradient; weights has one entry per component.
  void eval(const Vec3& p, const Eigen::VectorXd& weights, double& f, Vec3& grad) const;
  void eval(const Vec3& p, double& f, Vec3& grad) const;

 private:
  GridBox box_;
  double h_;
  std::array<int, 3> n_;
  Vec3 lo_local_;
  double cos_, sin_;
  std::vector<std::vector<NodeData>> data_;

  Vec3 to_local(const Vec3& p) const;
};

struct GridOptions {
  double spacing = 2e-6;
  double half_width = 12e-6;
  /// Largest accepted interpolation error relative to direct evaluation.
  double tolerance = 1e-5;
  /// Plans: margin around the waypoint sites, and the node budget above
  /// which the run falls back to direct summation.
  double plan_margin = 6e-6;
  std::size_t max_nodes = 60000;
};

/// Grid of several charge vectors (columns) sharing one pass of kernel
/// evaluations. f_xyz comes from differencing nodal Hessians.
TricubicGrid build_grid(const ChargeBasis& basis, const Eigen::MatrixXd& charges, const GridBox& box, double spacing);

/// Largest error of component c against direct evaluation at off-node
/// points: potential relative to the largest |Phi| met, field relative to
/// the largest |E| met.
double grid_error(const TricubicGrid& grid, std::size_t c, const ChargeBasis& basis, const Eigen::VectorXd& charges);

enum class FieldMethod { direct, treecode, grid };
std::string to_string(FieldMethod m);
FieldMethod field_method_from_string(const std::string& s);

struct SimulationOptions {
  double dt = 0.0;                 // 0: default_time_step
  int stride = 10;
  double damping = -1.0;           // gamma, 1/s; < 0 means none
  FieldMethod method = FieldMethod::grid;
  double theta = 0.3;              // treecode opening angle
  GridOptions grid;
  double escape_radius = 1e-3;     // from the initial position
  std::optional<RotatingWallDrive> drive;
  /// Called on every recorded sample; return false to stop early.
  std::function<bool(const TrajectorySample&)> observer;
};

/// Default damping rate gamma = omega_c / 1e4.
double default_damping(const ParticleSpecies& species, const MagneticField& B);

/// Static voltages. The grid is centered on state0 and validated against
/// direct evaluation first; if validation fails the run falls back to
/// direct summation with a warning. Points outside the grid use direct.
Trajectory simulate(const ParticleState& state0, const VoltageSet& voltages, const ChargeBasis& basis,
                    const MagneticField& B, const ParticleSpecies& species, double duration,
                    const SimulationOptions& options = {});

/// Plan execution with voltages interpolated linearly between waypoints.
/// duration must match the plan (<= 0 takes the plan's).
Trajectory simulate(const ParticleState& state0, const TransportPlan& plan, const ChargeBasis& basis,
                    const MagneticField& B, const ParticleSpecies& species, double duration,
                    const SimulationOptions& options = {});

/// Generic integration over any field source.
Trajectory integrate(const ParticleState& state0, const FieldSource& source, const MagneticField& B,
                     const ParticleSpecies& species, double duration, const SimulationOptions& options);

/// Thrown when the particle leaves the search box; carries the last state.
class EscapeError : public ConfinementLostError {
 public:
  EscapeError(const std::string& what, ParticleState last) : ConfinementLostError(what), last_state(last) {}
  ParticleState last_state;
};

// --- mode analysis -----------------------------------------------------------------

struct RadialModes {
  Vec2 cyclotron = Vec2::Zero();   // rho_plus
  Vec2 magnetron = Vec2::Zero();   // rho_minus
  double r_plus() const { return cyclotron.norm(); }
  double r_minus() const { return magnetron.norm(); }
};

/// Splits radial position and velocity about `center` into the two
/// circular modes of an ideal Penning trap with the given frequencies.
RadialModes decompose_radial(const ParticleState& s, const Vec3& center, const TrapSite& site, double charge);

/// Motional energies relative to the site: axial, cyclotron and magnetron
/// (the last one is negative).
struct ModeEnergies {
  double axial = 0.0, cyclotron = 0.0, magnetron = 0.0;
  /// Departure from rest at the site, counting the magnetron magnitude.
  double excitation() const { return axial + cyclotron + std::abs(magnetron); }
};
ModeEnergies mode_energies(const ParticleState& s, const TrapSite& site, const ParticleSpecies& species);

struct AxializationResult {
  Trajectory trajectory;
  std::vector<double> times;
  std::vector<double> magnetron_radius;
  std::vector<double> cyclotron_radius;
  /// Envelope (per-window maxima) at the start and end of the run.
  double envelope_start = 0.0, envelope_end = 0.0;
  double envelope_ratio() const { return envelope_start > 0 ? envelope_end / envelope_start : 1.0; }
  std::vector<std::string> warnings;
};

/// Runs the drive on a static trap and tracks the magnetron radius.
AxializationResult axialize(const ParticleState& state0, const VoltageSet& voltages, const ChargeBasis& basis,
                            const MagneticField& B, const ParticleSpecies& species, const TrapSite& site,
                            const RotatingWallDrive& drive, double duration, SimulationOptions options = {});

/// Initial state at the site with a pure magnetron offset of radius r
/// (velocity of the slow circle) plus an optional axial offset.
ParticleState magnetron_launch(const TrapSite& site, double radius, double charge, double axial_offset = 0.0);

}  // namespace pixeltrap
