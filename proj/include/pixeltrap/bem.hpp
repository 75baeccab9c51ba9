#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pixeltrap/geometry.hpp"
#include "pixeltrap/types.hpp"

namespace pixeltrap {

/// Electrode id -> volts. Electrodes not listed are at 0 V.
using VoltageSet = std::map<std::string, double>;

inline constexpr double kVoltageSanityBound = 1000.0;

/// Dense collocation matrix: A(i, j) is the potential at centroid i for a
/// unit charge spread uniformly over panel j.
struct InfluenceSystem {
  std::uint64_t mesh_hash = 0;
  Eigen::MatrixXd matrix;
};

InfluenceSystem assemble(const PanelMesh& mesh);

/// Unit-voltage surface charge solutions, one column per electrode.
struct ChargeBasis {
  ElectrodeLayout layout;
  PanelMesh mesh;
  /// panels x electrodes, coulombs per volt.
  Eigen::MatrixXd charges;
  /// Largest |A q - b| over all solves, volts.
  double max_residual = 0.0;

  std::size_t electrode_count() const { return static_cast<std::size_t>(charges.cols()); }
  std::size_t panel_count() const { return mesh.size(); }
  /// Total charge (C) on the whole surface for electrode k at 1 V.
  double total_charge(std::size_t k) const { return charges.col(static_cast<Eigen::Index>(k)).sum(); }
};

/// Factors the system (consuming its matrix) and solves one right-hand side
/// per electrode.
ChargeBasis solve_basis(InfluenceSystem system, const ElectrodeLayout& layout, const PanelMesh& mesh);

/// Mesh, assemble and solve in one go.
ChargeBasis build_basis(const ElectrodeLayout& layout, const PanelMesh& mesh);

/// Voltage vector in basis order. Throws UnknownElectrodeError for ids not
/// in the layout and InputError beyond the sanity bound.
Eigen::VectorXd voltage_vector(const ChargeBasis& basis, const VoltageSet& voltages);
VoltageSet voltage_set(const ChargeBasis& basis, const Eigen::VectorXd& v);
/// Panel charges for a voltage assignment.
Eigen::VectorXd panel_charges(const ChargeBasis& basis, const VoltageSet& voltages);

struct FieldSample {
  double potential = 0.0;
  Vec3 field = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();
};

/// Throws OnConductorError if p lies in the electrode plane inside an
/// electrode polygon.
void check_off_conductor(const ChargeBasis& basis, const Vec3& p);

double potential_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis);
Vec3 field_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis);
Mat3 hessian_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis);

/// Direct summation over panel charges q; no conductor check.
double potential_from_charges(const ChargeBasis& basis, const Eigen::VectorXd& q, const Vec3& p);
FieldSample sample_from_charges(const ChargeBasis& basis, const Eigen::VectorXd& q, const Vec3& p,
                                bool with_hessian);

/// Potential of each electrode at 1 V (others grounded) at p.
Eigen::VectorXd electrode_potentials_at(const ChargeBasis& basis, const Vec3& p);
/// Same, for the field: 3 x electrodes.
Eigen::Matrix3Xd electrode_fields_at(const ChargeBasis& basis, const Vec3& p);

/// Potential on the electrode plane itself (panel centroids included).
double surface_potential(const ChargeBasis& basis, const Eigen::VectorXd& q, const Vec2& xy);

struct GridSpec {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  std::array<int, 3> n{1, 1, 1};

  std::size_t size() const { return static_cast<std::size_t>(n[0]) * n[1] * n[2]; }
  Vec3 node(int i, int j, int k) const;
};

/// Row-major (x slowest, z fastest) potentials at the grid nodes.
std::vector<double> grid_sample(const GridSpec& grid, const VoltageSet& voltages, const ChargeBasis& basis);

/// Panel mesh of an annulus (or disk for r_inner = 0) in polar cells,
/// radially graded geometrically toward the requested edges.
PanelMesh polar_mesh(double r_inner, double r_outer, int n_radial, int n_azimuth, double grading,
                     bool refine_inner, bool refine_outer, const std::string& electrode_id,
                     std::size_t electrode_index);
void append_mesh(PanelMesh& into, const PanelMesh& from);

}  // namespace pixeltrap
