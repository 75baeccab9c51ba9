#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pixeltrap/analysis.hpp"
#include "pixeltrap/bem.hpp"
#include "pixeltrap/dynamics.hpp"
#include "pixeltrap/optimizer.hpp"
#include "pixeltrap/spectrum.hpp"

namespace pixeltrap {

using Json = nlohmann::ordered_json;

enum class TableFormat { csv, json };
TableFormat table_format_from_string(const std::string& s);
std::string extension(TableFormat f);

/// Column table written either as CSV (header row) or as a JSON object of
/// equal-length arrays.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void write(std::ostream& out, TableFormat format) const;
  void save(const std::filesystem::path& path, TableFormat format) const;
  static Table parse_csv(std::istream& in);
  std::size_t column(const std::string& name) const;
};

// --- JSON forms ----------------------------------------------------------------

Json vec_to_json(const Vec3& v);
Vec3 vec_from_json(const Json& j, const std::string& where);

/// SI fields plus a "derived" block (kHz, MHz, eV, um) marked as such.
Json site_to_json(const TrapSite& site);

Json voltages_to_json(const VoltageSet& v);
VoltageSet voltages_from_json(const Json& j);

/// {waypoints: [...], timestamps_s: [...]} plus the optional site track.
Json plan_to_json(const TransportPlan& plan);
TransportPlan plan_from_json(const Json& j);
Json plan_metrics_to_json(const PlanMetrics& m);

/// Residuals, active bounds and, when given, the achieved frequencies.
Json solve_report_to_json(const SolveReport& report, const std::optional<TrapSite>& achieved);

/// Optimizer target file. Either an analytic well
///   {"center": [x, y, z], "omega_z_hz": f, "in_plane_fraction": 0.5, "axis": [1, 0]}
/// or explicit samples
///   {"points": [[x, y, z], ...], "values": [...], "weights": [...]}
/// with an optional "free_offset" flag. Positions in metres.
TargetSpec target_from_json(const Json& j, const ParticleSpecies& species);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);

// --- tables ---------------------------------------------------------------------

/// t,x,y,z,vx,vy,vz,E_kin,E_pot
Table trajectory_table(const Trajectory& t);
/// Inverse of trajectory_table (energies kept, dt from the sample spacing).
Trajectory trajectory_from_table(const Table& table);
/// freq_hz,amplitude
Table spectrum_table(const Spectrum& s);
/// x,y,z,phi in GridSpec order.
Table grid_table(const GridSpec& grid, const std::vector<double>& values);
/// Raw row-major float64 potentials, no header.
void save_grid_binary(const std::vector<double>& values, const std::filesystem::path& path);

/// z,phi,energy_eV along the field line through (x, y).
Table axial_profile(const PotentialModel& model, double x, double y, double z_lo, double z_hi, int n,
                    const ParticleSpecies& species);

}  // namespace pixeltrap
