#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pixeltrap/analysis.hpp"
#include "pixeltrap/basis_cache.hpp"
#include "pixeltrap/bem.hpp"
#include "pixeltrap/dynamics.hpp"
#include "pixeltrap/geometry.hpp"
#include "pixeltrap/optimizer.hpp"
#include "pixeltrap/reports.hpp"

namespace pixeltrap {

/// Panel count of the reference discretization.
inline constexpr std::size_t kReferencePanels = 12446;
/// Field used by the presets, tesla.
inline constexpr double kReferenceField = 10.0;

/// Three rings of 300 um pixels with 4 um gaps; guard annulus from
/// 1.05 to 5.25 array radii, outer plane out to three times that.
LayoutParams reference_layout_params();

/// Same voltage on every pixel of a ring (center = ring 0), the guard
/// quadrants and the outer segments.
struct RingVoltages {
  std::array<double, 4> rings{};
  double guard = 0.0;
  double outer = 0.0;
};
VoltageSet ring_voltages(const ElectrodeLayout& layout, const RingVoltages& v);

enum class ScenarioKind { static_trap, crystal, racetrack, lateral_transport, vertical_transport };
std::string to_string(ScenarioKind k);

struct Scenario {
  std::string name;
  std::string description;
  ScenarioKind kind = ScenarioKind::static_trap;
  LayoutParams layout = reference_layout_params();
  std::size_t panels = kReferencePanels;
  ParticleSpecies species = ParticleSpecies::ca40_plus();
  MagneticField B{kReferenceField};

  RingVoltages voltages;            // static_trap
  double broadening_temperature = 0.0;  // > 0: report the anharmonic shift there

  int crystal_sites = 3;
  double crystal_radius = 300e-6;

  double racetrack_diameter = 580e-6;
  RacetrackOptions racetrack;

  std::string from_pixel = "px0_0", to_pixel = "px1_0";
  int lateral_steps = 12;
  std::vector<double> heights{150e-6, 200e-6, 250e-6};
  TransportOptions transport;
  /// Transport scenarios: integrate the plan with the ion starting at rest.
  bool simulate = true;
};

/// The preset registry, in a fixed order.
const std::vector<Scenario>& scenario_registry();
std::vector<std::string> scenario_names();
/// Throws InputError listing the available names.
const Scenario& find_scenario(const std::string& name);

/// Basis for a scenario's layout, from the cache when possible.
ChargeBasis scenario_basis(const Scenario& s, const std::filesystem::path& cache_dir = default_cache_dir());

/// First potential-energy minimum along the field line through (x, y),
/// scanning up from z_lo; nullopt when there is none below z_max.
std::optional<double> axial_minimum_height(const PotentialModel& model, double x, double y,
                                           const ParticleSpecies& species, double z_lo = 10e-6,
                                           double z_max = 3e-3, double step = 5e-6);

struct ScenarioRunOptions {
  bool simulate = true;
  int xy_points = 61;
  int profile_points = 400;
  unsigned seed = 0;
  SimulationOptions simulation;
};

struct ScenarioResult {
  std::string name;
  ScenarioKind kind = ScenarioKind::static_trap;
  VoltageSet voltages;
  std::vector<TrapSite> sites;
  std::optional<RacetrackResult> racetrack;
  std::optional<TransportPlan> plan;
  std::optional<PlanMetrics> plan_metrics;
  std::optional<Trajectory> trajectory;
  Table axial_profile;
  GridSpec xy_grid;
  std::vector<double> xy_values;
  /// Scalar results by name (SI unless the suffix says otherwise); the
  /// acceptance manifest refers to these keys.
  std::map<std::string, double> metrics;
  std::vector<std::string> warnings;
};

ScenarioResult run_scenario(const Scenario& s, const ChargeBasis& basis, const ScenarioRunOptions& options = {});

/// Writes summary.json, site(s).json, axial_profile, xy_grid and, for
/// transport, plan.json and trajectory into dir.
void write_scenario(const ScenarioResult& r, const std::filesystem::path& dir, TableFormat format);

Json scenario_summary(const ScenarioResult& r);

}  // namespace pixeltrap
