#pragma once

#include <vector>

#include "pixeltrap/dynamics.hpp"

namespace pixeltrap {

/// One-sided amplitude spectrum of a sampled component, frequencies in rad/s.
struct Spectrum {
  std::vector<double> frequency;
  std::vector<double> amplitude;
  /// Bin width before zero padding, rad/s.
  double resolution = 0.0;
};

struct SpectrumPeak {
  double frequency = 0.0;  // rad/s, interpolated
  double amplitude = 0.0;
};

/// Hann-windowed DFT of position component `axis` (0, 1, 2) with the mean
/// removed. `slowest_frequency` (rad/s), when given, must be covered by
/// at least 20 periods. `padding` zero-pads the window by that factor.
Spectrum spectrum(const Trajectory& trajectory, int axis, double slowest_frequency = 0.0, int padding = 4);

/// Same for an arbitrary uniformly sampled series.
Spectrum spectrum(const std::vector<double>& series, double sample_interval, double slowest_frequency = 0.0,
                  int padding = 4);

/// Local maxima above `min_relative` of the largest, strongest first, with
/// log-parabolic interpolation of position and height.
std::vector<SpectrumPeak> find_peaks(const Spectrum& s, std::size_t max_peaks = 4, double min_relative = 0.05);

/// Interpolated peak nearest to `expected` among the local maxima.
SpectrumPeak peak_near(const Spectrum& s, double expected);

}  // namespace pixeltrap
