#include "pixeltrap/spectrum.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"

namespace pixeltrap {

namespace {

std::mutex& planner_mutex()
{
  static std::mutex m;
  return m;
}

struct Local {
  std::size_t index;
  double value;
};

std::vector<Local> local_maxima(const Spectrum& s)
{
  std::vector<Local> out;
  const auto& a = s.amplitude;
  for (std::size_t i = 1; i + 1 < a.size(); ++i)
    if (a[i] > a[i - 1] && a[i] >= a[i + 1]) out.push_back({i, a[i]});
  return out;
}

SpectrumPeak interpolate(const Spectrum& s, std::size_t i)
{
  const auto& a = s.amplitude;
  double df = s.frequency[1] - s.frequency[0];
  double l = std::log(std::max(a[i - 1], 1e-300)), c = std::log(std::max(a[i], 1e-300)),
         r = std::log(std::max(a[i + 1], 1e-300));
  double den = l - 2.0 * c + r;
  double delta = den < 0.0 ? 0.5 * (l - r) / den : 0.0;
  delta = std::clamp(delta, -0.5, 0.5);
  return {s.frequency[i] + delta * df, std::exp(c - 0.25 * (l - r) * delta)};
}

}  // namespace

Spectrum spectrum(const std::vector<double>& series, double sample_interval, double slowest_frequency, int padding)
{
  std::size_t n = series.size();
  if (n < 16) throw InsufficientSamplesError("spectrum needs at least 16 samples");
  if (!(sample_interval > 0.0)) throw InputError("sample interval must be positive");
  if (padding < 1) throw InputError("padding factor must be >= 1");
  double span = sample_interval * static_cast<double>(n);
  if (slowest_frequency > 0.0 && span * slowest_frequency / (2.0 * constants::pi) < 20.0)
    throw InsufficientSamplesError("window covers fewer than 20 periods of the slowest motion");

  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(n);
  std::size_t m = n * static_cast<std::size_t>(padding);
  std::vector<double> in(m, 0.0);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double w = 0.5 - 0.5 * std::cos(2.0 * constants::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    in[i] = (series[i] - mean) * w;
    wsum += w;
  }
  std::vector<fftw_complex> out(m / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(m), in.data(), out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  Spectrum s;
  s.resolution = 2.0 * constants::pi / span;
  double df = 2.0 * constants::pi / (sample_interval * static_cast<double>(m));
  s.frequency.resize(out.size());
  s.amplitude.resize(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    s.frequency[k] = df * static_cast<double>(k);
    s.amplitude[k] = 2.0 * std::hypot(out[k][0], out[k][1]) / wsum;
  }
  return s;
}

Spectrum spectrum(const Trajectory& trajectory, int axis, double slowest_frequency, int padding)
{
  if (axis < 0 || axis > 2) throw InputError("spectrum axis must be 0, 1 or 2");
  std::vector<double> series;
  series.reserve(trajectory.samples.size());
  for (const auto& s : trajectory.samples) series.push_back(s.state.position(axis));
  return spectrum(series, trajectory.sample_interval(), slowest_frequency, padding);
}

std::vector<SpectrumPeak> find_peaks(const Spectrum& s, std::size_t max_peaks, double min_relative)
{
  auto loc = local_maxima(s);
  if (loc.empty()) return {};
  double top = std::max_element(loc.begin(), loc.end(), [](auto& a, auto& b) { return a.value < b.value; })->value;
  std::sort(loc.begin(), loc.end(), [](auto& a, auto& b) { return a.value > b.value; });
  std::vector<SpectrumPeak> out;
  for (const auto& l : loc) {
    if (l.value < min_relative * top || out.size() >= max_peaks) break;
    out.push_back(interpolate(s, l.index));
  }
  return out;
}

SpectrumPeak peak_near(const Spectrum& s, double expected)
{
  auto loc = local_maxima(s);
  if (loc.empty()) throw ComputationError("spectrum has no peaks");
  // strongest local maximum within 5% of the expectation, else the nearest one
  const Local* best = nullptr;
  for (const auto& l : loc)
    if (std::abs(s.frequency[l.index] - expected) <= 0.05 * expected && (!best || l.value > best->value)) best = &l;
  if (!best) {
    for (const auto& l : loc)
      if (!best || std::abs(s.frequency[l.index] - expected) < std::abs(s.frequency[best->index] - expected)) best = &l;
  }
  return interpolate(s, best->index);
}

}  // namespace pixeltrap
