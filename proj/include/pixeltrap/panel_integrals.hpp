#pragma once

#include "pixeltrap/geometry.hpp"
#include "pixeltrap/types.hpp"

namespace pixeltrap {

/// Inside this radius (in panel diameters) the panel kernel is the exact
/// analytic integral; beyond it the panel is replaced by degree-5
/// quadrature point charges, handed over smoothly across a one-diameter
/// shell.
inline constexpr double kNearFieldDiameters = 5.0;
inline constexpr double kBlendDiameters = 1.0;
inline constexpr double kFarFieldDiameters = kNearFieldDiameters + kBlendDiameters;

/// I(p) = integral over the panel of dA' / |p - r'| (units of length).
double panel_integral(const Panel& panel, const Vec3& p);

/// I together with its gradient and (optionally) Hessian with respect to p.
void panel_integral_derivs(const Panel& panel, const Vec3& p, double& value, Vec3& gradient, Mat3* hessian);

/// Potential at p per unit total panel charge (V/C), uniform density.
/// Exact inside the near zone, quadrature charges beyond.
double panel_kernel(const Panel& panel, const Vec3& p);

/// Kernel plus gradient and optional Hessian, per unit charge.
void panel_kernel_derivs(const Panel& panel, const Vec3& p, double& value, Vec3& gradient, Mat3* hessian);

inline bool in_near_zone(const Panel& panel, const Vec3& p)
{
  return (p - panel.centroid).squaredNorm() < kNearFieldDiameters * kNearFieldDiameters * panel.diameter * panel.diameter;
}

}  // namespace pixeltrap
