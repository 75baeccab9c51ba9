#include "pixeltrap/panel_integrals.hpp"

#include <cmath>

#include "pixeltrap/constants.hpp"

namespace pixeltrap {

namespace {

struct EdgeTerms {
  double t0, lm, lp, Rm, Rp, R0sq, L, omega;
  Vec2 s, m;
};

EdgeTerms edge_terms(const Vec3& a3, const Vec3& b3, const Vec3& p)
{
  EdgeTerms e;
  Vec2 a(a3.x() - p.x(), a3.y() - p.y());
  Vec2 ab(b3.x() - a3.x(), b3.y() - a3.y());
  double len = ab.norm();
  e.s = ab / len;
  e.m = Vec2(e.s.y(), -e.s.x());
  e.t0 = a.dot(e.m);
  e.lm = a.dot(e.s);
  e.lp = e.lm + len;
  double h = p.z();
  double floor = 1e-30 * len * len;
  e.R0sq = std::max(e.t0 * e.t0 + h * h, floor);
  e.Rm = std::sqrt(e.lm * e.lm + e.R0sq);
  e.Rp = std::sqrt(e.lp * e.lp + e.R0sq);
  // ln((Rp + lp) / (Rm + lm)) with cancellation-free forms for negative l
  if (e.lm < 0.0 && e.lp < 0.0) {
    e.L = std::log((e.Rm - e.lm) / (e.Rp - e.lp));
  } else {
    double num = e.lp >= 0.0 ? e.Rp + e.lp : e.R0sq / (e.Rp - e.lp);
    double den = e.lm >= 0.0 ? e.Rm + e.lm : e.R0sq / (e.Rm - e.lm);
    e.L = std::log(num / den);
  }
  double ah = std::abs(h);
  e.omega = std::atan(e.t0 * e.lp / (e.R0sq + ah * e.Rp)) - std::atan(e.t0 * e.lm / (e.R0sq + ah * e.Rm));
  return e;
}

// 1 / (R (R + l)), stable for l < 0
double inv_rrl(double R, double l, double R0sq)
{
  return l >= 0.0 ? 1.0 / (R * (R + l)) : (R - l) / (R * R0sq);
}

}  // namespace

double panel_integral(const Panel& panel, const Vec3& p)
{
  double sum_log = 0.0, sum_omega = 0.0;
  for (int i = 0; i < panel.n_vertices; ++i) {
    const Vec3& a = panel.vertices[i];
    const Vec3& b = panel.vertices[(i + 1) % panel.n_vertices];
    EdgeTerms e = edge_terms(a, b, p);
    sum_log += e.t0 * e.L;
    sum_omega += e.omega;
  }
  return sum_log - std::abs(p.z()) * sum_omega;
}

void panel_integral_derivs(const Panel& panel, const Vec3& p, double& value, Vec3& gradient, Mat3* hessian)
{
  double sum_log = 0.0, sum_omega = 0.0;
  Vec2 gxy = Vec2::Zero();
  Eigen::Matrix2d hxy = Eigen::Matrix2d::Zero();
  Vec2 hxz = Vec2::Zero();
  double h = p.z();
  for (int i = 0; i < panel.n_vertices; ++i) {
    const Vec3& a = panel.vertices[i];
    const Vec3& b = panel.vertices[(i + 1) % panel.n_vertices];
    EdgeTerms e = edge_terms(a, b, p);
    sum_log += e.t0 * e.L;
    sum_omega += e.omega;
    gxy -= e.m * e.L;
    if (hessian) {
      double kp = inv_rrl(e.Rp, e.lp, e.R0sq);
      double km = inv_rrl(e.Rm, e.lm, e.R0sq);
      Vec2 dL = -(e.s / e.Rp + e.t0 * kp * e.m) + (e.s / e.Rm + e.t0 * km * e.m);
      hxy -= e.m * dL.transpose();
      hxz -= e.m * (h * (kp - km));
    }
  }
  value = sum_log - std::abs(h) * sum_omega;
  double sgn = h > 0.0 ? 1.0 : (h < 0.0 ? -1.0 : 0.0);
  gradient = Vec3(gxy.x(), gxy.y(), -sgn * sum_omega);
  if (hessian) {
    Mat3& H = *hessian;
    double hxy_sym = 0.5 * (hxy(0, 1) + hxy(1, 0));
    H << hxy(0, 0), hxy_sym, hxz.x(), hxy_sym, hxy(1, 1), hxz.y(), hxz.x(), hxz.y(), -(hxy(0, 0) + hxy(1, 1));
  }
}

namespace {

void nodal_derivs(const Panel& panel, const Vec3& p, double& value, Vec3* gradient, Mat3* hessian)
{
  value = 0.0;
  if (gradient) gradient->setZero();
  if (hessian) hessian->setZero();
  for (int k = 0; k < panel.n_nodes; ++k) {
    Vec3 d(p.x() - panel.nodes[k].x(), p.y() - panel.nodes[k].y(), p.z());
    double r2 = d.squaredNorm();
    double ir = 1.0 / std::sqrt(r2);
    double w = panel.weights[k];
    value += w * ir;
    if (!gradient) continue;
    double ir3 = ir * ir * ir;
    *gradient -= (w * ir3) * d;
    if (hessian) *hessian += (w * ir3 * ir * ir) * (3.0 * d * d.transpose() - r2 * Mat3::Identity());
  }
}

enum class Kind { exact, nodal };

void kind_derivs(Kind kind, const Panel& panel, const Vec3& p, double& value, Vec3* gradient, Mat3* hessian)
{
  switch (kind) {
    case Kind::exact:
      if (gradient) {
        panel_integral_derivs(panel, p, value, *gradient, hessian);
        *gradient /= panel.area;
        if (hessian) *hessian /= panel.area;
      } else {
        value = panel_integral(panel, p);
      }
      value /= panel.area;
      return;
    case Kind::nodal: nodal_derivs(panel, p, value, gradient, hessian); return;
  }
}

// Kernel per unit charge in units of 1/length, with a C2 blending shell so
// the potential stays smooth across the zone boundary.
void blended_derivs(const Panel& panel, const Vec3& p, double& value, Vec3* gradient, Mat3* hessian)
{
  Vec3 d = p - panel.centroid;
  double r = d.norm();
  double diam = panel.diameter;
  if (r < kNearFieldDiameters * diam) {
    kind_derivs(Kind::exact, panel, p, value, gradient, hessian);
    return;
  }
  if (r >= (kNearFieldDiameters + kBlendDiameters) * diam) {
    kind_derivs(Kind::nodal, panel, p, value, gradient, hessian);
    return;
  }
  Kind inner = Kind::exact, outer = Kind::nodal;
  double r0 = kNearFieldDiameters * diam;
  double width = kBlendDiameters * diam;
  double f, g;
  Vec3 gf, gg;
  Mat3 hf, hg;
  kind_derivs(inner, panel, p, f, gradient ? &gf : nullptr, hessian ? &hf : nullptr);
  kind_derivs(outer, panel, p, g, gradient ? &gg : nullptr, hessian ? &hg : nullptr);
  double t = (r - r0) / width;
  double w = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
  double D = g - f;
  value = f + w * D;
  if (!gradient) return;
  double w1 = 30.0 * t * t * (1.0 - t) * (1.0 - t) / width;
  Vec3 n = d / r;
  Vec3 gw = w1 * n;
  Vec3 gD = gg - gf;
  *gradient = gf + w * gD + D * gw;
  if (!hessian) return;
  double w2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (width * width);
  Mat3 nn = n * n.transpose();
  Mat3 hw = w2 * nn + (w1 / r) * (Mat3::Identity() - nn);
  *hessian = hf + w * (hg - hf) + gw * gD.transpose() + gD * gw.transpose() + D * hw;
}

}  // namespace

double panel_kernel(const Panel& panel, const Vec3& p)
{
  double v;
  blended_derivs(panel, p, v, nullptr, nullptr);
  return constants::coulomb * v;
}

void panel_kernel_derivs(const Panel& panel, const Vec3& p, double& value, Vec3& gradient, Mat3* hessian)
{
  blended_derivs(panel, p, value, &gradient, hessian);
  value *= constants::coulomb;
  gradient *= constants::coulomb;
  if (hessian) *hessian *= constants::coulomb;
}

}  // namespace pixeltrap
