#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pixeltrap/bem.hpp"
#include "pixeltrap/constants.hpp"
#include "pixeltrap/dense_lu.hpp"
#include "pixeltrap/error.hpp"

using namespace pixeltrap;

namespace {

// A small two-ring layout: cheap enough to solve in every test.
struct Small {
  ElectrodeLayout layout;
  PanelMesh mesh;
  ChargeBasis basis;
};

const Small& small()
{
  static const Small s = [] {
    Small out;
    LayoutParams p;
    p.n_rings = 1;
    out.layout = build_pixel_layout(p);
    out.mesh = mesh_layout(out.layout, 1200);
    out.basis = build_basis(out.layout, out.mesh);
    return out;
  }();
  return s;
}

ElectrodeLayout disk_layout(double R, int n, double plane_outer = 0.0)
{
  ElectrodeLayout layout;
  Electrode disk{"disk", ElectrodeGroup::pixel, {}};
  for (int k = 0; k < n; ++k)
    disk.polygon.emplace_back(R * std::cos(2 * constants::pi * k / n), R * std::sin(2 * constants::pi * k / n));
  layout.electrodes.push_back(disk);
  if (plane_outer > 0.0) {
    Electrode plane{"plane", ElectrodeGroup::outer_segment, {}};
    for (int k = 0; k < n; ++k)
      plane.polygon.emplace_back(plane_outer * std::cos(2 * constants::pi * k / n),
                                 plane_outer * std::sin(2 * constants::pi * k / n));
    layout.electrodes.push_back(plane);
  }
  return layout;
}

}  // namespace

TEST(Influence, PositiveAndDiagonallyLargest)
{
  const auto& s = small();
  auto sys = assemble(s.mesh);
  const auto& A = sys.matrix;
  EXPECT_GT(A.minCoeff(), 0.0);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    Eigen::VectorXd row = A.row(i);
    double diag = row(i);
    row(i) = 0.0;
    EXPECT_GT(diag, row.maxCoeff());
  }
}

TEST(Influence, FarPairsAreReciprocal)
{
  // collocation is only exactly symmetric for far pairs and for translated
  // copies of centrally symmetric panels
  const auto& s = small();
  auto sys = assemble(s.mesh);
  const auto& P = s.mesh.panels;
  int checked = 0;
  for (std::size_t i = 0; i < P.size(); i += 7)
    for (std::size_t j = 0; j < P.size(); j += 11) {
      double d = (P[i].centroid - P[j].centroid).norm();
      if (d < 5.0 * std::max(P[i].diameter, P[j].diameter)) continue;
      double aij = sys.matrix(i, j), aji = sys.matrix(j, i);
      double mono = constants::coulomb / d;
      // multipole corrections differ; the monopole part is symmetric
      EXPECT_NEAR(aij, aji, 2e-2 * mono);
      ++checked;
    }
  EXPECT_GT(checked, 100);
}

TEST(Basis, BoundaryConditionRecovery)
{
  const auto& s = small();
  EXPECT_LE(s.basis.max_residual, 1e-10);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uv(-10.0, 10.0);
  VoltageSet v;
  for (const auto& e : s.layout.electrodes) v[e.id] = uv(rng);
  Eigen::VectorXd q = panel_charges(s.basis, v);
  std::uniform_int_distribution<std::size_t> pick(0, s.mesh.size() - 1);
  for (int t = 0; t < 100; ++t) {
    const auto& p = s.mesh.panels[pick(rng)];
    EXPECT_NEAR(surface_potential(s.basis, q, p.centroid.head<2>()), v.at(p.electrode_id), 1e-6);
  }
}

TEST(Basis, LinearitySumOfColumns)
{
  const auto& s = small();
  DenseLU lu(assemble(s.mesh).matrix);
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(s.mesh.size(), 1);
  Eigen::VectorXd q = lu.solve(ones);
  Eigen::VectorXd sum = s.basis.charges.rowwise().sum();
  EXPECT_LE((q - sum).cwiseAbs().maxCoeff(), 1e-9 * q.cwiseAbs().maxCoeff());
}

TEST(Basis, PermutationInvariance)
{
  const auto& s = small();
  PanelMesh perm = s.mesh;
  std::mt19937 rng(11);
  std::vector<std::size_t> order(perm.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) perm.panels[i] = s.mesh.panels[order[i]];
  auto b2 = build_basis(s.layout, perm);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (Eigen::Index k = 0; k < b2.charges.cols(); ++k)
      EXPECT_NEAR(b2.charges(i, k), s.basis.charges(order[i], k), 1e-9 * s.basis.charges.cwiseAbs().maxCoeff());
}

TEST(Evaluation, ZeroVoltagesZeroPotential)
{
  const auto& s = small();
  EXPECT_EQ(potential_at(Vec3(1e-5, 2e-5, 1e-4), {}, s.basis), 0.0);
}

TEST(Evaluation, Superposition)
{
  const auto& s = small();
  VoltageSet v1{{"px0_0", 1.0}, {"guard1", -3.0}}, v2{{"px1_2", 2.0}, {"outer3", 5.0}};
  double a = 0.7, b = -1.9;
  VoltageSet mix;
  for (const auto& e : s.layout.electrodes) {
    double x = (v1.count(e.id) ? v1[e.id] : 0.0) * a + (v2.count(e.id) ? v2[e.id] : 0.0) * b;
    mix[e.id] = x;
  }
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-3e-4, 3e-4), uz(2e-5, 4e-4);
  for (int t = 0; t < 20; ++t) {
    Vec3 p(u(rng), u(rng), uz(rng));
    double lhs = potential_at(p, mix, s.basis);
    double rhs = a * potential_at(p, v1, s.basis) + b * potential_at(p, v2, s.basis);
    EXPECT_NEAR(lhs, rhs, 1e-12 * (std::abs(lhs) + 1e-3));
  }
}

TEST(Evaluation, HarmonicAndFieldIsMinusGradient)
{
  const auto& s = small();
  VoltageSet v{{"px0_0", 1.0}, {"px1_0", -2.8}, {"px1_3", 1.0}, {"guard0", 3.0}, {"outer2", -1.0}};
  Eigen::VectorXd q = panel_charges(s.basis, v);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-4e-4, 4e-4), uz(3e-5, 5e-4);
  for (int t = 0; t < 100; ++t) {
    Vec3 p(u(rng), u(rng), uz(rng));
    auto smp = sample_from_charges(s.basis, q, p, true);
    Eigen::SelfAdjointEigenSolver<Mat3> es(smp.hessian);
    double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    EXPECT_LE(std::abs(smp.hessian.trace()), 1e-6 * scale);
    double h = 1e-8;
    Vec3 fd;
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      fd[a] = -(potential_from_charges(s.basis, q, p + e) - potential_from_charges(s.basis, q, p - e)) / (2 * h);
    }
    EXPECT_LE((fd - smp.field).norm(), 1e-6 * smp.field.norm() + 1e-9) << p.transpose();
  }
}

TEST(Evaluation, FiniteDifferenceLaplacian)
{
  const auto& s = small();
  VoltageSet v{{"px0_0", 1.0}, {"guard0", -2.0}, {"guard2", -2.0}, {"outer1", 4.0}};
  Eigen::VectorXd q = panel_charges(s.basis, v);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-3e-4, 3e-4), uz(5e-5, 4e-4);
  for (int t = 0; t < 100; ++t) {
    Vec3 p(u(rng), u(rng), uz(rng));
    double h = 1e-3 * p.z();
    double c = potential_from_charges(s.basis, q, p), lap = 0.0;
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      lap += potential_from_charges(s.basis, q, p + e) + potential_from_charges(s.basis, q, p - e) - 2 * c;
    }
    lap /= h * h;
    Mat3 H = sample_from_charges(s.basis, q, p, true).hessian;
    EXPECT_LE(std::abs(lap), 1e-5 * H.cwiseAbs().maxCoeff() + 1e-3) << p.transpose();
  }
}

TEST(Evaluation, OnConductorRejected)
{
  const auto& s = small();
  EXPECT_THROW(potential_at(Vec3(0, 0, 0), {{"px0_0", 1.0}}, s.basis), OnConductorError);
  EXPECT_THROW(potential_at(Vec3(0, 0, 1e-4), {{"nope", 1.0}}, s.basis), UnknownElectrodeError);
  EXPECT_THROW(potential_at(Vec3(0, 0, 1e-4), {{"px0_0", 2000.0}}, s.basis), InputError);
}

TEST(Evaluation, FarFieldDecayExponent)
{
  const auto& s = small();
  VoltageSet v{{"px0_0", 1.0}};
  double r0 = 10.0 * s.layout.outer_radius();
  Vec3 dir = Vec3(0.3, 0.2, 1.0).normalized();
  double p1 = potential_at(r0 * dir, v, s.basis), p2 = potential_at(4.0 * r0 * dir, v, s.basis);
  double slope = std::log(std::abs(p2 / p1)) / std::log(4.0);
  EXPECT_NEAR(slope, -1.0, 0.05);
}

TEST(Grid, SingleNodeMatchesPointwise)
{
  const auto& s = small();
  VoltageSet v{{"px0_0", 1.0}, {"guard3", -1.0}};
  GridSpec g;
  g.lo = Vec3(1e-5, -2e-5, 1.5e-4);
  g.hi = g.lo;
  auto out = grid_sample(g, v, s.basis);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], potential_at(g.lo, v, s.basis));
  GridSpec g2;
  g2.lo = Vec3(-1e-4, -1e-4, 5e-5);
  g2.hi = Vec3(1e-4, 1e-4, 2e-4);
  g2.n = {3, 4, 2};
  auto out2 = grid_sample(g2, v, s.basis);
  EXPECT_EQ(out2[(2 * 4 + 1) * 2 + 1], potential_at(g2.node(2, 1, 1), v, s.basis));
}

TEST(Disk, IsolatedCapacitance)
{
  double R = 1e-3;
  auto layout = disk_layout(R, 256);
  auto mesh = polar_mesh(0.0, R, 24, 96, 1.25, false, true, "disk", 0);
  auto basis = build_basis(layout, mesh);
  double C = basis.total_charge(0);
  EXPECT_NEAR(C / (8.0 * constants::epsilon0 * R), 1.0, 1e-2);
}

TEST(Disk, GroundedPlaneOnAxis)
{
  double R = 1e-3;
  auto layout = disk_layout(R, 256, 30 * R);
  PanelMesh mesh = polar_mesh(0.0, R, 16, 64, 1.3, false, true, "disk", 0);
  append_mesh(mesh, polar_mesh(R, 30 * R, 30, 64, 1.2, true, false, "plane", 1));
  auto basis = build_basis(layout, mesh);
  for (double z = 0.2 * R; z <= 2.0 * R + 1e-12; z += 0.2 * R) {
    double phi = potential_at(Vec3(0, 0, z), {{"disk", 1.0}}, basis);
    double exact = 1.0 - z / std::sqrt(z * z + R * R);
    EXPECT_NEAR(phi / exact, 1.0, 0.02) << z;
  }
}
