#include "pixeltrap/bem.hpp"

#include <cmath>
#include <sstream>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/dense_lu.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/panel_integrals.hpp"
#include "pixeltrap/parallel.hpp"

namespace pixeltrap {

InfluenceSystem assemble(const PanelMesh& mesh)
{
  if (mesh.panels.empty()) throw InputError("cannot assemble an empty mesh");
  for (const auto& p : mesh.panels)
    if (!(p.area > 0.0)) throw DegeneratePanelError("panel of electrode '" + p.electrode_id + "' has zero area");
  const auto n = static_cast<Eigen::Index>(mesh.size());
  InfluenceSystem sys;
  sys.mesh_hash = mesh.hash();
  sys.matrix.resize(n, n);
  // column j is contiguous, so parallel over source panels
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t j) {
    const Panel& src = mesh.panels[j];
    double* col = sys.matrix.col(static_cast<Eigen::Index>(j)).data();
    for (Eigen::Index i = 0; i < n; ++i) col[i] = panel_kernel(src, mesh.panels[i].centroid);
  });
  return sys;
}

namespace {

Eigen::MatrixXd indicator_rhs(const PanelMesh& mesh, std::size_t k_count)
{
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mesh.size()), static_cast<Eigen::Index>(k_count));
  for (std::size_t i = 0; i < mesh.size(); ++i) b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(mesh.panels[i].electrode)) = 1.0;
  return b;
}

// A x - b recomputed from the kernels (the dense matrix is gone after factoring).
Eigen::MatrixXd residual(const PanelMesh& mesh, const Eigen::MatrixXd& x, const Eigen::MatrixXd& b)
{
  const auto n = static_cast<Eigen::Index>(mesh.size());
  Eigen::MatrixXd r(b.rows(), b.cols());
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const Vec3& c = mesh.panels[i].centroid;
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x.cols());
    for (Eigen::Index j = 0; j < n; ++j) acc += panel_kernel(mesh.panels[j], c) * x.row(j);
    r.row(static_cast<Eigen::Index>(i)) = acc - b.row(static_cast<Eigen::Index>(i));
  });
  return r;
}

}  // namespace

ChargeBasis solve_basis(InfluenceSystem system, const ElectrodeLayout& layout, const PanelMesh& mesh)
{
  if (system.matrix.rows() != static_cast<Eigen::Index>(mesh.size()))
    throw InputError("influence system does not match the mesh");
  for (const auto& p : mesh.panels)
    if (p.electrode >= layout.size() || layout.electrodes[p.electrode].id != p.electrode_id)
      throw UnknownElectrodeError("panel references electrode '" + p.electrode_id + "' missing from the layout");
  DenseLU lu(std::move(system.matrix));
  Eigen::MatrixXd b = indicator_rhs(mesh, layout.size());
  Eigen::MatrixXd x = lu.solve(b);
  Eigen::MatrixXd r = residual(mesh, x, b);
  double worst = r.cwiseAbs().maxCoeff();
  for (int pass = 0; pass < 2 && worst > 1e-12; ++pass) {
    x -= lu.solve(r);
    r = residual(mesh, x, b);
    worst = r.cwiseAbs().maxCoeff();
  }
  if (!std::isfinite(worst) || worst > 1e-10) {
    std::ostringstream msg;
    msg << "boundary-element solve residual " << worst << " V exceeds 1e-10 V (singular or ill-conditioned mesh)";
    throw SingularMatrixError(msg.str());
  }
  ChargeBasis basis;
  basis.layout = layout;
  basis.mesh = mesh;
  basis.charges = std::move(x);
  basis.max_residual = worst;
  return basis;
}

ChargeBasis build_basis(const ElectrodeLayout& layout, const PanelMesh& mesh)
{
  return solve_basis(assemble(mesh), layout, mesh);
}

Eigen::VectorXd voltage_vector(const ChargeBasis& basis, const VoltageSet& voltages)
{
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.electrode_count()));
  for (const auto& [id, volts] : voltages) {
    std::size_t k = basis.layout.index_of(id);
    if (!std::isfinite(volts) || std::abs(volts) > kVoltageSanityBound)
      throw InputError("voltage " + std::to_string(volts) + " V on '" + id + "' exceeds the 1000 V sanity bound");
    v(static_cast<Eigen::Index>(k)) = volts;
  }
  return v;
}

VoltageSet voltage_set(const ChargeBasis& basis, const Eigen::VectorXd& v)
{
  VoltageSet out;
  for (std::size_t k = 0; k < basis.layout.size(); ++k) out[basis.layout.electrodes[k].id] = v(static_cast<Eigen::Index>(k));
  return out;
}

Eigen::VectorXd panel_charges(const ChargeBasis& basis, const VoltageSet& voltages)
{
  return basis.charges * voltage_vector(basis, voltages);
}

void check_off_conductor(const ChargeBasis& basis, const Vec3& p)
{
  double scale = std::max(basis.layout.outer_radius(), 1e-12);
  if (std::abs(p.z()) > 1e-12 * scale) return;
  Vec2 xy(p.x(), p.y());
  for (const auto& e : basis.layout.electrodes)
    if (point_in_polygon(e.polygon, xy)) {
      std::ostringstream msg;
      msg << "evaluation point (" << p.x() << ", " << p.y() << ", " << p.z() << ") lies on electrode '" << e.id << "'";
      throw OnConductorError(msg.str());
    }
}

double potential_from_charges(const ChargeBasis& basis, const Eigen::VectorXd& q, const Vec3& p)
{
  double phi = 0.0;
  const auto& panels = basis.mesh.panels;
  for (std::size_t j = 0; j < panels.size(); ++j) phi += q(static_cast<Eigen::Index>(j)) * panel_kernel(panels[j], p);
  return phi;
}

FieldSample sample_from_charges(const ChargeBasis& basis, const Eigen::VectorXd& q, const Vec3& p, bool with_hessian)
{
  FieldSample s;
  Vec3 grad = Vec3::Zero();
  const auto& panels = basis.mesh.panels;
  double value;
  Vec3 g;
  Mat3 h;
  for (std::size_t j = 0; j < panels.size(); ++j) {
    double qj = q(static_cast<Eigen::Index>(j));
    if (qj == 0.0) continue;
    panel_kernel_derivs(panels[j], p, value, g, with_hessian ? &h : nullptr);
    s.potential += qj * value;
    grad += qj * g;
    if (with_hessian) s.hessian += qj * h;
  }
  s.field = -grad;
  return s;
}

double potential_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis)
{
  check_off_conductor(basis, p);
  return potential_from_charges(basis, panel_charges(basis, voltages), p);
}

Vec3 field_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis)
{
  check_off_conductor(basis, p);
  return sample_from_charges(basis, panel_charges(basis, voltages), p, false).field;
}

Mat3 hessian_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis)
{
  check_off_conductor(basis, p);
  return sample_from_charges(basis, panel_charges(basis, voltages), p, true).hessian;
}

Eigen::VectorXd electrode_potentials_at(const ChargeBasis& basis, const Vec3& p)
{
  const auto& panels = basis.mesh.panels;
  Eigen::VectorXd g(static_cast<Eigen::Index>(panels.size()));
  for (std::size_t j = 0; j < panels.size(); ++j) g(static_cast<Eigen::Index>(j)) = panel_kernel(panels[j], p);
  return basis.charges.transpose() * g;
}

Eigen::Matrix3Xd electrode_fields_at(const ChargeBasis& basis, const Vec3& p)
{
  const auto& panels = basis.mesh.panels;
  Eigen::Matrix3Xd g(3, static_cast<Eigen::Index>(panels.size()));
  double value;
  Vec3 grad;
  for (std::size_t j = 0; j < panels.size(); ++j) {
    panel_kernel_derivs(panels[j], p, value, grad, nullptr);
    g.col(static_cast<Eigen::Index>(j)) = -grad;
  }
  return g * basis.charges;
}

double surface_potential(const ChargeBasis& basis, const Eigen::VectorXd& q, const Vec2& xy)
{
  return potential_from_charges(basis, q, Vec3(xy.x(), xy.y(), 0.0));
}

Vec3 GridSpec::node(int i, int j, int k) const
{
  auto coord = [&](int axis, int idx) {
    return n[axis] > 1 ? lo[axis] + (hi[axis] - lo[axis]) * idx / (n[axis] - 1) : lo[axis];
  };
  return {coord(0, i), coord(1, j), coord(2, k)};
}

std::vector<double> grid_sample(const GridSpec& grid, const VoltageSet& voltages, const ChargeBasis& basis)
{
  for (int a = 0; a < 3; ++a)
    if (grid.n[a] < 1) throw InputError("grid resolution must be >= 1 along every axis");
  Eigen::VectorXd q = panel_charges(basis, voltages);
  std::vector<double> out(grid.size());
  const int ny = grid.n[1], nz = grid.n[2];
  for (int i = 0; i < grid.n[0]; ++i)
    for (int j = 0; j < ny; ++j)
      for (int k = 0; k < nz; ++k) check_off_conductor(basis, grid.node(i, j, k));
  parallel_for(out.size(), [&](std::size_t idx) {
    int k = static_cast<int>(idx % nz);
    int j = static_cast<int>((idx / nz) % ny);
    int i = static_cast<int>(idx / (static_cast<std::size_t>(nz) * ny));
    out[idx] = potential_from_charges(basis, q, grid.node(i, j, k));
  });
  return out;
}

PanelMesh polar_mesh(double r_inner, double r_outer, int n_radial, int n_azimuth, double grading, bool refine_inner,
                     bool refine_outer, const std::string& electrode_id, std::size_t electrode_index)
{
  if (!(r_outer > r_inner) || r_inner < 0.0 || n_radial < 1 || n_azimuth < 3 || !(grading >= 1.0))
    throw InputError("invalid polar mesh parameters");
  std::vector<double> widths(n_radial);
  for (int i = 0; i < n_radial; ++i) {
    double w = std::numeric_limits<double>::infinity();
    if (refine_inner) w = std::min(w, std::pow(grading, i));
    if (refine_outer) w = std::min(w, std::pow(grading, n_radial - 1 - i));
    widths[i] = std::isfinite(w) ? w : 1.0;
  }
  double total = 0.0;
  for (double w : widths) total += w;
  std::vector<double> radii(1, r_inner);
  for (double w : widths) radii.push_back(radii.back() + (r_outer - r_inner) * w / total);
  radii.back() = r_outer;

  PanelMesh mesh;
  mesh.electrode_ids = {electrode_id};
  auto pt = [](double r, double phi) { return Vec2(r * std::cos(phi), r * std::sin(phi)); };
  for (int i = 0; i < n_radial; ++i)
    for (int k = 0; k < n_azimuth; ++k) {
      double p0 = 2.0 * constants::pi * k / n_azimuth;
      double p1 = 2.0 * constants::pi * (k + 1) / n_azimuth;
      double r0 = radii[i], r1 = radii[i + 1];
      if (r0 == 0.0) {
        std::array<Vec2, 3> tri{Vec2(0.0, 0.0), pt(r1, p0), pt(r1, p1)};
        mesh.panels.push_back(make_panel(tri, electrode_id, electrode_index));
      } else {
        std::array<Vec2, 4> quad{pt(r0, p0), pt(r1, p0), pt(r1, p1), pt(r0, p1)};
        mesh.panels.push_back(make_panel(quad, electrode_id, electrode_index));
      }
    }
  return mesh;
}

void append_mesh(PanelMesh& into, const PanelMesh& from)
{
  into.panels.insert(into.panels.end(), from.panels.begin(), from.panels.end());
  for (const auto& id : from.electrode_ids)
    if (std::find(into.electrode_ids.begin(), into.electrode_ids.end(), id) == into.electrode_ids.end())
      into.electrode_ids.push_back(id);
}

}  // namespace pixeltrap
