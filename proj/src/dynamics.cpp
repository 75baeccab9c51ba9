#include "pixeltrap/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/panel_integrals.hpp"
#include "pixeltrap/parallel.hpp"
#include "pixeltrap/treecode.hpp"

namespace pixeltrap {

// --- drive --------------------------------------------------------------------------

void RotatingWallDrive::validate() const
{
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw InputError("drive amplitude must be >= 0");
  if (!std::isfinite(frequency) || !std::isfinite(phase)) throw InputError("drive frequency and phase must be finite");
  if (target_electrodes.empty()) throw InputError("drive needs target electrodes");
}

RotatingWallDrive RotatingWallDrive::guard_quadrants(const ElectrodeLayout& layout, double amplitude,
                                                     double frequency, double phase)
{
  RotatingWallDrive d;
  d.amplitude = amplitude;
  d.frequency = frequency;
  d.phase = phase;
  for (std::size_t i : layout.indices_of(ElectrodeGroup::guard_quadrant)) d.target_electrodes.push_back(layout.electrodes[i].id);
  if (d.target_electrodes.size() != 4) throw InputError("layout does not have four guard quadrants");
  return d;
}

namespace {

// Spatial parts of the drive: V_k = A [cos(wt + phase) cos 2phi_k + sin(wt + phase) sin 2phi_k].
std::pair<VoltageSet, VoltageSet> drive_patterns(const ChargeBasis& basis, const RotatingWallDrive& drive)
{
  VoltageSet c, s;
  for (const auto& id : drive.target_electrodes) {
    auto it = std::find_if(basis.layout.electrodes.begin(), basis.layout.electrodes.end(),
                           [&](const Electrode& e) { return e.id == id; });
    if (it == basis.layout.electrodes.end()) throw UnknownElectrodeError("drive electrode '" + id + "' not in layout");
    Vec2 cen = polygon_centroid(it->polygon);
    double phi = std::atan2(cen.y(), cen.x());
    c[id] = std::cos(2.0 * phi);
    s[id] = std::sin(2.0 * phi);
  }
  return {c, s};
}

void rotate_xy(Vec3& v, double angle)
{
  double c = std::cos(angle), s = std::sin(angle);
  double x = v.x() * c - v.y() * s;
  double y = v.x() * s + v.y() * c;
  v.x() = x;
  v.y() = y;
}

}  // namespace

// --- trajectory ------------------------------------------------------------------------

double Trajectory::relative_energy_drift() const
{
  if (samples.empty()) return 0.0;
  double e0 = samples.front().total();
  double worst = 0.0;
  for (const auto& s : samples) worst = std::max(worst, std::abs(s.total() - e0));
  return std::abs(e0) > 0 ? worst / std::abs(e0) : worst;
}

double Trajectory::motional_energy_drift(double reference) const
{
  if (samples.empty()) return 0.0;
  double e0 = samples.front().total();
  double worst = 0.0;
  for (const auto& s : samples) worst = std::max(worst, std::abs(s.total() - e0));
  double scale = std::abs(e0 - reference);
  return scale > 0 ? worst / scale : worst;
}

void Trajectory::validate() const
{
  for (std::size_t i = 1; i < samples.size(); ++i) {
    double step = samples[i].state.time - samples[i - 1].state.time;
    if (!(step > 0.0)) throw ComputationError("trajectory timestamps not increasing");
    if (std::abs(step - sample_interval()) > 1e-9 * sample_interval() + 1e-12 * std::abs(samples[i].state.time))
      throw ComputationError("trajectory stride not uniform");
  }
}

// --- integrator ----------------------------------------------------------------------------

double default_time_step(const ParticleSpecies& species, const MagneticField& B)
{
  return 2.0 * constants::pi / (100.0 * cyclotron_frequency(species, B));
}

double default_damping(const ParticleSpecies& species, const MagneticField& B)
{
  return cyclotron_frequency(species, B) / 1e4;
}

namespace {

void check_step(double dt, const ParticleSpecies& species, const MagneticField& B)
{
  double limit = 0.05 * 2.0 * constants::pi / cyclotron_frequency(species, B);
  if (!(dt > 0.0) || dt > limit * (1.0 + 1e-12))
    throw InputError("time step must be positive and at most 5% of the cyclotron period");
}

}  // namespace

ParticleState boris_step(const ParticleState& state, const Vec3& E, const MagneticField& B, double dt,
                         const ParticleSpecies& species)
{
  check_step(dt, species, B);
  double qm = species.charge / species.mass;
  ParticleState s = state;
  s.velocity += 0.5 * dt * qm * E;
  // dv/dt = (q/m) v x B z-hat turns the transverse velocity by -qB dt/m
  rotate_xy(s.velocity, -qm * B.B0 * dt);
  s.velocity += 0.5 * dt * qm * E;
  s.position += dt * s.velocity;
  s.time += dt;
  if (s.position.z() <= 0.0) throw PlaneCrossingError("particle crossed the electrode plane");
  return s;
}

// --- tricubic grid ----------------------------------------------------------------------------

namespace {

// Inverse of the 64x64 map from monomial coefficients a_ijk (index i + 4j + 16k)
// to corner data [f, fu, fv, fw, fuv, fuw, fvw, fuvw] x 8 corners.
using Mat64 = Eigen::Matrix<double, 64, 64>;

const Mat64& tricubic_inverse()
{
  static const Mat64 inv = [] {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(64, 64);
    auto dpow = [](int n, int d, double x) {
      // d-th derivative of x^n
      if (d > n) return 0.0;
      double c = 1.0;
      for (int k = 0; k < d; ++k) c *= (n - k);
      return c * std::pow(x, n - d);
    };
    const int der[8][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
    for (int c = 0; c < 8; ++c) {
      double u = c & 1, v = (c >> 1) & 1, w = (c >> 2) & 1;
      for (int d = 0; d < 8; ++d)
        for (int k = 0; k < 4; ++k)
          for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i)
              M(d * 8 + c, i + 4 * j + 16 * k) = dpow(i, der[d][0], u) * dpow(j, der[d][1], v) * dpow(k, der[d][2], w);
    }
    return Mat64(M.inverse());
  }();
  return inv;
}

}  // namespace

GridBox GridBox::cube(const Vec3& center, double half_width)
{
  GridBox b;
  b.center = center;
  b.half_extent = Vec3::Constant(half_width);
  return b;
}

GridBox GridBox::around(const std::vector<Vec3>& points, double margin)
{
  if (points.empty()) throw InputError("grid box needs at least one point");
  GridBox b;
  Vec3 d = points.back() - points.front();
  b.yaw = std::hypot(d.x(), d.y()) > 1e-9 ? std::atan2(d.y(), d.x()) : 0.0;
  double c = std::cos(b.yaw), s = std::sin(b.yaw);
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : points) {
    Vec3 l(c * p.x() + s * p.y(), -s * p.x() + c * p.y(), p.z());
    lo = lo.cwiseMin(l);
    hi = hi.cwiseMax(l);
  }
  Vec3 mid = 0.5 * (lo + hi);
  b.center = Vec3(c * mid.x() - s * mid.y(), s * mid.x() + c * mid.y(), mid.z());
  b.half_extent = 0.5 * (hi - lo) + Vec3::Constant(margin);
  return b;
}

TricubicGrid::TricubicGrid(const GridBox& box, double spacing, std::size_t components)
    : box_(box), h_(spacing), cos_(std::cos(box.yaw)), sin_(std::sin(box.yaw)), data_(components)
{
  if (!(spacing > 0.0)) throw InputError("grid spacing must be positive");
  if (components == 0) throw InputError("grid needs at least one component");
  for (int a = 0; a < 3; ++a) {
    if (!(box.half_extent(a) > 0.0)) throw InputError("grid half extents must be positive");
    int half = std::max(1, static_cast<int>(std::ceil(box.half_extent(a) / spacing - 1e-9)));
    n_[static_cast<std::size_t>(a)] = 2 * half + 1;
    lo_local_(a) = -half * spacing;
  }
  if (box.center.z() + lo_local_.z() <= 0.0) throw InputError("interpolation grid reaches the electrode plane");
}

Vec3 TricubicGrid::node(int i, int j, int k) const
{
  Vec3 l = lo_local_ + h_ * Vec3(i, j, k);
  return box_.center + Vec3(cos_ * l.x() - sin_ * l.y(), sin_ * l.x() + cos_ * l.y(), l.z());
}

Vec3 TricubicGrid::to_local(const Vec3& p) const
{
  Vec3 d = p - box_.center;
  return Vec3(cos_ * d.x() + sin_ * d.y(), -sin_ * d.x() + cos_ * d.y(), d.z());
}

void TricubicGrid::set_component(std::size_t c, std::vector<NodeData> nodes)
{
  if (c >= data_.size()) throw InputError("grid component out of range");
  if (nodes.size() != node_count()) throw InputError("grid node count mismatch");
  data_[c] = std::move(nodes);
}

bool TricubicGrid::contains(const Vec3& p) const
{
  Vec3 l = to_local(p);
  for (int a = 0; a < 3; ++a)
    if (!(std::abs(l(a)) <= -lo_local_(a))) return false;
  return true;
}

void TricubicGrid::eval(const Vec3& p, const Eigen::VectorXd& weights, double& f, Vec3& grad) const
{
  if (static_cast<std::size_t>(weights.size()) != data_.size()) throw InputError("grid weight count mismatch");
  Vec3 l = to_local(p);
  int cell[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    double x = (l(a) - lo_local_(a)) / h_;
    int c = std::clamp(static_cast<int>(std::floor(x)), 0, n_[static_cast<std::size_t>(a)] - 2);
    cell[a] = c;
    t[a] = x - c;
  }
  // combine corner data over components, scaled to unit-cube derivatives
  const double scale[8] = {1, h_, h_, h_, h_ * h_, h_ * h_, h_ * h_, h_ * h_ * h_};
  Eigen::Matrix<double, 64, 1> b = Eigen::Matrix<double, 64, 1>::Zero();
  for (int c = 0; c < 8; ++c) {
    std::size_t id = static_cast<std::size_t>(cell[0] + (c & 1) + n_[0] * (cell[1] + ((c >> 1) & 1) + n_[1] * (cell[2] + ((c >> 2) & 1))));
    for (std::size_t k = 0; k < data_.size(); ++k) {
      double w = weights(static_cast<Eigen::Index>(k));
      if (w == 0.0) continue;
      const NodeData& nd = data_[k][id];
      for (int d = 0; d < 8; ++d) b(d * 8 + c) += w * nd[static_cast<std::size_t>(d)];
    }
  }
  for (int d = 0; d < 8; ++d)
    for (int c = 0; c < 8; ++c) b(d * 8 + c) *= scale[d];
  Eigen::Matrix<double, 64, 1> A = tricubic_inverse() * b;
  double u = t[0], v = t[1], w = t[2];
  double pu[4] = {1, u, u * u, u * u * u}, pv[4] = {1, v, v * v, v * v * v}, pw[4] = {1, w, w * w, w * w * w};
  double du[4] = {0, 1, 2 * u, 3 * u * u}, dv[4] = {0, 1, 2 * v, 3 * v * v}, dw[4] = {0, 1, 2 * w, 3 * w * w};
  double val = 0, gu = 0, gv = 0, gw = 0;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j) {
      double row = 0, rowd = 0;
      for (int i = 0; i < 4; ++i) {
        double a = A(i + 4 * j + 16 * k);
        row += a * pu[i];
        rowd += a * du[i];
      }
      val += row * pv[j] * pw[k];
      gu += rowd * pv[j] * pw[k];
      gv += row * dv[j] * pw[k];
      gw += row * pv[j] * dw[k];
    }
  f = val;
  Vec3 gl = Vec3(gu, gv, gw) / h_;
  grad = Vec3(cos_ * gl.x() - sin_ * gl.y(), sin_ * gl.x() + cos_ * gl.y(), gl.z());
}

void TricubicGrid::eval(const Vec3& p, double& f, Vec3& grad) const
{
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data_.size()));
  w(0) = 1.0;
  eval(p, w, f, grad);
}

TricubicGrid build_grid(const ChargeBasis& basis, const Eigen::MatrixXd& charges, const GridBox& box, double spacing)
{
  if (static_cast<std::size_t>(charges.rows()) != basis.panel_count()) throw InputError("charge matrix does not match the mesh");
  std::size_t K = static_cast<std::size_t>(charges.cols());
  TricubicGrid grid(box, spacing, K);
  const auto& n = grid.dims();
  std::size_t nodes = grid.node_count();
  const auto& panels = basis.mesh.panels;
  const std::size_t N = panels.size();
  double c = std::cos(box.yaw), s = std::sin(box.yaw);
  Mat3 R;
  R << c, -s, 0, s, c, 0, 0, 0, 1;

  // per node and component: f, local gradient, local Hessian
  std::vector<double> f(nodes * K);
  std::vector<Vec3> g(nodes * K);
  std::vector<Mat3> H(nodes * K);
  constexpr std::size_t batch = 16;
  std::size_t n_batches = (nodes + batch - 1) / batch;
  parallel_for(n_batches, [&](std::size_t bi) {
    std::size_t first = bi * batch, count = std::min(batch, nodes - first);
    // rows: f, gx, gy, gz, hxx, hxy, hxz, hyy, hyz, hzz per node
    Eigen::MatrixXd Kb(static_cast<Eigen::Index>(10 * count), static_cast<Eigen::Index>(N));
    for (std::size_t m = 0; m < count; ++m) {
      std::size_t id = first + m;
      int i = static_cast<int>(id % static_cast<std::size_t>(n[0]));
      int j = static_cast<int>((id / static_cast<std::size_t>(n[0])) % static_cast<std::size_t>(n[1]));
      int k = static_cast<int>(id / (static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1])));
      Vec3 p = grid.node(i, j, k);
      double v;
      Vec3 gr;
      Mat3 h;
      auto r0 = static_cast<Eigen::Index>(10 * m);
      for (std::size_t pj = 0; pj < N; ++pj) {
        panel_kernel_derivs(panels[pj], p, v, gr, &h);
        auto col = static_cast<Eigen::Index>(pj);
        Kb(r0, col) = v;
        Kb(r0 + 1, col) = gr.x();
        Kb(r0 + 2, col) = gr.y();
        Kb(r0 + 3, col) = gr.z();
        Kb(r0 + 4, col) = h(0, 0);
        Kb(r0 + 5, col) = h(0, 1);
        Kb(r0 + 6, col) = h(0, 2);
        Kb(r0 + 7, col) = h(1, 1);
        Kb(r0 + 8, col) = h(1, 2);
        Kb(r0 + 9, col) = h(2, 2);
      }
    }
    Eigen::MatrixXd out = Kb * charges;
    for (std::size_t m = 0; m < count; ++m) {
      std::size_t id = first + m;
      auto r0 = static_cast<Eigen::Index>(10 * m);
      for (std::size_t q = 0; q < K; ++q) {
        auto cq = static_cast<Eigen::Index>(q);
        Vec3 gr(out(r0 + 1, cq), out(r0 + 2, cq), out(r0 + 3, cq));
        Mat3 h;
        h << out(r0 + 4, cq), out(r0 + 5, cq), out(r0 + 6, cq), out(r0 + 5, cq), out(r0 + 7, cq), out(r0 + 8, cq),
            out(r0 + 6, cq), out(r0 + 8, cq), out(r0 + 9, cq);
        f[id * K + q] = out(r0, cq);
        g[id * K + q] = R.transpose() * gr;
        H[id * K + q] = R.transpose() * h * R;
      }
    }
  });

  auto at = [&](int i, int j, int k) { return static_cast<std::size_t>(i + n[0] * (j + n[1] * k)); };
  // second-order difference of a nodal Hessian entry along one axis
  auto diff = [&](std::size_t q, int i, int j, int k, int axis, int r, int cc) {
    int idx[3] = {i, j, k};
    auto val = [&](int shift) {
      int m[3] = {idx[0], idx[1], idx[2]};
      m[axis] += shift;
      return H[at(m[0], m[1], m[2]) * K + q](r, cc);
    };
    int pos = idx[axis], last = n[static_cast<std::size_t>(axis)] - 1;
    if (last < 2) return (val(pos == 0 ? 1 : 0) - val(pos == 0 ? 0 : -1)) / spacing;
    if (pos == 0) return (-3.0 * val(0) + 4.0 * val(1) - val(2)) / (2.0 * spacing);
    if (pos == last) return (3.0 * val(0) - 4.0 * val(-1) + val(-2)) / (2.0 * spacing);
    return (val(1) - val(-1)) / (2.0 * spacing);
  };
  for (std::size_t q = 0; q < K; ++q) {
    std::vector<TricubicGrid::NodeData> data(nodes);
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          std::size_t id = at(i, j, k);
          const Vec3& gr = g[id * K + q];
          const Mat3& h = H[id * K + q];
          double fxyz = (diff(q, i, j, k, 2, 0, 1) + diff(q, i, j, k, 1, 0, 2) + diff(q, i, j, k, 0, 1, 2)) / 3.0;
          data[id] = {f[id * K + q], gr.x(), gr.y(), gr.z(), h(0, 1), h(0, 2), h(1, 2), fxyz};
        }
    grid.set_component(q, std::move(data));
  }
  return grid;
}

double grid_error(const TricubicGrid& grid, std::size_t c, const ChargeBasis& basis, const Eigen::VectorXd& charges)
{
  if (c >= grid.components()) throw InputError("grid component out of range");
  const auto& n = grid.dims();
  // off-node points on a coarse lattice of cells
  std::vector<Vec3> pts;
  const double offs[3] = {0.5, 0.27, 0.81};
  auto picks = [](int nn) { return std::vector<int>{0, (nn - 1) / 2, nn - 2}; };
  for (double o : offs)
    for (int a : picks(n[0]))
      for (int b : picks(n[1]))
        for (int cc : picks(n[2])) {
          Vec3 lo = grid.node(a, b, cc), hi = grid.node(a + 1, b + 1, cc + 1);
          Vec3 t(o, 1.0 - o, o);
          pts.push_back(lo + (hi - lo).cwiseProduct(t));
        }
  std::vector<FieldSample> ref(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) { ref[i] = sample_from_charges(basis, charges, pts[i], false); });
  double fmax = 0, emax = 0;
  for (const auto& r : ref) {
    fmax = std::max(fmax, std::abs(r.potential));
    emax = std::max(emax, r.field.norm());
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.components()));
  w(static_cast<Eigen::Index>(c)) = 1.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double f;
    Vec3 gr;
    grid.eval(pts[i], w, f, gr);
    if (fmax > 0) worst = std::max(worst, std::abs(f - ref[i].potential) / fmax);
    if (emax > 0) worst = std::max(worst, (-gr - ref[i].field).norm() / emax);
  }
  return worst;
}

std::string to_string(FieldMethod m)
{
  switch (m) {
    case FieldMethod::direct: return "direct";
    case FieldMethod::treecode: return "treecode";
    case FieldMethod::grid: return "grid";
  }
  return "?";
}

FieldMethod field_method_from_string(const std::string& s)
{
  if (s == "direct") return FieldMethod::direct;
  if (s == "treecode") return FieldMethod::treecode;
  if (s == "grid") return FieldMethod::grid;
  throw InputError("unknown field method '" + s + "' (direct, treecode, grid)");
}

// --- field sources ------------------------------------------------------------------------

namespace {

/// Field of sum_c w_c(t) q_c over charge-vector components.
class ComponentSource : public FieldSource {
 public:
  using Weights = std::function<void(double, Eigen::VectorXd&)>;

  ComponentSource(const ChargeBasis& basis, Eigen::MatrixXd charges, Weights weights)
      : basis_(basis), Q_(std::move(charges)), weights_(std::move(weights))
  {
  }

  void use_treecode(double theta)
  {
    auto tree = std::make_shared<PanelTree>(basis_.mesh);
    for (Eigen::Index c = 0; c < Q_.cols(); ++c) trees_.emplace_back(tree, Q_.col(c), theta);
  }

  void use_grid(TricubicGrid grid) { grid_ = std::move(grid); }

  FieldValue at(const Vec3& p, double t) const override
  {
    thread_local Eigen::VectorXd w;
    w.setZero(Q_.cols());
    weights_(t, w);
    FieldValue out;
    if (grid_ && grid_->contains(p)) {
      Vec3 g;
      grid_->eval(p, w, out.potential, g);
      out.field = -g;
      return out;
    }
    if (!trees_.empty()) {
      for (Eigen::Index c = 0; c < w.size(); ++c) {
        if (w(c) == 0.0) continue;
        FieldSample s = trees_[static_cast<std::size_t>(c)].sample(p, false);
        out.potential += w(c) * s.potential;
        out.field += w(c) * s.field;
      }
      return out;
    }
    thread_local Eigen::VectorXd q;
    q.setZero(Q_.rows());
    for (Eigen::Index c = 0; c < w.size(); ++c)
      if (w(c) != 0.0) q += w(c) * Q_.col(c);
    FieldSample s = sample_from_charges(basis_, q, p, false);
    return {s.potential, s.field};
  }

  const Eigen::MatrixXd& charges() const { return Q_; }

 private:
  const ChargeBasis& basis_;
  Eigen::MatrixXd Q_;
  Weights weights_;
  std::vector<Treecode> trees_;
  std::optional<TricubicGrid> grid_;
};

Eigen::MatrixXd stack(const std::vector<Eigen::VectorXd>& cols)
{
  Eigen::MatrixXd M(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) M.col(static_cast<Eigen::Index>(c)) = cols[c];
  return M;
}

// drive components: cos and sin spatial patterns
void add_drive(std::vector<Eigen::VectorXd>& charges, const ChargeBasis& basis, const std::optional<RotatingWallDrive>& drive)
{
  if (!drive) return;
  drive->validate();
  auto [c, s] = drive_patterns(basis, *drive);
  charges.push_back(panel_charges(basis, c));
  charges.push_back(panel_charges(basis, s));
}

void drive_weights(const std::optional<RotatingWallDrive>& drive, Eigen::Index first, double t, Eigen::VectorXd& w)
{
  if (!drive || drive->amplitude == 0.0) return;
  double arg = drive->frequency * t + drive->phase;
  w(first) += drive->amplitude * std::cos(arg);
  w(first + 1) += drive->amplitude * std::sin(arg);
}

// Grid for every component of a static source, validated against direct sums.
std::optional<TricubicGrid> validated_grid(const ChargeBasis& basis, const Eigen::MatrixXd& Q, const GridBox& box,
                                           const GridOptions& opt, std::vector<std::string>& warnings)
{
  TricubicGrid grid = build_grid(basis, Q, box, opt.spacing);
  double err = 0.0;
  for (Eigen::Index c = 0; c < Q.cols(); ++c) err = std::max(err, grid_error(grid, static_cast<std::size_t>(c), basis, Q.col(c)));
  if (err <= opt.tolerance) return grid;
  warnings.push_back("interpolation grid error " + std::to_string(err) + " above tolerance; using direct summation");
  return std::nullopt;
}

void hat_weights(const std::vector<double>& ts, double t, Eigen::VectorXd& w)
{
  if (t <= ts.front()) {
    w(0) = 1.0;
  } else if (t >= ts.back()) {
    w(static_cast<Eigen::Index>(ts.size() - 1)) = 1.0;
  } else {
    auto it = std::upper_bound(ts.begin(), ts.end(), t);
    auto i = static_cast<std::size_t>(it - ts.begin()) - 1;
    double s = (t - ts[i]) / (ts[i + 1] - ts[i]);
    w(static_cast<Eigen::Index>(i)) = 1.0 - s;
    w(static_cast<Eigen::Index>(i + 1)) = s;
  }
}

}  // namespace

Trajectory integrate(const ParticleState& state0, const FieldSource& source, const MagneticField& B,
                     const ParticleSpecies& species, double duration, const SimulationOptions& options)
{
  double dt = options.dt > 0.0 ? options.dt : default_time_step(species, B);
  check_step(dt, species, B);
  if (!(duration > 0.0)) throw InputError("simulation duration must be positive");
  if (options.stride < 1) throw InputError("stride must be >= 1");
  if (state0.position.z() <= 0.0) throw InputError("initial position must be above the electrode plane");
  double qm = species.charge / species.mass;
  double damp = options.damping > 0.0 ? std::exp(-options.damping * dt) : 1.0;
  double angle = -qm * B.B0 * dt;
  double ca = std::cos(angle), sa = std::sin(angle);
  auto steps = static_cast<long long>(std::llround(duration / dt));
  if (steps < 1) throw InputError("duration shorter than one time step");

  Trajectory traj;
  traj.dt = dt;
  traj.stride = options.stride;
  traj.samples.reserve(static_cast<std::size_t>(steps / options.stride + 2));

  // Standard staggered Boris: u holds v(n - 1/2). The synchronous velocity
  // reported at step n is v- turned by half the step angle.
  double ch = std::cos(0.5 * angle), sh = std::sin(0.5 * angle);
  auto turn = [](Vec3 v, double c, double s_) {
    double x = v.x() * c - v.y() * s_;
    double y = v.x() * s_ + v.y() * c;
    v.x() = x;
    v.y() = y;
    return v;
  };
  ParticleState s = state0;
  FieldValue fv = source.at(s.position, s.time);
  Vec3 u = turn(s.velocity, ch, -sh) - 0.5 * dt * qm * fv.field;
  double t0 = state0.time;
  for (long long n = 0;; ++n) {
    Vec3 vm = u + 0.5 * dt * qm * fv.field;
    if (n % options.stride == 0) {
      s.velocity = turn(vm, ch, sh);
      TrajectorySample ts{s, 0.5 * species.mass * s.velocity.squaredNorm(), species.charge * fv.potential};
      traj.samples.push_back(ts);
      if (options.observer && !options.observer(ts)) break;
    }
    if (n == steps) break;
    u = turn(vm, ca, sa) + 0.5 * dt * qm * fv.field;
    u *= damp;
    s.position += dt * u;
    s.time = t0 + static_cast<double>(n + 1) * dt;
    if (s.position.z() <= 0.0) throw PlaneCrossingError("particle crossed the electrode plane at t = " + std::to_string(s.time));
    if ((s.position - state0.position).norm() > options.escape_radius) {
      s.velocity = u;
      throw EscapeError("particle left the search box at t = " + std::to_string(s.time), s);
    }
    fv = source.at(s.position, s.time);
  }
  return traj;
}

Trajectory simulate(const ParticleState& state0, const VoltageSet& voltages, const ChargeBasis& basis,
                    const MagneticField& B, const ParticleSpecies& species, double duration,
                    const SimulationOptions& options)
{
  check_off_conductor(basis, state0.position);
  std::vector<Eigen::VectorXd> cols{panel_charges(basis, voltages)};
  add_drive(cols, basis, options.drive);
  auto drive = options.drive;
  ComponentSource source(basis, stack(cols), [drive](double t, Eigen::VectorXd& w) {
    w(0) = 1.0;
    drive_weights(drive, 1, t, w);
  });
  std::vector<std::string> warnings;
  if (options.method == FieldMethod::treecode) source.use_treecode(options.theta);
  if (options.method == FieldMethod::grid) {
    auto grid = validated_grid(basis, source.charges(), GridBox::cube(state0.position, options.grid.half_width),
                               options.grid, warnings);
    if (grid) source.use_grid(std::move(*grid));
  }
  Trajectory traj = integrate(state0, source, B, species, duration, options);
  traj.warnings.insert(traj.warnings.begin(), warnings.begin(), warnings.end());
  return traj;
}

Trajectory simulate(const ParticleState& state0, const TransportPlan& plan, const ChargeBasis& basis,
                    const MagneticField& B, const ParticleSpecies& species, double duration,
                    const SimulationOptions& options)
{
  plan.validate();
  check_off_conductor(basis, state0.position);
  if (duration <= 0.0) duration = plan.duration();
  if (std::abs(duration - plan.duration()) > 1e-9 * plan.duration())
    throw InputError("simulation duration does not match the plan timestamps");
  std::vector<std::string> warnings;
  auto drive = options.drive;
  std::vector<double> ts = plan.timestamps;
  ParticleState s0 = state0;
  s0.time = ts.front();

  if (options.method == FieldMethod::grid) {
    // per-electrode grids over the path, weighted by the interpolated voltages
    std::vector<Vec3> sites{state0.position};
    for (const auto& w : plan.info) sites.push_back(w.site);
    GridBox box = GridBox::around(sites, options.grid.plan_margin);
    TricubicGrid probe(box, options.grid.spacing, 1);
    if (probe.node_count() <= options.grid.max_nodes) {
      std::vector<std::size_t> used;
      for (std::size_t e = 0; e < basis.electrode_count(); ++e) {
        const std::string& id = basis.layout.electrodes[e].id;
        bool any = drive && std::find(drive->target_electrodes.begin(), drive->target_electrodes.end(), id) !=
                                drive->target_electrodes.end();
        for (const auto& w : plan.waypoints) {
          auto it = w.find(id);
          if (it != w.end() && it->second != 0.0) any = true;
        }
        if (any) used.push_back(e);
      }
      if (used.empty()) throw InputError("plan applies no voltages");
      Eigen::MatrixXd Q(static_cast<Eigen::Index>(basis.panel_count()), static_cast<Eigen::Index>(used.size()));
      Eigen::MatrixXd V(static_cast<Eigen::Index>(used.size()), static_cast<Eigen::Index>(plan.waypoints.size()));
      std::vector<double> twice_phi(used.size(), 0.0);
      std::vector<char> driven(used.size(), 0);
      for (std::size_t u = 0; u < used.size(); ++u) {
        const Electrode& el = basis.layout.electrodes[used[u]];
        Q.col(static_cast<Eigen::Index>(u)) = basis.charges.col(static_cast<Eigen::Index>(used[u]));
        for (std::size_t k = 0; k < plan.waypoints.size(); ++k) {
          auto it = plan.waypoints[k].find(el.id);
          V(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(k)) = it == plan.waypoints[k].end() ? 0.0 : it->second;
        }
        if (drive && std::find(drive->target_electrodes.begin(), drive->target_electrodes.end(), el.id) !=
                         drive->target_electrodes.end()) {
          Vec2 c = polygon_centroid(el.polygon);
          twice_phi[u] = 2.0 * std::atan2(c.y(), c.x());
          driven[u] = 1;
        }
      }
      ComponentSource source(basis, Q, [ts, V, drive, twice_phi, driven](double t, Eigen::VectorXd& w) {
        Eigen::VectorXd hat = Eigen::VectorXd::Zero(V.cols());
        hat_weights(ts, t, hat);
        w = V * hat;
        if (drive && drive->amplitude != 0.0)
          for (Eigen::Index u = 0; u < w.size(); ++u)
            if (driven[static_cast<std::size_t>(u)])
              w(u) += drive->amplitude * std::cos(drive->frequency * t + drive->phase - twice_phi[static_cast<std::size_t>(u)]);
      });
      auto grid = validated_grid(basis, Q, box, options.grid, warnings);
      if (grid) source.use_grid(std::move(*grid));
      Trajectory traj = integrate(s0, source, B, species, duration, options);
      traj.warnings.insert(traj.warnings.begin(), warnings.begin(), warnings.end());
      return traj;
    }
    warnings.push_back("plan grid would need " + std::to_string(probe.node_count()) + " nodes; using direct summation");
  }

  std::vector<Eigen::VectorXd> cols;
  for (const auto& w : plan.waypoints) cols.push_back(panel_charges(basis, w));
  auto n_way = static_cast<Eigen::Index>(cols.size());
  add_drive(cols, basis, drive);
  ComponentSource source(basis, stack(cols), [ts, n_way, drive](double t, Eigen::VectorXd& w) {
    hat_weights(ts, t, w);
    drive_weights(drive, n_way, t, w);
  });
  if (options.method == FieldMethod::treecode) source.use_treecode(options.theta);
  Trajectory traj = integrate(s0, source, B, species, duration, options);
  traj.warnings.insert(traj.warnings.begin(), warnings.begin(), warnings.end());
  return traj;
}

// --- modes -------------------------------------------------------------------------------------

RadialModes decompose_radial(const ParticleState& s, const Vec3& center, const TrapSite& site, double charge)
{
  double wp = site.omega_plus, wm = site.omega_minus;
  if (!(wp > wm)) throw ComputationError("mode decomposition needs a stable site");
  double sg = charge > 0 ? 1.0 : -1.0;
  Vec2 rho(s.position.x() - center.x(), s.position.y() - center.y());
  Vec2 v(s.velocity.x(), s.velocity.y());
  Vec2 Jv(-v.y(), v.x());
  RadialModes m;
  m.cyclotron = (sg * Jv - wm * rho) / (wp - wm);
  m.magnetron = (wp * rho - sg * Jv) / (wp - wm);
  return m;
}

ModeEnergies mode_energies(const ParticleState& s, const TrapSite& site, const ParticleSpecies& species)
{
  RadialModes r = decompose_radial(s, site.position, site, species.charge);
  double m = species.mass, wz2 = site.omega_z * site.omega_z;
  double dz = s.position.z() - site.position.z();
  ModeEnergies e;
  e.axial = 0.5 * m * (s.velocity.z() * s.velocity.z() + wz2 * dz * dz);
  e.cyclotron = 0.5 * m * (site.omega_plus * site.omega_plus - 0.5 * wz2) * r.cyclotron.squaredNorm();
  e.magnetron = 0.5 * m * (site.omega_minus * site.omega_minus - 0.5 * wz2) * r.magnetron.squaredNorm();
  return e;
}

ParticleState magnetron_launch(const TrapSite& site, double radius, double charge, double axial_offset)
{
  double sg = charge > 0 ? 1.0 : -1.0;
  ParticleState s;
  s.position = site.position + Vec3(radius, 0.0, axial_offset);
  // rho_dot = -s w_minus zhat x rho
  s.velocity = Vec3(0.0, -sg * site.omega_minus * radius, 0.0);
  return s;
}

AxializationResult axialize(const ParticleState& state0, const VoltageSet& voltages, const ChargeBasis& basis,
                            const MagneticField& B, const ParticleSpecies& species, const TrapSite& site,
                            const RotatingWallDrive& drive, double duration, SimulationOptions options)
{
  drive.validate();
  if (!site.stable) throw InputError("axialization needs a stable site");
  options.drive = drive;
  if (options.method == FieldMethod::grid) {
    // grid around the site so the whole magnetron circle is covered
    double r0 = (Vec2(state0.position.x(), state0.position.y()) - Vec2(site.position.x(), site.position.y())).norm();
    options.grid.half_width = std::max(options.grid.half_width, 2.0 * r0 + 4.0 * options.grid.spacing);
  }
  AxializationResult out;
  // the interpolation box is centered on the site, not on state0
  std::vector<Eigen::VectorXd> cols{panel_charges(basis, voltages)};
  add_drive(cols, basis, options.drive);
  auto dr = options.drive;
  ComponentSource source(basis, stack(cols), [dr](double t, Eigen::VectorXd& w) {
    w(0) = 1.0;
    drive_weights(dr, 1, t, w);
  });
  if (options.method == FieldMethod::treecode) source.use_treecode(options.theta);
  if (options.method == FieldMethod::grid) {
    auto grid = validated_grid(basis, source.charges(), GridBox::cube(site.position, options.grid.half_width),
                               options.grid, out.warnings);
    if (grid) source.use_grid(std::move(*grid));
  }
  out.trajectory = integrate(state0, source, B, species, duration, options);
  for (const auto& s : out.trajectory.samples) {
    RadialModes m = decompose_radial(s.state, site.position, site, species.charge);
    out.times.push_back(s.state.time);
    out.magnetron_radius.push_back(m.r_minus());
    out.cyclotron_radius.push_back(m.r_plus());
  }
  // envelope: maxima over ten windows
  std::size_t n = out.magnetron_radius.size();
  std::size_t windows = std::min<std::size_t>(10, std::max<std::size_t>(1, n));
  std::vector<double> env;
  for (std::size_t w = 0; w < windows; ++w) {
    std::size_t a = w * n / windows, b = (w + 1) * n / windows;
    double mx = 0.0;
    for (std::size_t i = a; i < b; ++i) mx = std::max(mx, out.magnetron_radius[i]);
    env.push_back(mx);
  }
  out.envelope_start = env.front();
  out.envelope_end = env.back();
  if (!(out.envelope_end < out.envelope_start))
    out.warnings.push_back("magnetron radius envelope did not decrease; drive may be mistuned");
  out.warnings.insert(out.warnings.end(), out.trajectory.warnings.begin(), out.trajectory.warnings.end());
  return out;
}

}  // namespace pixeltrap
