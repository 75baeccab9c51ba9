#include "pixeltrap/treecode.hpp"

#include <algorithm>
#include <cmath>

#include "pixeltrap/constants.hpp"
#include "pixeltrap/error.hpp"
#include "pixeltrap/panel_integrals.hpp"

namespace pixeltrap {

namespace {

double cheb_node(int m, int p) { return std::cos(constants::pi * (2.0 * m + 1.0) / (2.0 * p)); }

// Lagrange basis on the p Chebyshev nodes of [-1, 1], evaluated at t.
void lagrange(int p, double t, double* out)
{
  for (int m = 0; m < p; ++m) {
    double xm = cheb_node(m, p), v = 1.0;
    for (int k = 0; k < p; ++k)
      if (k != m) v *= (t - cheb_node(k, p)) / (xm - cheb_node(k, p));
    out[m] = v;
  }
}

}  // namespace

PanelTree::PanelTree(const PanelMesh& mesh, int leaf_size, int order) : mesh_(&mesh), p_(order)
{
  if (mesh.size() == 0) throw InputError("treecode needs a non-empty mesh");
  if (leaf_size < 1 || order < 2) throw InputError("treecode leaf size and order must be positive");
  order_.resize(mesh.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(4 * mesh.size() / leaf_size + 8);
  build(0, mesh.size(), leaf_size, 0);

  // proxy charges come from the quadrature charges: Q_m = sum_j q_j sum_k w_jk L_m(x_jk)
  anterp_.resize(nodes_.size());
  std::vector<double> lx(p_), ly(p_);
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    const Node& nd = nodes_[n];
    Vec2 half = 0.5 * (nd.hi - nd.lo);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(p_ * p_, static_cast<Eigen::Index>(nd.end - nd.begin));
    for (std::size_t j = nd.begin; j < nd.end; ++j) {
      const Panel& pan = mesh.panels[order_[j]];
      for (int k = 0; k < pan.n_nodes; ++k) {
        Vec2 t = (pan.nodes[k] - nd.center).cwiseQuotient(half);
        lagrange(p_, t.x(), lx.data());
        lagrange(p_, t.y(), ly.data());
        for (int a = 0; a < p_; ++a)
          for (int b = 0; b < p_; ++b) S(a * p_ + b, static_cast<Eigen::Index>(j - nd.begin)) += pan.weights[k] * lx[a] * ly[b];
      }
    }
    anterp_[n] = std::move(S);
  }
}

int PanelTree::build(std::size_t begin, std::size_t end, int leaf_size, int depth)
{
  int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Node nd;
  nd.begin = begin;
  nd.end = end;
  nd.lo = Vec2::Constant(1e300);
  nd.hi = Vec2::Constant(-1e300);
  for (std::size_t j = begin; j < end; ++j) {
    const Panel& pan = mesh_->panels[order_[j]];
    for (int k = 0; k < pan.n_nodes; ++k) {
      nd.lo = nd.lo.cwiseMin(pan.nodes[k]);
      nd.hi = nd.hi.cwiseMax(pan.nodes[k]);
    }
    nd.max_diameter = std::max(nd.max_diameter, pan.diameter);
  }
  // keep the proxy box non-degenerate
  double pad = 1e-9 * std::max(1e-12, (nd.hi - nd.lo).maxCoeff());
  nd.lo -= Vec2::Constant(pad);
  nd.hi += Vec2::Constant(pad);
  nd.center = 0.5 * (nd.lo + nd.hi);
  for (std::size_t j = begin; j < end; ++j) {
    const Panel& pan = mesh_->panels[order_[j]];
    for (int k = 0; k < pan.n_nodes; ++k) nd.radius = std::max(nd.radius, (pan.nodes[k] - nd.center).norm());
  }
  if (end - begin > static_cast<std::size_t>(leaf_size) && depth < 40) {
    // split on centroids at the box center
    Vec2 c = nd.center;
    auto quad = [&](std::size_t j) {
      const Vec3& x = mesh_->panels[order_[j]].centroid;
      return (x.x() >= c.x() ? 1 : 0) + (x.y() >= c.y() ? 2 : 0);
    };
    std::stable_sort(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       const Vec3& xa = mesh_->panels[a].centroid;
                       const Vec3& xb = mesh_->panels[b].centroid;
                       int qa = (xa.x() >= c.x() ? 1 : 0) + (xa.y() >= c.y() ? 2 : 0);
                       int qb = (xb.x() >= c.x() ? 1 : 0) + (xb.y() >= c.y() ? 2 : 0);
                       return qa < qb;
                     });
    std::size_t start = begin;
    bool split = false;
    for (int q = 0; q < 4; ++q) {
      std::size_t stop = start;
      while (stop < end && quad(stop) == q) ++stop;
      if (stop - start == end - begin) break;  // all in one quadrant: stop splitting
      if (stop > start) {
        nd.child[q] = build(start, stop, leaf_size, depth + 1);
        split = true;
      }
      start = stop;
    }
    if (!split) std::fill(std::begin(nd.child), std::end(nd.child), -1);
  }
  nodes_[static_cast<std::size_t>(id)] = nd;
  return id;
}

std::vector<Vec2> PanelTree::proxies(std::size_t node) const
{
  const Node& nd = nodes_[node];
  Vec2 half = 0.5 * (nd.hi - nd.lo);
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(p_ * p_));
  for (int a = 0; a < p_; ++a)
    for (int b = 0; b < p_; ++b) out.emplace_back(nd.center + half.cwiseProduct(Vec2(cheb_node(a, p_), cheb_node(b, p_))));
  return out;
}

std::vector<Eigen::VectorXd> PanelTree::proxy_charges(const Eigen::VectorXd& q) const
{
  if (static_cast<std::size_t>(q.size()) != mesh_->size()) throw InputError("charge vector does not match the mesh");
  std::vector<Eigen::VectorXd> out(nodes_.size());
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    const Node& nd = nodes_[n];
    Eigen::VectorXd local(static_cast<Eigen::Index>(nd.end - nd.begin));
    for (std::size_t j = nd.begin; j < nd.end; ++j) local(static_cast<Eigen::Index>(j - nd.begin)) = q(static_cast<Eigen::Index>(order_[j]));
    out[n] = anterp_[n] * local;
  }
  return out;
}

Treecode::Treecode(std::shared_ptr<const PanelTree> tree, Eigen::VectorXd panel_charges, double theta)
    : tree_(std::move(tree)), q_(std::move(panel_charges)), theta_(theta)
{
  if (!(theta >= 0.0 && theta <= 1.0)) throw InputError("treecode opening angle must lie in [0, 1]");
  proxy_q_ = tree_->proxy_charges(q_);
  proxy_x_.resize(tree_->nodes().size());
  for (std::size_t n = 0; n < proxy_x_.size(); ++n) proxy_x_[n] = tree_->proxies(n);
}

Treecode::Treecode(const ChargeBasis& basis, const VoltageSet& voltages, double theta)
    : Treecode(std::make_shared<PanelTree>(basis.mesh), panel_charges(basis, voltages), theta)
{
}

template <class Leaf, class Far>
void Treecode::traverse(const Vec3& p, Leaf&& leaf, Far&& far) const
{
  const auto& nodes = tree_->nodes();
  int stack[256];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const auto& nd = nodes[static_cast<std::size_t>(stack[--top])];
    int id = static_cast<int>(&nd - nodes.data());
    double d = (p - Vec3(nd.center.x(), nd.center.y(), 0.0)).norm();
    if (nd.radius < theta_ * d && d - nd.radius >= kFarFieldDiameters * nd.max_diameter) {
      far(static_cast<std::size_t>(id));
      continue;
    }
    if (nd.leaf()) {
      for (std::size_t j = nd.begin; j < nd.end; ++j) leaf(tree_->order()[j]);
      continue;
    }
    for (int c = 3; c >= 0; --c)
      if (nd.child[c] >= 0) stack[top++] = nd.child[c];
  }
}

double Treecode::potential(const Vec3& p) const
{
  const auto& panels = tree_->mesh().panels;
  double sum = 0.0, far_sum = 0.0;
  traverse(
      p, [&](std::size_t j) { sum += q_(static_cast<Eigen::Index>(j)) * panel_kernel(panels[j], p); },
      [&](std::size_t n) {
        const auto& x = proxy_x_[n];
        const auto& Q = proxy_q_[n];
        for (std::size_t m = 0; m < x.size(); ++m) {
          double dx = p.x() - x[m].x(), dy = p.y() - x[m].y();
          far_sum += Q(static_cast<Eigen::Index>(m)) / std::sqrt(dx * dx + dy * dy + p.z() * p.z());
        }
      });
  return sum + constants::coulomb * far_sum;
}

FieldSample Treecode::sample(const Vec3& p, bool with_hessian) const
{
  const auto& panels = tree_->mesh().panels;
  FieldSample s;
  Vec3 grad = Vec3::Zero();
  Mat3 H = Mat3::Zero();
  double far_v = 0.0;
  Vec3 far_g = Vec3::Zero();
  Mat3 far_h = Mat3::Zero();
  traverse(
      p,
      [&](std::size_t j) {
        double v;
        Vec3 g;
        Mat3 h;
        panel_kernel_derivs(panels[j], p, v, g, with_hessian ? &h : nullptr);
        double qj = q_(static_cast<Eigen::Index>(j));
        s.potential += qj * v;
        grad += qj * g;
        if (with_hessian) H += qj * h;
      },
      [&](std::size_t n) {
        const auto& x = proxy_x_[n];
        const auto& Q = proxy_q_[n];
        for (std::size_t m = 0; m < x.size(); ++m) {
          Vec3 d(p.x() - x[m].x(), p.y() - x[m].y(), p.z());
          double r2 = d.squaredNorm(), ir = 1.0 / std::sqrt(r2), ir3 = ir * ir * ir;
          double qm = Q(static_cast<Eigen::Index>(m));
          far_v += qm * ir;
          far_g -= (qm * ir3) * d;
          if (with_hessian) far_h += (qm * ir3 * ir * ir) * (3.0 * d * d.transpose() - r2 * Mat3::Identity());
        }
      });
  s.potential += constants::coulomb * far_v;
  s.field = -(grad + constants::coulomb * far_g);
  if (with_hessian) s.hessian = H + constants::coulomb * far_h;
  return s;
}

double treecode_potential_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis, double theta)
{
  check_off_conductor(basis, p);
  return Treecode(basis, voltages, theta).potential(p);
}

}  // namespace pixeltrap
