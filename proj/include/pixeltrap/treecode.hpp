#pragma once

#include <memory>
#include <vector>

#include "pixeltrap/analysis.hpp"
#include "pixeltrap/bem.hpp"

namespace pixeltrap {

/// Quadtree over the (coplanar) panels with Chebyshev proxy charges per
/// cell. Geometry only; build once per basis and share.
class PanelTree {
 public:
  struct Node {
    Vec2 lo, hi;        // bounding box of the quadrature nodes
    Vec2 center;
    double radius = 0;  // farthest quadrature node from center
    double max_diameter = 0;
    std::size_t begin = 0, end = 0;  // range in order()
    int child[4] = {-1, -1, -1, -1};
    bool leaf() const { return child[0] < 0 && child[1] < 0 && child[2] < 0 && child[3] < 0; }
  };

  explicit PanelTree(const PanelMesh& mesh, int leaf_size = 32, int order = 8);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::size_t>& order() const { return order_; }
  int proxy_order() const { return p_; }
  /// Proxy positions of a node (p^2 points in the plane).
  std::vector<Vec2> proxies(std::size_t node) const;
  /// Proxy charges of every node for panel charges q.
  std::vector<Eigen::VectorXd> proxy_charges(const Eigen::VectorXd& q) const;
  const PanelMesh& mesh() const { return *mesh_; }

 private:
  const PanelMesh* mesh_;
  int p_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> order_;
  std::vector<Eigen::MatrixXd> anterp_;  // p^2 x (end - begin)

  int build(std::size_t begin, std::size_t end, int leaf_size, int depth);
};

/// Treecode evaluator for one charge vector. theta is the opening angle:
/// a cell is used through its proxies when radius / distance < theta and
/// the point is beyond the exact-integral zone of every panel in it.
class Treecode : public PotentialModel {
 public:
  Treecode(std::shared_ptr<const PanelTree> tree, Eigen::VectorXd panel_charges, double theta);
  Treecode(const ChargeBasis& basis, const VoltageSet& voltages, double theta);

  double potential(const Vec3& p) const override;
  FieldSample sample(const Vec3& p, bool with_hessian) const override;
  double theta() const { return theta_; }

 private:
  std::shared_ptr<const PanelTree> tree_;
  Eigen::VectorXd q_;
  std::vector<Eigen::VectorXd> proxy_q_;
  std::vector<std::vector<Vec2>> proxy_x_;
  double theta_;

  template <class Leaf, class Far>
  void traverse(const Vec3& p, Leaf&& leaf, Far&& far) const;
};

double treecode_potential_at(const Vec3& p, const VoltageSet& voltages, const ChargeBasis& basis, double theta);

}  // namespace pixeltrap
