#pragma once

// Exact nearest-neighbour queries over a static 3D point set.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "dqomap/errors.hpp"
#include "dqomap/geometry.hpp"

namespace dqo {

class KdTree {
 public:
  explicit KdTree(std::vector<Vector3d> points) : pts_(std::move(points)) {
    if (pts_.empty()) throw InvalidArgument("kd-tree over an empty point set");
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), 0);
    nodes_.reserve(2 * pts_.size() / kLeaf + 2);
    build(0, idx_.size());
  }

  std::size_t size() const { return pts_.size(); }

  // Squared distance to the closest stored point.
  double nearest_sq(const Vector3d& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(0, q, best);
    return best;
  }
  double nearest(const Vector3d& q) const { return std::sqrt(nearest_sq(q)); }

 private:
  static constexpr std::size_t kLeaf = 8;
  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 = leaf
    double split = 0;
    int left = -1, right = -1;
  };

  int build(std::size_t b, std::size_t e) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({b, e});
    if (e - b <= kLeaf) return id;
    Vector3d lo = Vector3d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (std::size_t i = b; i < e; ++i) {
      lo = lo.cwiseMin(pts_[idx_[i]]);
      hi = hi.cwiseMax(pts_[idx_[i]]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = b + (e - b) / 2;
    std::nth_element(idx_.begin() + b, idx_.begin() + mid, idx_.begin() + e,
                     [&](std::size_t x, std::size_t y) { return pts_[x][axis] < pts_[y][axis]; });
    const double split = pts_[idx_[mid]][axis];
    const int l = build(b, mid);
    const int r = build(mid, e);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(int n, const Vector3d& q, double& best) const {
    const Node& node = nodes_[n];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) best = std::min(best, (pts_[idx_[i]] - q).squaredNorm());
      return;
    }
    // left holds coordinates <= split, right >= split
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, q, best);
    if (diff * diff <= best) search(far, q, best);
  }

  std::vector<Vector3d> pts_;
  std::vector<std::size_t> idx_;
  std::vector<Node> nodes_;
};

}  // namespace dqo
