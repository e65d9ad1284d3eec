#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "n2n/core.hpp"

namespace n2n {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0.0;

  // Ties broken by lowest index.
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

/// Static 3-d tree over a borrowed point array. The points must outlive the
/// tree.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Point3> points) : pts_(points) {
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!order_.empty()) {
      nodes_.reserve(2 * order_.size() / kLeafSize + 1);
      build(0, order_.size());
    }
  }

  std::size_t size() const { return pts_.size(); }

  Neighbor nearest(const Point3& q) const {
    require(!pts_.empty(), "nearest-neighbor query on empty tree");
    Neighbor best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
    nearest_rec(0, q, best);
    return best;
  }

  /// The k nearest points sorted by (distance, index).
  std::vector<Neighbor> knn(const Point3& q, std::size_t k) const {
    require(k >= 1 && k <= pts_.size(), "k out of range for knn query");
    std::priority_queue<Neighbor> heap;  // max-heap on (dist2, index)
    knn_rec(0, q, k, heap);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) out[i] = heap.top(), heap.pop();
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::int64_t left = -1, right = -1;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    Point3 lo = pts_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pts_[order_[i]]);
      hi = hi.cwiseMax(pts_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    nodes_[id].axis = axis;
    nodes_[id].split = pts_[order_[mid]][axis];
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[id].left = static_cast<std::int64_t>(l);
    nodes_[id].right = static_cast<std::int64_t>(r);
    return id;
  }

  void nearest_rec(std::size_t id, const Point3& q, Neighbor& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        Neighbor c{order_[i], (pts_[order_[i]] - q).squaredNorm()};
        if (c < best) best = c;
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = static_cast<std::size_t>(diff < 0 ? n.left : n.right);
    const auto far = static_cast<std::size_t>(diff < 0 ? n.right : n.left);
    nearest_rec(near, q, best);
    // <= so equal-distance points on the far side still compete on index.
    if (diff * diff <= best.dist2) nearest_rec(far, q, best);
  }

  void knn_rec(std::size_t id, const Point3& q, std::size_t k, std::priority_queue<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        Neighbor c{order_[i], (pts_[order_[i]] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = static_cast<std::size_t>(diff < 0 ? n.left : n.right);
    const auto far = static_cast<std::size_t>(diff < 0 ? n.right : n.left);
    knn_rec(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().dist2) knn_rec(far, q, k, heap);
  }

  std::span<const Point3> pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace n2n
