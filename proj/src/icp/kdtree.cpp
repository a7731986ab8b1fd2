#include "carm/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace carm {

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end())
{
    for (const auto& p : points_)
        if (!p.allFinite()) throw InvalidArgumentError("k-d tree input has non-finite coordinates");
    std::vector<std::uint32_t> order(points_.size());
    std::iota(order.begin(), order.end(), 0u);
    nodes_.reserve(points_.size());
    root_ = build(order, 0, order.size(), 1);
}

std::int32_t KdTree::build(std::vector<std::uint32_t>& order, std::size_t lo, std::size_t hi, int depth)
{
    if (lo >= hi) return -1;
    depth_ = std::max(depth_, depth);

    Vec3 lower = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 upper = -lower;
    for (std::size_t i = lo; i < hi; ++i) {
        lower = lower.cwiseMin(points_[order[i]]);
        upper = upper.cwiseMax(points_[order[i]]);
    }
    Eigen::Index axis = 0;
    (upper - lower).maxCoeff(&axis);

    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(mid),
                     order.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::uint32_t a, std::uint32_t b) {
                         return points_[a][axis] < points_[b][axis];
                     });

    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({order[mid], -1, -1, static_cast<std::uint8_t>(axis)});
    const std::int32_t left = build(order, lo, mid, depth + 1);
    const std::int32_t right = build(order, mid + 1, hi, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
}

void KdTree::search(std::int32_t node_id, const Vec3& q, std::uint32_t& best, double& best_d2) const
{
    if (node_id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    const Vec3& p = points_[node.point];
    const double d2 = (p - q).squaredNorm();
    // Ties resolve to the lowest index, matching a linear scan.
    if (d2 < best_d2 || (d2 == best_d2 && node.point < best)) {
        best_d2 = d2;
        best = node.point;
    }
    const double diff = q[node.axis] - p[node.axis];
    search(diff < 0.0 ? node.left : node.right, q, best, best_d2);
    if (diff * diff <= best_d2) search(diff < 0.0 ? node.right : node.left, q, best, best_d2);
}

NearestNeighbor KdTree::nearest(const Vec3& query) const
{
    if (empty()) throw InvalidArgumentError("nearest-neighbour query on an empty index");
    std::uint32_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, query, best, best_d2);
    return {best, points_[best], std::sqrt(best_d2)};
}

}  // namespace carm
