#pragma once

#include "carm/geometry.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace carm {

struct NearestNeighbor {
    std::size_t index = 0;  ///< into the indexed point array
    Vec3 point = Vec3::Zero();
    double distance = 0.0;  ///< mm
};

/// Balanced 3-d tree (median splits on the widest axis). Immutable after
/// construction; concurrent queries are safe.
class KdTree {
public:
    KdTree() = default;
    explicit KdTree(std::span<const Vec3> points);
    explicit KdTree(const TaggedPointCloud& cloud) : KdTree(std::span<const Vec3>(cloud.points)) {}

    bool empty() const { return points_.empty(); }
    std::size_t size() const { return points_.size(); }
    const std::vector<Vec3>& points() const { return points_; }

    /// Exact Euclidean nearest neighbour. Throws InvalidArgumentError when empty.
    NearestNeighbor nearest(const Vec3& query) const;

    int depth() const { return depth_; }

private:
    struct Node {
        std::uint32_t point;   ///< index of the splitting point
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::uint8_t axis = 0;
    };

    std::int32_t build(std::vector<std::uint32_t>& order, std::size_t lo, std::size_t hi, int depth);
    void search(std::int32_t node, const Vec3& q, std::uint32_t& best, double& best_d2) const;

    std::vector<Vec3> points_;
    std::vector<Node> nodes_;
    std::int32_t root_ = -1;
    int depth_ = 0;
};

}  // namespace carm
