#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace mirrorsense {

/// Uniform hash grid over 3D points for fixed-radius nearest-neighbor
/// queries. Queries scan the 3x3x3 neighborhood, so they are exact for
/// radii up to the cell size.
class PointGrid {
public:
    PointGrid(const std::vector<Eigen::Vector3d>& points, double cell)
        : points_(points), cell_(cell) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            cells_[key_of(points[i])].push_back(static_cast<int>(i));
        }
    }

    // index of the nearest point within radius, -1 if none; ties go to the
    // lowest index so results do not depend on hash iteration order
    int nearest(const Eigen::Vector3d& q, double radius,
                double* distance = nullptr) const {
        const double r2 = radius * radius;
        double best = r2;
        int best_idx = -1;
        visit_neighborhood(q, [&](int idx) {
            const double d2 = (points_[idx] - q).squaredNorm();
            if (d2 < best || (d2 == best && best_idx >= 0 && idx < best_idx)) {
                best = d2;
                best_idx = idx;
            }
        });
        if (distance && best_idx >= 0) *distance = std::sqrt(best);
        return best_idx;
    }

    bool any_within(const Eigen::Vector3d& q, double radius) const {
        const double r2 = radius * radius;
        bool found = false;
        visit_neighborhood(q, [&](int idx) {
            if (!found && (points_[idx] - q).squaredNorm() <= r2) found = true;
        });
        return found;
    }

    // exact for radius <= cell size
    template <class Fn>
    void for_each_within(const Eigen::Vector3d& q, double radius, Fn&& fn) const {
        const double r2 = radius * radius;
        visit_neighborhood(q, [&](int idx) {
            if ((points_[idx] - q).squaredNorm() <= r2) fn(idx);
        });
    }

private:
    static std::int64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
        // 21 bits per axis with offset covers +-1e6 cells
        const std::int64_t bias = 1 << 20;
        return ((x + bias) << 42) | ((y + bias) << 21) | (z + bias);
    }

    std::int64_t key_of(const Eigen::Vector3d& p) const {
        return pack(static_cast<std::int64_t>(std::floor(p.x() / cell_)),
                    static_cast<std::int64_t>(std::floor(p.y() / cell_)),
                    static_cast<std::int64_t>(std::floor(p.z() / cell_)));
    }

    template <class Fn>
    void visit_neighborhood(const Eigen::Vector3d& q, Fn&& fn) const {
        const auto cx = static_cast<std::int64_t>(std::floor(q.x() / cell_));
        const auto cy = static_cast<std::int64_t>(std::floor(q.y() / cell_));
        const auto cz = static_cast<std::int64_t>(std::floor(q.z() / cell_));
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    const auto it = cells_.find(pack(cx + dx, cy + dy, cz + dz));
                    if (it == cells_.end()) continue;
                    for (int idx : it->second) fn(idx);
                }
            }
        }
    }

    const std::vector<Eigen::Vector3d>& points_;
    double cell_;
    std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

}  // namespace mirrorsense
