#include "mirrorsense/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "mirrorsense/spatial.hpp"

namespace mirrorsense {

namespace {

BevGrid make_grid(double cell_size, const Eigen::Vector2d& min_xy,
                  const Eigen::Vector2d& max_xy) {
    BevGrid grid;
    grid.cell_size = cell_size;
    grid.origin = min_xy;
    grid.cols = std::max(1, static_cast<int>(std::ceil((max_xy.x() - min_xy.x()) /
                                                       cell_size)));
    grid.rows = std::max(1, static_cast<int>(std::ceil((max_xy.y() - min_xy.y()) /
                                                       cell_size)));
    grid.cells.assign(static_cast<std::size_t>(grid.rows) * grid.cols, BevGrid::kEmpty);
    return grid;
}

void splat(BevGrid& grid, const PointCloud& cloud) {
    for (const auto& p : cloud.points) {
        const int col = static_cast<int>(std::floor((p.x() - grid.origin.x()) /
                                                    grid.cell_size));
        const int row = static_cast<int>(std::floor((p.y() - grid.origin.y()) /
                                                    grid.cell_size));
        if (col < 0 || col >= grid.cols || row < 0 || row >= grid.rows) continue;
        double& cell = grid.at(row, col);
        cell = std::max(cell, p.z());
    }
}

// 4-connected flood fill over a boolean mask; deterministic scan order.
std::vector<OcclusionRegion> connected_components(const BevGrid& grid,
                                                  const std::vector<char>& mask) {
    std::vector<char> seen(mask.size(), 0);
    std::vector<OcclusionRegion> regions;
    for (int row = 0; row < grid.rows; ++row) {
        for (int col = 0; col < grid.cols; ++col) {
            const std::size_t idx = static_cast<std::size_t>(row) * grid.cols + col;
            if (!mask[idx] || seen[idx]) continue;
            OcclusionRegion region;
            region.bbox_min = {row, col};
            std::deque<std::pair<int, int>> queue{{row, col}};
            seen[idx] = 1;
            Eigen::Vector2d sum(0, 0);
            while (!queue.empty()) {
                const auto [r, c] = queue.front();
                queue.pop_front();
                region.cells.emplace_back(r, c);
                sum += grid.cell_center(r, c);
                region.bbox_min = {std::min(region.bbox_min.first, r),
                                   std::min(region.bbox_min.second, c)};
                const std::pair<int, int> neighbors[4] = {
                    {r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
                for (const auto& [nr, nc] : neighbors) {
                    if (nr < 0 || nr >= grid.rows || nc < 0 || nc >= grid.cols) continue;
                    const std::size_t nidx =
                        static_cast<std::size_t>(nr) * grid.cols + nc;
                    if (!mask[nidx] || seen[nidx]) continue;
                    seen[nidx] = 1;
                    queue.emplace_back(nr, nc);
                }
            }
            region.area = static_cast<int>(region.cells.size());
            region.centroid = sum / region.area;
            regions.push_back(std::move(region));
        }
    }
    return regions;
}

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const auto& a, const auto& b) { return a == b; }),
              pts.end());
    if (pts.size() < 3) return pts;
    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a,
                    const Eigen::Vector2d& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    const std::size_t lower = k + 1;
    for (auto it = pts.rbegin() + 1; it != pts.rend(); ++it) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
        hull[k++] = *it;
    }
    hull.resize(k - 1);
    return hull;
}

// Minimum-area enclosing rectangle via edge-aligned candidates.
DetectedBox min_area_rect(const std::vector<Eigen::Vector2d>& points, double cell_size) {
    DetectedBox box;
    const auto hull = convex_hull(points);
    if (hull.empty()) return box;
    if (hull.size() == 1) {
        box.center = hull[0];
        box.extent = {cell_size, cell_size};
        return box;
    }

    double best_area = std::numeric_limits<double>::infinity();
    const std::size_t n = hull.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d edge = hull[(i + 1) % n] - hull[i];
        const double len = edge.norm();
        if (len < 1e-12) continue;
        const Eigen::Vector2d u = edge / len;
        const Eigen::Vector2d v(-u.y(), u.x());
        double ulo = 1e300, uhi = -1e300, vlo = 1e300, vhi = -1e300;
        for (const auto& p : hull) {
            ulo = std::min(ulo, u.dot(p));
            uhi = std::max(uhi, u.dot(p));
            vlo = std::min(vlo, v.dot(p));
            vhi = std::max(vhi, v.dot(p));
        }
        const double area = (uhi - ulo) * (vhi - vlo);
        if (area < best_area) {
            best_area = area;
            const Eigen::Vector2d mid_uv(0.5 * (ulo + uhi), 0.5 * (vlo + vhi));
            box.center = mid_uv.x() * u + mid_uv.y() * v;
            box.extent = {uhi - ulo, vhi - vlo};
            box.yaw = std::atan2(u.y(), u.x());
        }
    }
    // cell centers underestimate the footprint by half a cell on each side
    box.extent += Eigen::Vector2d(cell_size, cell_size);
    // canonical orientation: w is the longer side, yaw along it in
    // [-pi/2, pi/2)
    if (box.extent.y() > box.extent.x()) {
        std::swap(box.extent.x(), box.extent.y());
        box.yaw += M_PI / 2;
    }
    while (box.yaw >= M_PI / 2) box.yaw -= M_PI;
    while (box.yaw < -M_PI / 2) box.yaw += M_PI;
    return box;
}

}  // namespace

std::size_t BevGrid::occupied_count() const {
    std::size_t n = 0;
    for (double c : cells) {
        if (c != kEmpty) ++n;
    }
    return n;
}

BevGrid bev_project(const PointCloud& cloud, double cell_size) {
    if (cell_size <= 0) {
        throw ValidationError("bev_project: cell_size must be > 0");
    }
    if (cloud.empty()) {
        return make_grid(cell_size, {0, 0}, {cell_size, cell_size});
    }
    Eigen::Vector2d lo(1e300, 1e300), hi(-1e300, -1e300);
    for (const auto& p : cloud.points) {
        lo = lo.cwiseMin(p.head<2>());
        hi = hi.cwiseMax(p.head<2>());
    }
    // half-cell padding so max coordinates land inside the last cell
    return bev_project(cloud, cell_size, lo,
                       hi + Eigen::Vector2d(0.5 * cell_size, 0.5 * cell_size));
}

BevGrid bev_project(const PointCloud& cloud, double cell_size,
                    const Eigen::Vector2d& min_xy, const Eigen::Vector2d& max_xy) {
    if (cell_size <= 0) {
        throw ValidationError("bev_project: cell_size must be > 0");
    }
    BevGrid grid = make_grid(cell_size, min_xy, max_xy);
    splat(grid, cloud);
    return grid;
}

std::vector<OcclusionRegion> detect_occlusions(const BevGrid& grid,
                                               double height_threshold, int n_largest) {
    if (n_largest < 1) {
        throw ValidationError("detect_occlusions: N must be >= 1");
    }
    std::vector<char> mask(grid.cells.size(), 0);
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        mask[i] = grid.cells[i] != BevGrid::kEmpty && grid.cells[i] > height_threshold;
    }
    auto regions = connected_components(grid, mask);
    std::sort(regions.begin(), regions.end(),
              [](const OcclusionRegion& a, const OcclusionRegion& b) {
                  if (a.area != b.area) return a.area > b.area;
                  return a.bbox_min < b.bbox_min;
              });
    if (static_cast<int>(regions.size()) > n_largest) {
        regions.resize(static_cast<std::size_t>(n_largest));
    }
    return regions;
}

double optimal_tilt_angle(const SensorRig& sensor, const Eigen::Vector3d& target,
                          const Transform4d& h_m) {
    const Eigen::Vector3d virtual_target = h_m.inverse().apply(target);
    const double dx = virtual_target.x() - sensor.position.x();
    const double depth = sensor.position.z() - virtual_target.z();
    if (depth <= 1e-9) {
        throw UnreachableTargetError(
            "optimal_tilt_angle: virtual target is level with or above the sensor");
    }
    return std::atan2(dx, depth);
}

double aim_residual_y_deg(const SensorRig& sensor, const Eigen::Vector3d& target,
                          const Transform4d& h_m) {
    const Eigen::Vector3d virtual_target = h_m.inverse().apply(target);
    const double dx = virtual_target.x() - sensor.position.x();
    const double dy = virtual_target.y() - sensor.position.y();
    const double depth = sensor.position.z() - virtual_target.z();
    return std::atan2(std::abs(dy), std::hypot(dx, depth)) * 180.0 / M_PI;
}

FusedCloud fuse(const Capture& direct, const Capture& reflect, const SensorRig& rig,
                const Transform4d& h_m) {
    for (const Capture* cap : {&direct, &reflect}) {
        if (!cap->cloud.empty() && cap->cloud.frame != Frame::TiltedSensor) {
            throw ContractError("fuse: captures must be in the TiltedSensor frame");
        }
    }
    FusedCloud out;
    out.cloud.reserve(direct.size() + reflect.size());
    for (const Capture* cap : {&direct, &reflect}) {
        if (cap->cloud.empty()) continue;
        const Transform4d to_world = rig.pose(cap->tilt_angle);
        const PointCloud world = apply(to_world, cap->cloud, Frame::World);
        for (std::size_t i = 0; i < world.size(); ++i) {
            if (world.via_mirror[i]) {
                out.cloud.add(h_m.apply(world.points[i]), true);
                ++out.mirror_count;
            } else {
                out.cloud.add(world.points[i], false);
                ++out.direct_count;
            }
        }
    }
    return out;
}

std::vector<DetectedBox> detect_boxes(const BevGrid& grid, double min_height,
                                      double max_height, int min_area_cells) {
    std::vector<char> mask(grid.cells.size(), 0);
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        mask[i] = grid.cells[i] != BevGrid::kEmpty && grid.cells[i] >= min_height &&
                  grid.cells[i] <= max_height;
    }
    const auto components = connected_components(grid, mask);
    std::vector<DetectedBox> detections;
    for (const auto& component : components) {
        if (component.area < min_area_cells) continue;
        std::vector<Eigen::Vector2d> pts;
        pts.reserve(component.cells.size());
        for (const auto& [r, c] : component.cells) {
            pts.push_back(grid.cell_center(r, c));
        }
        DetectedBox box = min_area_rect(pts, grid.cell_size);
        const double rect_cells =
            (box.extent.x() * box.extent.y()) / (grid.cell_size * grid.cell_size);
        box.score = std::min(1.0, component.area / std::max(rect_cells, 1.0));
        detections.push_back(box);
    }
    // largest first so greedy matching is deterministic
    std::sort(detections.begin(), detections.end(),
              [](const DetectedBox& a, const DetectedBox& b) {
                  const double aa = a.extent.x() * a.extent.y();
                  const double bb = b.extent.x() * b.extent.y();
                  if (aa != bb) return aa > bb;
                  if (a.center.x() != b.center.x()) return a.center.x() < b.center.x();
                  return a.center.y() < b.center.y();
              });
    return detections;
}

double coverage(const FusedCloud& fused, const PointCloud& reference, double radius) {
    if (reference.empty()) {
        throw UndefinedCoverageError("coverage: reference cloud is empty");
    }
    if (fused.cloud.frame != Frame::World || reference.frame != Frame::World) {
        throw ContractError("coverage: both clouds must be in the World frame");
    }
    if (fused.cloud.empty()) return 0.0;
    const PointGrid grid(fused.cloud.points, radius);
    std::size_t covered = 0;
    for (const auto& p : reference.points) {
        if (grid.any_within(p, radius)) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(reference.size());
}

Transform4d scene_mirror_transform(const SceneModel& scene) {
    const Plane3d plane =
        scene.estimated_mirror_plane ? *scene.estimated_mirror_plane : scene.mirror.plane;
    return householder_from_plane(plane);
}

TiltChoice choose_tilt(const SceneModel& scene, const Capture& direct,
                       const Transform4d& h_m) {
    TiltChoice choice;
    const PointCloud world =
        apply(scene.sensor.pose(direct.tilt_angle), direct.cloud, Frame::World);
    const BevGrid grid = bev_project(
        world, 0.01, {scene.workspace_x.x(), scene.workspace_y.x()},
        {scene.workspace_x.y(), scene.workspace_y.y()});
    choice.regions = detect_occlusions(grid, scene.height_threshold,
                                       scene.expected_robots);
    if (choice.regions.empty()) {
        return choice;
    }
    choice.occlusion_found = true;
    const auto& largest = choice.regions.front();
    // aim at the workplace under the occluder, not at the arm itself
    choice.target = Eigen::Vector3d(largest.centroid.x(), largest.centroid.y(),
                                    0.5 * scene.expected_object_height);
    try {
        choice.tilt_angle = optimal_tilt_angle(scene.sensor, choice.target, h_m);
        choice.residual_y_deg = aim_residual_y_deg(scene.sensor, choice.target, h_m);
    } catch (const UnreachableTargetError&) {
        choice.unreachable = true;
        choice.tilt_angle = 0.0;
    }
    return choice;
}

std::vector<DetectedBox> detect_from_fused(const SceneModel& scene,
                                           const FusedCloud& fused, double cell_size) {
    // height-threshold filter removes the arm before detection
    PointCloud filtered(Frame::World);
    for (std::size_t i = 0; i < fused.cloud.size(); ++i) {
        if (fused.cloud.points[i].z() <= scene.height_threshold) {
            filtered.add(fused.cloud.points[i], fused.cloud.via_mirror[i] != 0);
        }
    }
    const BevGrid grid = bev_project(
        filtered, cell_size, {scene.workspace_x.x(), scene.workspace_y.x()},
        {scene.workspace_x.y(), scene.workspace_y.y()});
    return detect_boxes(grid, 0.04, scene.height_threshold - 0.01);
}

PipelineResult run_pipeline(const SceneModel& scene, const NoiseModel& noise) {
    PipelineResult result;
    const Transform4d h_m = scene_mirror_transform(scene);
    result.direct = render(scene, 0.0, noise, scene.camera);

    const TiltChoice choice = choose_tilt(scene, result.direct, h_m);
    result.occlusion_found = choice.occlusion_found;
    result.unreachable_fallback = choice.unreachable;
    result.residual_y_deg = choice.residual_y_deg;

    if (choice.occlusion_found && !choice.unreachable) {
        result.tilt_angle = choice.tilt_angle;
        result.reflect = render(scene, choice.tilt_angle, noise, scene.camera);
    }
    result.fused = fuse(result.direct, result.reflect, scene.sensor, h_m);
    result.detections = detect_from_fused(scene, result.fused);
    return result;
}

}  // namespace mirrorsense
