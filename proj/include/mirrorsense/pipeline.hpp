#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "mirrorsense/geometry.hpp"
#include "mirrorsense/scene.hpp"
#include "mirrorsense/sensor_sim.hpp"

namespace mirrorsense {

/// Top-down max-height raster. Row r, column c covers
/// [origin + (c,r)*cell, origin + (c+1,r+1)*cell); empty cells hold kEmpty.
struct BevGrid {
    static constexpr double kEmpty = -std::numeric_limits<double>::infinity();

    double cell_size = 0.01;
    Eigen::Vector2d origin{0, 0};
    int rows = 0;
    int cols = 0;
    std::vector<double> cells;

    double at(int row, int col) const {
        return cells[static_cast<std::size_t>(row) * cols + col];
    }
    double& at(int row, int col) {
        return cells[static_cast<std::size_t>(row) * cols + col];
    }
    bool occupied(int row, int col) const { return at(row, col) != kEmpty; }

    Eigen::Vector2d cell_center(int row, int col) const {
        return origin + cell_size * Eigen::Vector2d(col + 0.5, row + 0.5);
    }

    std::size_t occupied_count() const;
};

struct OcclusionRegion {
    std::vector<std::pair<int, int>> cells;  // (row, col)
    int area = 0;
    Eigen::Vector2d centroid{0, 0};
    std::pair<int, int> bbox_min{0, 0};
};

struct DetectedBox {
    Eigen::Vector2d center{0, 0};
    Eigen::Vector2d extent{0, 0};  // (w, d)
    double yaw = 0.0;
    double score = 0.0;
};

/// World-frame cloud after fusion; every mirror return has been realized to
/// the real side of the mirror plane.
struct FusedCloud {
    PointCloud cloud{Frame::World};
    std::size_t direct_count = 0;
    std::size_t mirror_count = 0;
};

/// Grid bounds derived from the cloud extents.
BevGrid bev_project(const PointCloud& cloud, double cell_size);

/// Grid pinned to explicit bounds; points outside are ignored.
BevGrid bev_project(const PointCloud& cloud, double cell_size,
                    const Eigen::Vector2d& min_xy, const Eigen::Vector2d& max_xy);

/// Cells above the height threshold, 4-connected, N largest by area
/// (descending); ties broken by bounding-box corner.
std::vector<OcclusionRegion> detect_occlusions(const BevGrid& grid,
                                               double height_threshold, int n_largest);

/// Tilt angle that lays the optical axis through the mirror image of the
/// target, computed in the world X-Z plane.
double optimal_tilt_angle(const SensorRig& sensor, const Eigen::Vector3d& target,
                          const Transform4d& h_m);

/// Angular Y-residual of the aim (the tilt-only rig cannot reduce it);
/// reported, never corrected.
double aim_residual_y_deg(const SensorRig& sensor, const Eigen::Vector3d& target,
                          const Transform4d& h_m);

/// Map both captures to the world frame and realize every mirror return by
/// h_m. Provenance counts distinguish direct from mirror points.
FusedCloud fuse(const Capture& direct, const Capture& reflect, const SensorRig& rig,
                const Transform4d& h_m);

/// Rule-based bird's-eye-view detector: height-band cells, 4-connected
/// components, minimum-area rectangle per component.
std::vector<DetectedBox> detect_boxes(const BevGrid& grid, double min_height,
                                      double max_height, int min_area_cells = 30);

/// Fraction of reference points with a fused point within rho.
double coverage(const FusedCloud& fused, const PointCloud& reference,
                double radius = 0.01);

struct TiltChoice {
    double tilt_angle = 0.0;
    bool occlusion_found = false;
    bool unreachable = false;
    double residual_y_deg = 0.0;
    std::vector<OcclusionRegion> regions;
    Eigen::Vector3d target{0, 0, 0};
};

/// Occlusion detection + tilt selection from a direct capture.
TiltChoice choose_tilt(const SceneModel& scene, const Capture& direct,
                       const Transform4d& h_m);

/// Height-filter, clip to the workspace, and run the box detector.
std::vector<DetectedBox> detect_from_fused(const SceneModel& scene,
                                           const FusedCloud& fused,
                                           double cell_size = 0.01);

struct PipelineResult {
    FusedCloud fused;
    std::vector<DetectedBox> detections;
    double tilt_angle = 0.0;
    bool occlusion_found = false;
    bool unreachable_fallback = false;
    double residual_y_deg = 0.0;
    Capture direct;
    Capture reflect;  // empty when no reflection pass ran
};

/// Full adaptive pass: direct capture, occlusion detection, tilt selection,
/// reflection capture, fusion, detection. Falls back to direct-only when no
/// occlusion is found or the target is unreachable.
PipelineResult run_pipeline(const SceneModel& scene, const NoiseModel& noise);

/// Mirror transform the pipeline believes in: the calibrated estimate when
/// present, otherwise the configured mirror plane.
Transform4d scene_mirror_transform(const SceneModel& scene);

}  // namespace mirrorsense
