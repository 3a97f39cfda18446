#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <vector>

#include "mirrorsense/geometry.hpp"

namespace mirrorsense {

struct SceneModel;

struct CameraIntrinsics {
    int width = 640;
    int height = 480;
    double horizontal_fov = 60.0 * M_PI / 180.0;
    double vertical_fov = 45.0 * M_PI / 180.0;

    void validate() const;
};

/// Range noise grows with working distance: sigma(D) = sigma0 * (D/D0)^p.
/// A return is dropped when its received-signal proxy (mirror attenuation
/// times inverse-square falloff) sinks below dropout_threshold.
struct NoiseModel {
    double sigma0 = 0.0015;           // meters at the reference distance
    double reference_distance = 2.1;  // D0, meters
    int exponent = 2;                 // p in {1, 2}
    double dropout_threshold = 0.05;
    std::uint64_t seed = 0;

    double sigma(double distance) const {
        const double ratio = distance / reference_distance;
        return sigma0 * (exponent == 1 ? ratio : ratio * ratio);
    }
    void validate() const;
};

enum class HitKind : std::uint8_t { Ground, Box, Arm, Mirror };

/// One rendered frame. The cloud lives in the tilted-sensor frame; mirror
/// returns record the VIRTUAL image point (origin + direction * path
/// length). Ground-truth channels carry the true surface hit per point for
/// test oracles; exporters ignore them.
struct Capture {
    static constexpr double kNoReturn = std::numeric_limits<double>::infinity();

    PointCloud cloud{Frame::TiltedSensor};
    std::vector<double> depth;  // width*height ranges, kNoReturn when empty
    int width = 0;
    int height = 0;
    double tilt_angle = 0.0;

    // per-cloud-point ground truth (world frame, noise-free)
    std::vector<HitKind> hit_kind;
    std::vector<int> hit_index;  // box index, else -1
    std::vector<Eigen::Vector3d> hit_point_world;
    std::vector<Eigen::Vector3d> hit_normal_world;

    std::size_t size() const { return cloud.size(); }
};

struct RenderOptions {
    bool include_mirror = true;
    bool apply_attenuation = true;
    double max_range = 50.0;
    std::uint64_t seed_tag = 0;  // mixed with the noise seed per capture
};

/// Pinhole ray cast from the rig tilted by tilt_angle. Rays that hit the
/// mirror patch front face reflect for exactly one more leg; a second mirror
/// contact or a back-face hit absorbs the ray.
Capture render(const SceneModel& scene, double tilt_angle, const NoiseModel& noise,
               const CameraIntrinsics& intrinsics);

/// Same ray caster from an arbitrary camera pose (world <- camera). The
/// rotation block may be improper; the two-sensor oracle renders from the
/// mirror image of the tilted pose this way.
Capture render_from_pose(const SceneModel& scene, const Transform4d& pose,
                         const NoiseModel& noise, const CameraIntrinsics& intrinsics,
                         const RenderOptions& options = {});

/// Working-distance growth of reflection sensing: 1/cos(tilt_angle).
double reflect_working_distance(double tilt_angle);

}  // namespace mirrorsense
