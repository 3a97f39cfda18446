#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mirrorsense/geometry.hpp"
#include "mirrorsense/sensor_sim.hpp"

namespace mirrorsense {

/// Axis-aligned-height box with yaw about the vertical axis. Sizes are full
/// extents (width along local x, depth along local y, height along z).
struct Box {
    Eigen::Vector3d center{0, 0, 0.1};
    Eigen::Vector3d size{0.3, 0.2, 0.2};  // (w, d, h)
    double yaw = 0.0;

    double top_z() const { return center.z() + 0.5 * size.z(); }
    double bottom_z() const { return center.z() - 0.5 * size.z(); }
    void validate() const;
};

struct Capsule {
    Eigen::Vector3d p0;
    Eigen::Vector3d p1;
    double radius;
};

/// Two-link arm on a yawed base: planar 2R kinematics in the vertical plane
/// given by base_yaw. shoulder is measured up from horizontal; elbow is the
/// flexion of the forearm back toward horizontal (0 = straight arm).
struct ArmModel {
    Eigen::Vector2d base{0.5, 0.0};
    double base_yaw = M_PI;
    Eigen::Vector2d link_lengths{0.45, 0.40};  // (upper, fore)
    double link_radius = 0.085;
    Eigen::Vector2d joint_angles{M_PI / 3, M_PI / 3};  // (shoulder, elbow)
    Eigen::Vector2d joint_limits{-M_PI / 2, M_PI / 2};

    void validate() const;
};

/// Shoulder and elbow capsules from forward kinematics.
std::array<Capsule, 2> arm_capsules(const ArmModel& arm);

/// Rectangular mirror patch on a plane. width spans the in-plane horizontal
/// axis, height the in-plane vertical axis. Only the front face reflects;
/// the front side is the one holding the sensor.
struct MirrorPatch {
    Plane3d plane{1, 0, 0, -1.2};
    Eigen::Vector3d center{1.2, 0.0, 1.0};
    double width = 1.3;
    double height = 1.6;
    double reflectance = 0.9;  // alpha_m

    // in-plane axes: u horizontal, v vertical
    Eigen::Vector3d axis_u() const;
    Eigen::Vector3d axis_v() const;
    void validate() const;
};

/// The simulated workcell: ground plane z=0, boxes, one mirror, the sensor
/// rig, and optionally the occluding arm.
struct SceneModel {
    std::string name = "scene";
    std::vector<Box> boxes;
    std::optional<ArmModel> arm;
    MirrorPatch mirror;
    SensorRig sensor;
    CameraIntrinsics camera;
    NoiseModel noise;
    double height_threshold = 0.35;
    int expected_robots = 1;  // N
    double expected_object_height = 0.15;
    // BEV evaluation region; keeps grids bounded when tilted rays graze far
    // ground
    Eigen::Vector2d workspace_x{-1.6, 1.6};
    Eigen::Vector2d workspace_y{-1.2, 1.2};
    std::optional<Plane3d> estimated_mirror_plane;  // written by calibration

    double tallest_box() const;
    void validate() const;
};

enum class Difficulty { Easy, Hard };

Difficulty difficulty_from_string(const std::string& s);
std::string to_string(Difficulty d);

/// Parse / serialize the scene config document (JSON, schema in the README).
SceneModel scene_from_config(const std::string& text);
std::string scene_to_config(const SceneModel& scene);

SceneModel load_scene(const std::string& path);
void save_scene(const SceneModel& scene, const std::string& path);

/// Deterministic scene generator: easy = 1-3 boxes, hard = 4-6, pairwise
/// non-overlapping, with the arm posed over one box to create an occlusion.
SceneModel randomized_scene(std::uint64_t seed, Difficulty difficulty);

}  // namespace mirrorsense
