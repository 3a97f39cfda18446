#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "mirrorsense/geometry.hpp"
#include "mirrorsense/pipeline.hpp"
#include "mirrorsense/scene.hpp"
#include "mirrorsense/sensor_sim.hpp"

namespace mirrorsense {

enum class ArmJoint : int { Shoulder = 0, Elbow = 1 };

/// Greedy search space: joints in sweep order (largest impact first), one
/// angle grid per joint.
struct PoseSearchSpace {
    struct JointGrid {
        ArmJoint joint;
        std::vector<double> angles;  // radians
    };
    std::vector<JointGrid> joints;

    static PoseSearchSpace default_two_joint(int settings_per_joint = 10);
};

struct RegistrationParams {
    int ransac_iterations = 512;
    double inlier_epsilon = 0.01;   // meters
    double gate = 0.05;             // fine correspondence gate
    double coarse_gate = 0.30;      // first-pass gate; shrinks toward `gate`
    double min_inlier_fraction = 0.3;  // f_min
    double icp_tolerance = 1e-7;    // mean-residual improvement stop
    int max_icp_iterations = 60;
    double trim_fraction = 0.7;     // share of gated pairs kept per ICP step
    int polish_iterations = 15;     // point-to-plane steps after ICP
    int reflection_refine_iterations = 20;  // on-manifold plane refinement
    double normal_radius = 0.03;    // neighborhood for destination normals
    double voxel_size = 0.01;
    double reflection_tau = 0.25;   // residual gate on the raw composition
    std::uint64_t seed = 0;
};

struct CalibrationResult {
    Transform4d h_m_estimated;
    Plane3d plane_estimated;
    double translational_error = 0.0;  // meters, vs ground truth when known
    double rotational_error = 0.0;     // degrees
    bool converged = false;
    double inlier_fraction = 0.0;
    int icp_iterations = 0;
    double mean_residual = 0.0;
};

/// Weighted point-count criterion: n_direct + w * n_reflect. The reflection
/// term is boosted because mirror-path clouds are inherently sparse.
double n_points(double n_direct, double n_reflect, double weight = 2.0);

/// Arm points (z above the scene height threshold) in a world-mapped direct
/// capture and in the realized mirror returns of a reflection capture.
std::pair<int, int> arm_point_counts(const Capture& direct, const Capture& reflect,
                                     const SceneModel& scene);

struct PoseSearchResult {
    ArmModel pose;
    double best_n_points = 0.0;
    int capture_pairs = 0;
    bool degenerate = false;  // every sweep step counted zero points
};

/// Greedy per-joint sweep: for each joint in order, capture direct +
/// reflection at every grid angle, keep the argmax of the weighted count,
/// then move to the next joint.
PoseSearchResult find_optimal_pose(const SceneModel& scene,
                                   const PoseSearchSpace& space,
                                   const NoiseModel& noise, double weight = 2.0);

/// Reflection-constrained registration: realize the virtual cloud by h_init,
/// gate nearest-neighbor correspondences, RANSAC a proper rigid correction,
/// refine with point-to-point ICP, then project the improper composition
/// back onto the reflection manifold.
CalibrationResult register_mirror(const PointCloud& reflect_virtual,
                                  const PointCloud& direct,
                                  const Transform4d& h_init,
                                  const RegistrationParams& params = {},
                                  const Transform4d* ground_truth = nullptr);

/// Error between two mirror transforms: their composition is a proper rigid
/// motion; report its translation norm (meters) and rotation angle (degrees).
std::pair<double, double> calib_error(const Transform4d& h_est,
                                      const Transform4d& h_true);

struct SweepRow {
    double angle_deg = 0.0;
    double mean_translational = 0.0;
    double mean_rotational = 0.0;
    double converged_fraction = 0.0;
    double mean_n_points = 0.0;
};

/// Tilt the true mirror about its in-plane horizontal axis by each angle,
/// then calibrate against the unperturbed prior over `runs` noise seeds.
std::vector<SweepRow> calibration_sweep(const SceneModel& scene,
                                        const std::vector<double>& angles_deg,
                                        const ArmModel& pose, int runs,
                                        const RegistrationParams& params = {});

/// The per-run captures the sweep and pose search share: direct at zero
/// tilt, reflection aimed by the belief transform (arm base fallback when no
/// occlusion shows).
struct CalibrationCaptures {
    Capture direct;
    Capture reflect;
    double tilt_angle = 0.0;
};

CalibrationCaptures calibration_captures(const SceneModel& scene,
                                         const NoiseModel& noise,
                                         const Transform4d& h_belief);

/// Robot-arm cloud selection for registration. The direct side is the plain
/// height-threshold filter. The virtual side keeps mirror returns whose
/// prior realization lands inside the robot's reach envelope, with a height
/// margin so a stale prior (the thing being calibrated) cannot drop the arm.
PointCloud select_direct_arm_cloud(const SceneModel& scene, const Capture& direct);
PointCloud select_virtual_arm_cloud(const SceneModel& scene, const Capture& reflect,
                                    const Transform4d& h_init,
                                    double displacement_budget = 0.28,
                                    double z_margin = 0.12);

/// Two-pass calibration from one capture pair: register against the prior,
/// then re-select the arm clouds with the refined estimate (tight budgets)
/// and register once more on the cleaned data.
CalibrationResult calibrate_mirror(const SceneModel& scene,
                                   const CalibrationCaptures& captures,
                                   const Transform4d& h_init,
                                   const RegistrationParams& params = {},
                                   const Transform4d* ground_truth = nullptr);

/// Mirror plane tilted about its in-plane horizontal axis through the patch
/// center (the physical "mirror angle shifted" disturbance).
Plane3d perturbed_mirror_plane(const MirrorPatch& mirror, double angle_deg);

}  // namespace mirrorsense
