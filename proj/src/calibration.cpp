#include "mirrorsense/calibration.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mirrorsense/rng.hpp"
#include "mirrorsense/spatial.hpp"

namespace mirrorsense {

namespace {

// Deterministic voxel downsample: centroid per voxel, voxels emitted in
// sorted key order so the result is independent of input point order.
std::vector<Eigen::Vector3d> voxel_downsample(const std::vector<Eigen::Vector3d>& pts,
                                              double voxel) {
    struct Accum {
        Eigen::Vector3d sum{0, 0, 0};
        int count = 0;
    };
    std::map<std::tuple<int, int, int>, Accum> voxels;
    for (const auto& p : pts) {
        const auto key = std::make_tuple(static_cast<int>(std::floor(p.x() / voxel)),
                                         static_cast<int>(std::floor(p.y() / voxel)),
                                         static_cast<int>(std::floor(p.z() / voxel)));
        auto& acc = voxels[key];
        acc.sum += p;
        acc.count += 1;
    }
    std::vector<Eigen::Vector3d> out;
    out.reserve(voxels.size());
    for (const auto& [key, acc] : voxels) {
        out.push_back(acc.sum / acc.count);
    }
    return out;
}

Transform4d umeyama_rigid(const std::vector<Eigen::Vector3d>& src,
                          const std::vector<Eigen::Vector3d>& dst,
                          const std::vector<std::pair<int, int>>& pairs) {
    Eigen::Matrix3Xd a(3, pairs.size());
    Eigen::Matrix3Xd b(3, pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        a.col(i) = src[pairs[i].first];
        b.col(i) = dst[pairs[i].second];
    }
    const Eigen::Matrix4d t = Eigen::umeyama(a, b, false);
    return Transform4d::from_matrix(t).reorthonormalized();
}

double mean_pair_residual(const std::vector<Eigen::Vector3d>& src,
                          const std::vector<Eigen::Vector3d>& dst,
                          const std::vector<std::pair<int, int>>& pairs,
                          const Transform4d& t) {
    double sum = 0.0;
    for (const auto& [i, k] : pairs) {
        sum += (t.apply(src[i]) - dst[k]).norm();
    }
    return pairs.empty() ? 0.0 : sum / pairs.size();
}

ArmModel with_joint(const ArmModel& arm, ArmJoint joint, double angle) {
    ArmModel out = arm;
    out.joint_angles[static_cast<int>(joint)] = angle;
    return out;
}

}  // namespace

PoseSearchSpace PoseSearchSpace::default_two_joint(int settings_per_joint) {
    PoseSearchSpace space;
    auto linspace = [&](double lo, double hi) {
        std::vector<double> out;
        for (int i = 0; i < settings_per_joint; ++i) {
            out.push_back(lo + (hi - lo) * i / (settings_per_joint - 1));
        }
        return out;
    };
    // shoulder and elbow, largest impact first; ranges keep the wrist above
    // ground across the sweep
    space.joints.push_back({ArmJoint::Shoulder, linspace(30.0 * M_PI / 180.0,
                                                         90.0 * M_PI / 180.0)});
    space.joints.push_back({ArmJoint::Elbow, linspace(-45.0 * M_PI / 180.0,
                                                      90.0 * M_PI / 180.0)});
    return space;
}

double n_points(double n_direct, double n_reflect, double weight) {
    if (n_direct < 0 || n_reflect < 0) {
        throw ValidationError("n_points: counts must be >= 0");
    }
    if (weight <= 0) {
        throw ValidationError("n_points: weight must be > 0");
    }
    return n_direct + weight * n_reflect;
}

std::pair<int, int> arm_point_counts(const Capture& direct, const Capture& reflect,
                                     const SceneModel& scene) {
    const Transform4d h_m = scene_mirror_transform(scene);
    int n_direct = 0;
    int n_reflect = 0;
    if (!direct.cloud.empty()) {
        const PointCloud world =
            apply(scene.sensor.pose(direct.tilt_angle), direct.cloud, Frame::World);
        for (std::size_t i = 0; i < world.size(); ++i) {
            if (!world.via_mirror[i] && world.points[i].z() > scene.height_threshold) {
                ++n_direct;
            }
        }
    }
    if (!reflect.cloud.empty()) {
        const PointCloud world =
            apply(scene.sensor.pose(reflect.tilt_angle), reflect.cloud, Frame::World);
        for (std::size_t i = 0; i < world.size(); ++i) {
            if (world.via_mirror[i] &&
                h_m.apply(world.points[i]).z() > scene.height_threshold) {
                ++n_reflect;
            }
        }
    }
    return {n_direct, n_reflect};
}

CalibrationCaptures calibration_captures(const SceneModel& scene,
                                         const NoiseModel& noise,
                                         const Transform4d& h_belief) {
    // calibration runs the sensor unbinned: twice the workspace-scan
    // resolution in each axis
    SceneModel full_res = scene;
    full_res.camera.width = 2 * scene.camera.width;
    full_res.camera.height = 2 * scene.camera.height;
    const SceneModel& scene_ref = full_res;

    CalibrationCaptures out;
    out.direct = render(scene_ref, 0.0, noise, scene_ref.camera);
    TiltChoice choice = choose_tilt(scene_ref, out.direct, h_belief);
    if (!choice.occlusion_found || choice.unreachable) {
        // aim at the robot base; its pose is known to the controller
        if (scene.arm) {
            const Eigen::Vector3d target(scene.arm->base.x(), scene.arm->base.y(),
                                         scene.height_threshold);
            try {
                choice.tilt_angle = optimal_tilt_angle(scene.sensor, target, h_belief);
            } catch (const UnreachableTargetError&) {
                choice.tilt_angle = 0.0;
            }
        }
    }
    out.tilt_angle = choice.tilt_angle;
    out.reflect = render(scene_ref, out.tilt_angle, noise, scene_ref.camera);
    return out;
}

PointCloud select_direct_arm_cloud(const SceneModel& scene, const Capture& direct) {
    PointCloud out(Frame::World);
    if (direct.cloud.empty()) return out;
    const PointCloud world =
        apply(scene.sensor.pose(direct.tilt_angle), direct.cloud, Frame::World);
    for (std::size_t i = 0; i < world.size(); ++i) {
        if (!world.via_mirror[i] && world.points[i].z() > scene.height_threshold) {
            out.add(world.points[i], false);
        }
    }
    return out;
}

// The z_margin widens the height cut below the threshold. It defaults to
// zero so the virtual selection stays symmetric with the direct side; an
// asymmetric band of unmatched points drags point-to-point ICP sideways.
PointCloud select_virtual_arm_cloud(const SceneModel& scene, const Capture& reflect,
                                    const Transform4d& h_init,
                                    double displacement_budget, double z_margin) {
    PointCloud out(Frame::World);
    if (reflect.cloud.empty() || !scene.arm) return out;

    // The controller knows its arm pose; the expected virtual arm is the
    // above-threshold part of the capsules mapped through the prior. Mirror
    // returns near that expectation are robot data even when the prior is
    // stale by the displacement budget.
    const auto caps = arm_capsules(*scene.arm);
    const Transform4d to_virtual = h_init.inverse();
    std::vector<Capsule> expected;
    for (const auto& cap : caps) {
        const double z0 = cap.p0.z(), z1 = cap.p1.z();
        const double cut = scene.height_threshold - 0.02;
        double t0 = 0.0, t1 = 1.0;
        if (z0 < cut && z1 < cut) continue;
        if (std::abs(z1 - z0) > 1e-12) {
            const double tc = (cut - z0) / (z1 - z0);
            if (z0 < cut) t0 = std::clamp(tc, 0.0, 1.0);
            if (z1 < cut) t1 = std::clamp(tc, 0.0, 1.0);
        }
        const Eigen::Vector3d a = cap.p0 + t0 * (cap.p1 - cap.p0);
        const Eigen::Vector3d b = cap.p0 + t1 * (cap.p1 - cap.p0);
        expected.push_back(Capsule{to_virtual.apply(a), to_virtual.apply(b), cap.radius});
    }
    if (expected.empty()) return out;

    const double z_floor = scene.height_threshold - z_margin;
    const PointCloud world =
        apply(scene.sensor.pose(reflect.tilt_angle), reflect.cloud, Frame::World);
    for (std::size_t i = 0; i < world.size(); ++i) {
        if (!world.via_mirror[i]) continue;
        const Eigen::Vector3d& p = world.points[i];
        // ground returns realize near z=0 even under a stale prior
        if (h_init.apply(p).z() <= z_floor) continue;
        bool close = false;
        for (const auto& cap : expected) {
            const Eigen::Vector3d ba = cap.p1 - cap.p0;
            const double denom = ba.squaredNorm();
            const double t = denom < 1e-12
                                 ? 0.0
                                 : std::clamp((p - cap.p0).dot(ba) / denom, 0.0, 1.0);
            const double dist = (p - (cap.p0 + t * ba)).norm() - cap.radius;
            if (dist <= displacement_budget) {
                close = true;
                break;
            }
        }
        if (close) out.add(p, true);
    }
    return out;
}

PoseSearchResult find_optimal_pose(const SceneModel& scene,
                                   const PoseSearchSpace& space,
                                   const NoiseModel& noise, double weight) {
    if (space.joints.empty()) {
        throw ValidationError("find_optimal_pose: empty search space");
    }
    for (const auto& grid : space.joints) {
        if (grid.angles.empty()) {
            throw ValidationError("find_optimal_pose: joint grid is empty");
        }
    }
    if (!scene.arm) {
        throw ValidationError("find_optimal_pose: scene has no arm");
    }

    const Transform4d h_belief = scene_mirror_transform(scene);
    PoseSearchResult result;
    result.pose = *scene.arm;
    bool any_nonzero = false;

    for (const auto& grid : space.joints) {
        double max_points = 0.0;
        double best_angle = result.pose.joint_angles[static_cast<int>(grid.joint)];
        bool found = false;
        for (double angle : grid.angles) {
            const ArmModel candidate = with_joint(result.pose, grid.joint, angle);
            SceneModel posed = scene;
            posed.arm = candidate;
            NoiseModel capture_noise = noise;
            capture_noise.seed =
                mix_seed(noise.seed, static_cast<std::uint64_t>(result.capture_pairs));
            CalibrationCaptures caps;
            try {
                caps = calibration_captures(posed, capture_noise, h_belief);
            } catch (const InvalidPoseError&) {
                continue;  // unreachable arm configuration, skip the angle
            }
            ++result.capture_pairs;
            const auto [n_direct, n_reflect] =
                arm_point_counts(caps.direct, caps.reflect, posed);
            const double score = n_points(n_direct, n_reflect, weight);
            if (score > max_points) {
                max_points = score;
                best_angle = angle;
                found = true;
            }
        }
        if (found) {
            result.pose = with_joint(result.pose, grid.joint, best_angle);
            result.best_n_points = max_points;
            any_nonzero = true;
        }
    }
    result.degenerate = !any_nonzero;
    return result;
}

CalibrationResult register_mirror(const PointCloud& reflect_virtual,
                                  const PointCloud& direct,
                                  const Transform4d& h_init,
                                  const RegistrationParams& params,
                                  const Transform4d* ground_truth) {
    if (reflect_virtual.frame != Frame::World || direct.frame != Frame::World) {
        throw ContractError("register_mirror: clouds must be in the World frame");
    }

    // (1) realize the virtual cloud with the prior mirror transform
    std::vector<Eigen::Vector3d> realized;
    realized.reserve(reflect_virtual.size());
    for (const auto& p : reflect_virtual.points) {
        realized.push_back(h_init.apply(p));
    }

    // equalize densities; reflection clouds are inherently sparse
    const std::vector<Eigen::Vector3d> src = voxel_downsample(realized, params.voxel_size);
    const std::vector<Eigen::Vector3d> dst =
        voxel_downsample(direct.points, params.voxel_size);

    auto gated_pairs = [&](const Transform4d& t, double gate) {
        std::vector<std::pair<int, int>> pairs;
        const PointGrid grid(dst, gate);
        for (std::size_t i = 0; i < src.size(); ++i) {
            const int nn = grid.nearest(t.apply(src[i]), gate);
            if (nn >= 0) pairs.emplace_back(static_cast<int>(i), nn);
        }
        return pairs;
    };

    // trimmed set: best residuals first; rejects pairs from surface regions
    // only one view observed
    auto trimmed = [&](std::vector<std::pair<int, int>> pairs, const Transform4d& t) {
        if (params.trim_fraction >= 1.0 || pairs.size() < 6) return pairs;
        std::vector<std::pair<double, std::size_t>> ranked(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            ranked[i] = {(t.apply(src[pairs[i].first]) - dst[pairs[i].second]).norm(), i};
        }
        std::sort(ranked.begin(), ranked.end());
        const std::size_t keep = std::max<std::size_t>(
            3, static_cast<std::size_t>(params.trim_fraction * pairs.size()));
        std::vector<std::pair<int, int>> out;
        out.reserve(keep);
        for (std::size_t i = 0; i < keep && i < ranked.size(); ++i) {
            out.push_back(pairs[ranked[i].second]);
        }
        return out;
    };

    // (2) first correspondence set under the coarse gate
    const auto initial_pairs = gated_pairs(Transform4d::identity(), params.coarse_gate);
    if (initial_pairs.size() < 3) {
        throw NoOverlapError("register_mirror: fewer than 3 gated correspondences");
    }

    // Displacement calibration corrects a drift of a few degrees; wilder
    // hypotheses are symmetry artifacts of the capsule geometry.
    auto small_correction = [](const Transform4d& t) {
        return rotation_angle(t.rotation()) <= 25.0 * M_PI / 180.0 &&
               t.translation_part().norm() <= 0.6;
    };

    // (3) RANSAC over minimal 3-point samples; the identity correction is
    // the prior hypothesis
    auto count_inliers = [&](const Transform4d& t) {
        int inliers = 0;
        for (const auto& [i, k] : initial_pairs) {
            if ((t.apply(src[i]) - dst[k]).norm() <= params.inlier_epsilon) ++inliers;
        }
        return inliers;
    };
    Transform4d best = Transform4d::identity();
    int best_inliers = count_inliers(best);
    Rng rng(mix_seed(params.seed, 0xCA11B));
    const int n_pairs = static_cast<int>(initial_pairs.size());
    for (int iter = 0; iter < params.ransac_iterations; ++iter) {
        int ia = rng.uniform_int(0, n_pairs - 1);
        int ib = rng.uniform_int(0, n_pairs - 1);
        int ic = rng.uniform_int(0, n_pairs - 1);
        if (ia == ib || ib == ic || ia == ic) continue;
        const std::vector<std::pair<int, int>> sample = {
            initial_pairs[ia], initial_pairs[ib], initial_pairs[ic]};
        Transform4d candidate;
        try {
            candidate = umeyama_rigid(src, dst, sample);
        } catch (const GeometryError&) {
            continue;  // degenerate sample
        }
        if (!small_correction(candidate)) continue;
        const int inliers = count_inliers(candidate);
        if (inliers > best_inliers) {
            best_inliers = inliers;
            best = candidate;
        }
    }

    // A stale prior displaces the whole cloud beyond the inlier radius, in
    // which case no correspondence hypothesis scores; seed ICP from
    // moment-frame alignments as well and keep whichever start fits best.
    auto trimmed_rms = [&](const Transform4d& t, double gate) {
        const auto pairs = gated_pairs(t, gate);
        if (pairs.size() < 10) return std::numeric_limits<double>::infinity();
        std::vector<double> residuals;
        residuals.reserve(pairs.size());
        for (const auto& [i, k] : pairs) {
            residuals.push_back((t.apply(src[i]) - dst[k]).norm());
        }
        std::sort(residuals.begin(), residuals.end());
        const std::size_t keep =
            std::max<std::size_t>(10, static_cast<std::size_t>(0.7 * residuals.size()));
        double sum = 0.0;
        for (std::size_t i = 0; i < keep && i < residuals.size(); ++i) {
            sum += residuals[i] * residuals[i];
        }
        // penalize matching only a sliver of the cloud
        const double matched = static_cast<double>(pairs.size()) / src.size();
        return std::sqrt(sum / std::min(keep, residuals.size())) / std::max(matched, 0.05);
    };
    {
        auto moments = [](const std::vector<Eigen::Vector3d>& pts) {
            Eigen::Vector3d mean = Eigen::Vector3d::Zero();
            for (const auto& p : pts) mean += p;
            mean /= static_cast<double>(pts.size());
            Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
            for (const auto& p : pts) {
                const Eigen::Vector3d d = p - mean;
                cov += d * d.transpose();
            }
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
            return std::make_pair(mean, eig.eigenvectors());
        };
        const auto [src_mean, src_axes] = moments(src);
        const auto [dst_mean, dst_axes] = moments(dst);

        std::vector<Transform4d> candidates = {best, Transform4d::identity()};
        for (int flip = 0; flip < 4; ++flip) {
            Eigen::Matrix3d axes = dst_axes;
            if (flip & 1) axes.col(0) = -axes.col(0);
            if (flip & 2) axes.col(1) = -axes.col(1);
            axes.col(2) = axes.col(0).cross(axes.col(1));
            Eigen::Matrix3d rot = axes * src_axes.transpose();
            if (rot.determinant() < 0) {
                Eigen::Matrix3d fixed_axes = axes;
                fixed_axes.col(2) = -fixed_axes.col(2);
                rot = fixed_axes * src_axes.transpose();
            }
            candidates.push_back(Transform4d::from_rotation_translation(
                                     rot, dst_mean - rot * src_mean)
                                     .reorthonormalized());
        }
        double best_fit = std::numeric_limits<double>::infinity();
        for (const auto& candidate : candidates) {
            if (!small_correction(candidate)) continue;
            const double fit = trimmed_rms(candidate, params.coarse_gate);
            if (fit < best_fit) {
                best_fit = fit;
                best = candidate;
            }
        }
    }

    // (4) point-to-point ICP with re-matching; the gate shrinks from the
    // coarse value to the fine one so large mirror shifts stay in the basin
    Transform4d t = best;
    double previous_residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    double residual = previous_residual;
    for (int iter = 0; iter < params.max_icp_iterations; ++iter) {
        const double gate = std::max(params.gate,
                                     params.coarse_gate * std::pow(0.75, iter));
        const auto pairs = trimmed(gated_pairs(t, gate), t);
        if (pairs.size() < 3) break;
        Transform4d next;
        try {
            next = umeyama_rigid(src, dst, pairs);
        } catch (const GeometryError&) {
            break;
        }
        residual = mean_pair_residual(src, dst, pairs, next);
        t = next;
        ++iterations;
        if (previous_residual - residual < params.icp_tolerance &&
            gate <= params.gate * 1.0001) {
            break;
        }
        previous_residual = residual;
    }

    // (4b) point-to-plane polish. Point-to-point pairs between two different
    // samplings of the same surface carry tangential offsets that bias the
    // least-squares fit; plane residuals vanish for on-surface points, so a
    // few Gauss-Newton steps remove that bias.
    if (params.polish_iterations > 0) {
        std::vector<Eigen::Vector3d> dst_normals(dst.size(), Eigen::Vector3d::Zero());
        {
            const PointGrid normal_grid(dst, params.normal_radius);
            for (std::size_t j = 0; j < dst.size(); ++j) {
                Eigen::Vector3d mean = Eigen::Vector3d::Zero();
                int count = 0;
                normal_grid.for_each_within(dst[j], params.normal_radius, [&](int idx) {
                    mean += dst[idx];
                    ++count;
                });
                if (count < 4) continue;
                mean /= count;
                Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
                normal_grid.for_each_within(dst[j], params.normal_radius, [&](int idx) {
                    const Eigen::Vector3d d = dst[idx] - mean;
                    cov += d * d.transpose();
                });
                Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
                dst_normals[j] = eig.eigenvectors().col(0);
            }
        }
        // plane-residual RMS over the trimmed pair set of a candidate pose
        auto plane_rms = [&](const Transform4d& candidate) {
            const auto pairs = trimmed(gated_pairs(candidate, params.gate), candidate);
            double sum = 0.0;
            int used = 0;
            for (const auto& [i, k] : pairs) {
                const Eigen::Vector3d& n = dst_normals[k];
                if (n.squaredNorm() < 0.5) continue;
                const double r = n.dot(candidate.apply(src[i]) - dst[k]);
                sum += r * r;
                ++used;
            }
            return used == 0 ? std::numeric_limits<double>::infinity()
                             : std::sqrt(sum / used);
        };

        // Levenberg-Marquardt: the band-like overlap leaves near-singular
        // directions, so undamped Gauss-Newton slides away along them
        const Transform4d t_icp = t;
        double lambda = 1e-4;
        double current_rms = plane_rms(t);
        for (int iter = 0; iter < params.polish_iterations; ++iter) {
            const auto pairs = trimmed(gated_pairs(t, params.gate), t);
            Eigen::Matrix<double, 6, 6> hessian = Eigen::Matrix<double, 6, 6>::Zero();
            Eigen::Matrix<double, 6, 1> gradient = Eigen::Matrix<double, 6, 1>::Zero();
            int used = 0;
            for (const auto& [i, k] : pairs) {
                const Eigen::Vector3d& n = dst_normals[k];
                if (n.squaredNorm() < 0.5) continue;
                const Eigen::Vector3d p = t.apply(src[i]);
                const double r = n.dot(p - dst[k]);
                Eigen::Matrix<double, 6, 1> jac;
                jac.head<3>() = p.cross(n);
                jac.tail<3>() = n;
                hessian += jac * jac.transpose();
                gradient += jac * r;
                ++used;
            }
            if (used < 12) break;

            bool stepped = false;
            for (int attempt = 0; attempt < 6; ++attempt) {
                Eigen::Matrix<double, 6, 6> damped = hessian;
                damped.diagonal() += lambda * hessian.diagonal().cwiseMax(1e-12);
                const Eigen::Matrix<double, 6, 1> dx = damped.ldlt().solve(-gradient);
                const double angle = dx.head<3>().norm();
                if (angle > 0.05 || dx.tail<3>().norm() > 0.05) {
                    lambda *= 10.0;  // runaway step
                    continue;
                }
                Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
                if (angle > 1e-15) {
                    rot = Eigen::AngleAxisd(angle, dx.head<3>() / angle)
                              .toRotationMatrix();
                }
                const Transform4d candidate =
                    (Transform4d::from_rotation_translation(rot, dx.tail<3>()) * t)
                        .reorthonormalized();
                const double rms = plane_rms(candidate);
                if (rms <= current_rms) {
                    t = candidate;
                    current_rms = rms;
                    lambda = std::max(lambda / 3.0, 1e-7);
                    stepped = true;
                    break;
                }
                lambda *= 10.0;
            }
            if (!stepped) break;
        }
        // the polish refines; it must not wander off the ICP solution
        const Transform4d drift = t * t_icp.inverse();
        if (drift.translation_part().norm() > 0.02 ||
            rotation_angle(drift.rotation()) > 2.0 * M_PI / 180.0) {
            t = t_icp;
        }
        const auto final_icp_pairs = gated_pairs(t, params.gate);
        residual = mean_pair_residual(src, dst, final_icp_pairs, t);
    }

    // (5) compose with the prior and project onto the reflection manifold.
    // With the manifold refinement enabled the projection only seeds the
    // plane search, so the residual gate applies to the pure-projection path.
    const Transform4d h_raw = t * h_init;
    auto [plane, projection_residual] = project_to_reflection(h_raw);
    if (params.reflection_refine_iterations <= 0 &&
        projection_residual > params.reflection_tau) {
        throw NotAReflectionError("register_mirror: correction is not a reflection");
    }

    // (6) refine on the reflection manifold itself. The free rigid
    // correction can slide along the capsule surfaces; the mirror transform
    // has only three degrees of freedom (unit normal, offset), which the
    // band-shaped overlap constrains well.
    if (params.reflection_refine_iterations > 0) {
        auto reflect_point = [](const Plane3d& pl, const Eigen::Vector3d& v) {
            const Eigen::Vector3d n = pl.normal();
            return Eigen::Vector3d(v - 2.0 * (n.dot(v) + pl.d) * n);
        };
        std::vector<Eigen::Vector3d> virtual_ds;
        virtual_ds.reserve(src.size());
        {
            // downsampled virtual points, un-realized (raw virtual side)
            const Transform4d h_init_inv = h_init.inverse();
            for (const auto& p : src) virtual_ds.push_back(h_init_inv.apply(p));
        }
        auto plane_pairs = [&](const Plane3d& pl, double gate) {
            std::vector<std::pair<int, int>> pairs;
            std::vector<Eigen::Vector3d> realized_pl(virtual_ds.size());
            for (std::size_t i = 0; i < virtual_ds.size(); ++i) {
                realized_pl[i] = reflect_point(pl, virtual_ds[i]);
            }
            // mutual nearest neighbors once the gate is fine; one-way
            // matches at the edge of the viewed band drag the fit sideways,
            // but during the coarse pull recall matters more
            const bool mutual = gate <= 0.06;
            const PointGrid grid(dst, gate);
            const PointGrid back_grid(realized_pl, gate);
            for (std::size_t i = 0; i < virtual_ds.size(); ++i) {
                const int nn = grid.nearest(realized_pl[i], gate);
                if (nn < 0) continue;
                if (mutual &&
                    back_grid.nearest(dst[nn], gate) != static_cast<int>(i)) {
                    continue;
                }
                pairs.emplace_back(static_cast<int>(i), nn);
            }
            // lighter trim than the rigid stage: the sphere-cap pairs carry
            // the signal that separates plane offset from axial sliding
            const double plane_trim = std::min(1.0, params.trim_fraction + 0.2);
            if (plane_trim < 1.0 && pairs.size() >= 6) {
                std::vector<std::pair<double, std::size_t>> ranked(pairs.size());
                for (std::size_t i = 0; i < pairs.size(); ++i) {
                    ranked[i] = {(reflect_point(pl, virtual_ds[pairs[i].first]) -
                                  dst[pairs[i].second])
                                     .norm(),
                                 i};
                }
                std::sort(ranked.begin(), ranked.end());
                const std::size_t keep = std::max<std::size_t>(
                    3, static_cast<std::size_t>(plane_trim * pairs.size()));
                std::vector<std::pair<int, int>> kept;
                kept.reserve(keep);
                for (std::size_t i = 0; i < keep && i < ranked.size(); ++i) {
                    kept.push_back(pairs[ranked[i].second]);
                }
                pairs.swap(kept);
            }
            return pairs;
        };
        // normal-space weights: flat-band pairs outnumber the sphere-cap
        // pairs that resolve the plane offset, so weight destination points
        // by the rarity of their normal direction
        std::vector<double> dst_weight(dst.size(), 1.0);
        {
            std::vector<Eigen::Vector3d> normals(dst.size(), Eigen::Vector3d::Zero());
            const PointGrid normal_grid(dst, params.normal_radius);
            std::map<std::tuple<int, int, int>, int> buckets;
            std::vector<std::tuple<int, int, int>> keys(dst.size(),
                                                        std::make_tuple(9, 9, 9));
            for (std::size_t j = 0; j < dst.size(); ++j) {
                Eigen::Vector3d mean = Eigen::Vector3d::Zero();
                int count = 0;
                normal_grid.for_each_within(dst[j], params.normal_radius, [&](int idx) {
                    mean += dst[idx];
                    ++count;
                });
                if (count < 4) continue;
                mean /= count;
                Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
                normal_grid.for_each_within(dst[j], params.normal_radius, [&](int idx) {
                    const Eigen::Vector3d d = dst[idx] - mean;
                    cov += d * d.transpose();
                });
                Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
                Eigen::Vector3d n = eig.eigenvectors().col(0);
                if (n.z() < 0) n = -n;  // hemisphere-canonical
                const auto key = std::make_tuple(int(std::lround(2.0 * n.x())),
                                                 int(std::lround(2.0 * n.y())),
                                                 int(std::lround(2.0 * n.z())));
                keys[j] = key;
                buckets[key] += 1;
            }
            double total = 0.0;
            for (std::size_t j = 0; j < dst.size(); ++j) {
                const auto it = buckets.find(keys[j]);
                dst_weight[j] = it == buckets.end() ? 1.0 : 1.0 / it->second;
                total += dst_weight[j];
            }
            if (total > 0) {
                const double scale = dst.size() / total;
                for (double& w : dst_weight) w *= scale;
            }
        }

        auto pair_rms = [&](const Plane3d& pl,
                            const std::vector<std::pair<int, int>>& pairs) {
            double sum = 0.0;
            double weight_sum = 0.0;
            for (const auto& [i, k] : pairs) {
                sum += dst_weight[k] *
                       (reflect_point(pl, virtual_ds[i]) - dst[k]).squaredNorm();
                weight_sum += dst_weight[k];
            }
            return weight_sum <= 0.0 ? std::numeric_limits<double>::infinity()
                                     : std::sqrt(sum / weight_sum);
        };

        // pair-set-independent truncated cost: unmatched points pay the gate
        // itself, so pulling new points inside the gate never looks worse
        auto truncated_cost = [&](const Plane3d& pl, double gate) {
            const PointGrid grid(dst, gate);
            double sum = 0.0;
            for (const auto& v : virtual_ds) {
                double dist = gate;
                (void)grid.nearest(reflect_point(pl, v), gate, &dist);
                sum += dist * dist;
            }
            return std::sqrt(sum / virtual_ds.size());
        };

        // multi-start around the projected plane: tilt the normal about two
        // in-plane axes anchored at the plane's foot point, keep the best
        // trimmed fit; the manifold is 3-DoF so this stays cheap
        {
            // rank candidates by tight-gate inlier count; junk points (e.g.
            // mirror-path floor returns) never land near the arm-only
            // destination cloud at a good plane, so they cannot vote
            const PointGrid tight_grid(dst, 0.02);
            auto scored = [&](const Plane3d& pl) {
                int inliers = 0;
                double sum = 0.0;
                for (const auto& v : virtual_ds) {
                    double dist = 0.0;
                    if (tight_grid.nearest(reflect_point(pl, v), 0.02, &dist) >= 0) {
                        ++inliers;
                        sum += dist * dist;
                    }
                }
                const double rms = inliers ? std::sqrt(sum / inliers) : 1.0;
                return std::make_pair(-inliers, rms);  // lexicographic: more is better
            };
            const Eigen::Vector3d n0 = plane.normal();
            const Eigen::Vector3d foot = -plane.d * n0;
            Eigen::Vector3d ref = std::abs(n0.z()) < 0.9 ? Eigen::Vector3d::UnitZ()
                                                         : Eigen::Vector3d::UnitX();
            const Eigen::Vector3d e1 = n0.cross(ref).normalized();
            const Eigen::Vector3d e2 = n0.cross(e1).normalized();
            Plane3d best_plane = plane;
            auto best_score = scored(plane);
            for (int i = -4; i <= 4; ++i) {
                for (int k = -2; k <= 2; ++k) {
                    const Eigen::Matrix3d rot =
                        (Eigen::AngleAxisd(i * 2.0 * M_PI / 180.0, e1) *
                         Eigen::AngleAxisd(k * 2.0 * M_PI / 180.0, e2))
                            .toRotationMatrix();
                    const Eigen::Vector3d n = (rot * n0).normalized();
                    // the tilt pivot is unknown, so the offset is searched
                    // as its own dimension
                    for (int m = -3; m <= 3; ++m) {
                        if (i == 0 && k == 0 && m == 0) continue;
                        const Plane3d candidate(n.x(), n.y(), n.z(),
                                                -n.dot(foot) + 0.02 * m);
                        const auto score = scored(candidate);
                        if (score < best_score) {
                            best_score = score;
                            best_plane = candidate;
                        }
                    }
                }
            }
            plane = best_plane;
        }

        double lambda = 1e-6;
        for (int iter = 0; iter < params.reflection_refine_iterations; ++iter) {
            const double gate = std::max(params.gate, 0.08 * std::pow(0.7, iter));
            const auto pairs = plane_pairs(plane, gate);
            if (pairs.size() < 10) break;
            const double current = truncated_cost(plane, gate);

            // local basis around the current normal
            const Eigen::Vector3d n0 = plane.normal();
            Eigen::Vector3d ref = std::abs(n0.z()) < 0.9 ? Eigen::Vector3d::UnitZ()
                                                         : Eigen::Vector3d::UnitX();
            const Eigen::Vector3d e1 = n0.cross(ref).normalized();
            const Eigen::Vector3d e2 = n0.cross(e1).normalized();
            auto plane_at = [&](const Eigen::Vector3d& delta) {
                const Eigen::Vector3d n =
                    (n0 + delta.x() * e1 + delta.y() * e2).normalized();
                return Plane3d(n.x(), n.y(), n.z(), plane.d + delta.z());
            };

            Eigen::Matrix3d hessian = Eigen::Matrix3d::Zero();
            Eigen::Vector3d gradient = Eigen::Vector3d::Zero();
            const double step = 1e-6;
            for (const auto& [i, k] : pairs) {
                const Eigen::Vector3d r0 = reflect_point(plane, virtual_ds[i]) - dst[k];
                Eigen::Matrix3d jac;  // d residual / d (delta1, delta2, delta_d)
                for (int p = 0; p < 3; ++p) {
                    Eigen::Vector3d delta = Eigen::Vector3d::Zero();
                    delta[p] = step;
                    const Eigen::Vector3d rp =
                        reflect_point(plane_at(delta), virtual_ds[i]) - dst[k];
                    jac.col(p) = (rp - r0) / step;
                }
                hessian += dst_weight[k] * jac.transpose() * jac;
                gradient += dst_weight[k] * jac.transpose() * r0;
            }

            bool stepped = false;
            for (int attempt = 0; attempt < 6; ++attempt) {
                Eigen::Matrix3d damped = hessian;
                damped.diagonal() += lambda * hessian.diagonal().cwiseMax(1e-12);
                const Eigen::Vector3d delta = damped.ldlt().solve(-gradient);
                const Plane3d candidate = plane_at(delta);
                const double cost = truncated_cost(candidate, gate);
                if (cost < current) {
                    plane = candidate.canonical();
                    lambda = std::max(lambda / 3.0, 1e-9);
                    stepped = true;
                    break;
                }
                lambda *= 10.0;
            }
            if (!stepped && gate <= params.gate * 1.0001) break;
        }
        // a displacement calibration can only move the plane a little; a
        // runaway refinement means the data never supported a mirror fit
        const auto [prior_plane, prior_residual] = project_to_reflection(h_init);
        (void)prior_residual;
        const double normal_shift = std::acos(std::clamp(
            std::abs(plane.normal().dot(prior_plane.normal())), -1.0, 1.0));
        if (normal_shift > 15.0 * M_PI / 180.0 ||
            std::abs(std::abs(plane.d) - std::abs(prior_plane.d)) > 0.35) {
            throw NotAReflectionError(
                "register_mirror: correction outside the displacement budget");
        }
        // carry the refined plane back into the rigid-correction bookkeeping
        t = householder_from_plane(plane) * h_init.inverse();
    }

    CalibrationResult result;
    result.plane_estimated = plane;
    result.h_m_estimated = householder_from_plane(plane);
    result.icp_iterations = iterations;
    result.mean_residual = residual;

    const auto final_pairs = gated_pairs(t, params.inlier_epsilon);
    result.inlier_fraction =
        src.empty() ? 0.0 : static_cast<double>(final_pairs.size()) / src.size();
    result.converged = result.inlier_fraction >= params.min_inlier_fraction;

    if (ground_truth) {
        const auto [trans, rot] = calib_error(result.h_m_estimated, *ground_truth);
        result.translational_error = trans;
        result.rotational_error = rot;
    }
    return result;
}

CalibrationResult calibrate_mirror(const SceneModel& scene,
                                   const CalibrationCaptures& captures,
                                   const Transform4d& h_init,
                                   const RegistrationParams& params,
                                   const Transform4d* ground_truth) {
    const PointCloud direct = select_direct_arm_cloud(scene, captures.direct);
    const PointCloud virtual_pass1 =
        select_virtual_arm_cloud(scene, captures.reflect, h_init);
    CalibrationResult result =
        register_mirror(virtual_pass1, direct, h_init, params, ground_truth);

    // refinement passes: the refined belief separates arm from stray mirror
    // returns far better than the stale prior
    for (int pass = 0; pass < 6; ++pass) {
        const PointCloud virtual_cloud = select_virtual_arm_cloud(
            scene, captures.reflect, result.h_m_estimated, 0.10, 0.03);
        if (virtual_cloud.size() < 30) break;
        CalibrationResult refined;
        try {
            refined = register_mirror(virtual_cloud, direct, result.h_m_estimated,
                                      params, ground_truth);
        } catch (const NoOverlapError&) {
            break;
        } catch (const NotAReflectionError&) {
            break;
        }
        const auto [shift, rotation] =
            calib_error(refined.h_m_estimated, result.h_m_estimated);
        result = refined;
        if (shift < 5e-4 && rotation < 2e-2) break;
    }
    return result;
}

std::pair<double, double> calib_error(const Transform4d& h_est,
                                      const Transform4d& h_true) {
    if (!h_est.is_improper() || !h_true.is_improper()) {
        throw ContractError("calib_error: inputs must be reflections (det -1)");
    }
    const Transform4d delta = h_est * h_true.inverse();
    const double translational = delta.translation_part().norm();
    const double rotational = rotation_angle(delta.rotation()) * 180.0 / M_PI;
    return {translational, rotational};
}

Plane3d perturbed_mirror_plane(const MirrorPatch& mirror, double angle_deg) {
    const Eigen::AngleAxisd rot(angle_deg * M_PI / 180.0, mirror.axis_u());
    const Eigen::Vector3d normal = rot * mirror.plane.normal();
    return Plane3d::from_point_normal(mirror.center, normal).canonical();
}

std::vector<SweepRow> calibration_sweep(const SceneModel& scene,
                                        const std::vector<double>& angles_deg,
                                        const ArmModel& pose, int runs,
                                        const RegistrationParams& params) {
    if (runs < 1) {
        throw ValidationError("calibration_sweep: runs must be >= 1");
    }
    const Transform4d h_init = householder_from_plane(scene.mirror.plane);

    std::vector<SweepRow> rows;
    for (std::size_t angle_idx = 0; angle_idx < angles_deg.size(); ++angle_idx) {
        const double angle = angles_deg[angle_idx];
        SceneModel perturbed = scene;
        perturbed.arm = pose;
        perturbed.estimated_mirror_plane.reset();
        const Plane3d true_plane = perturbed_mirror_plane(scene.mirror, angle);
        perturbed.mirror.plane = true_plane;
        const Transform4d h_true = householder_from_plane(true_plane);

        SweepRow row;
        row.angle_deg = angle;
        int converged = 0;
        for (int run = 0; run < runs; ++run) {
            NoiseModel noise = scene.noise;
            noise.seed = mix_seed(scene.noise.seed,
                                  angle_idx * 1000 + static_cast<std::uint64_t>(run));
            const CalibrationCaptures caps =
                calibration_captures(perturbed, noise, h_init);

            const auto [nd, nr] = arm_point_counts(caps.direct, caps.reflect, perturbed);
            row.mean_n_points += n_points(nd, nr) / runs;

            RegistrationParams run_params = params;
            run_params.seed = mix_seed(params.seed, angle_idx * 1000 +
                                                        static_cast<std::uint64_t>(run));
            double trans = 0.0, rot = 0.0;
            bool run_converged = false;
            try {
                const CalibrationResult result =
                    calibrate_mirror(perturbed, caps, h_init, run_params, &h_true);
                trans = result.translational_error;
                rot = result.rotational_error;
                run_converged = result.converged;
            } catch (const NoOverlapError&) {
                run_converged = false;
            } catch (const NotAReflectionError&) {
                run_converged = false;
            }
            if (!run_converged) {
                // a failed calibration leaves the stale prior in place
                std::tie(trans, rot) = calib_error(h_init, h_true);
            }
            row.mean_translational += trans / runs;
            row.mean_rotational += rot / runs;
            if (run_converged) ++converged;
        }
        row.converged_fraction = static_cast<double>(converged) / runs;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace mirrorsense
