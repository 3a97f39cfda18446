#include "mirrorsense/sensor_sim.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "mirrorsense/rng.hpp"
#include "mirrorsense/scene.hpp"

namespace mirrorsense {

namespace {

constexpr double kRayEps = 1e-9;

struct RayHit {
    double t = Capture::kNoReturn;
    HitKind kind = HitKind::Ground;
    int index = -1;
    Eigen::Vector3d point{0, 0, 0};
    Eigen::Vector3d normal{0, 0, 1};

    bool valid() const { return std::isfinite(t); }
};

struct OrientedBox {
    Eigen::Vector3d center;
    Eigen::Vector3d half;
    double cos_yaw;
    double sin_yaw;
};

// Scene flattened into ray-test-ready primitives.
struct TraceScene {
    std::vector<OrientedBox> boxes;
    std::vector<Capsule> capsules;
    const MirrorPatch* mirror = nullptr;  // null when excluded
    Eigen::Vector3d mirror_front_normal{1, 0, 0};
    double max_range = 50.0;
};

void hit_ground(const Eigen::Vector3d& o, const Eigen::Vector3d& d, RayHit& best) {
    if (std::abs(d.z()) < 1e-15) return;
    const double t = -o.z() / d.z();
    if (t <= kRayEps || t >= best.t) return;
    best.t = t;
    best.kind = HitKind::Ground;
    best.index = -1;
    best.point = o + t * d;
    best.normal = Eigen::Vector3d::UnitZ();
}

void hit_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const OrientedBox& box,
             int index, RayHit& best) {
    // slab test in the box frame (yaw about z)
    const Eigen::Vector3d rel = o - box.center;
    const double c = box.cos_yaw, s = box.sin_yaw;
    const Eigen::Vector3d lo(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(),
                             rel.z());
    const Eigen::Vector3d ld(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());

    double t_enter = -Capture::kNoReturn;
    double t_exit = Capture::kNoReturn;
    int enter_axis = -1;
    for (int axis = 0; axis < 3; ++axis) {
        if (std::abs(ld[axis]) < 1e-15) {
            if (std::abs(lo[axis]) > box.half[axis]) return;
            continue;
        }
        double t0 = (-box.half[axis] - lo[axis]) / ld[axis];
        double t1 = (box.half[axis] - lo[axis]) / ld[axis];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_enter) {
            t_enter = t0;
            enter_axis = axis;
        }
        t_exit = std::min(t_exit, t1);
        if (t_enter > t_exit) return;
    }
    if (enter_axis < 0 || t_enter <= kRayEps || t_enter >= best.t) return;

    Eigen::Vector3d ln = Eigen::Vector3d::Zero();
    ln[enter_axis] = ld[enter_axis] > 0 ? -1.0 : 1.0;
    best.t = t_enter;
    best.kind = HitKind::Box;
    best.index = index;
    best.point = o + t_enter * d;
    best.normal = Eigen::Vector3d(c * ln.x() - s * ln.y(), s * ln.x() + c * ln.y(),
                                  ln.z());
}

void hit_capsule(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Capsule& cap,
                 RayHit& best) {
    const Eigen::Vector3d ba = cap.p1 - cap.p0;
    const Eigen::Vector3d oa = o - cap.p0;
    const double baba = ba.dot(ba);
    const double bard = ba.dot(d);
    const double baoa = ba.dot(oa);
    const double rdoa = d.dot(oa);
    const double dd = d.dot(d);

    double a = baba * dd - bard * bard;
    double b = baba * rdoa - baoa * bard;
    double c = baba * oa.dot(oa) - baoa * baoa - cap.radius * cap.radius * baba;
    double h = b * b - a * c;
    double t = Capture::kNoReturn;
    if (h >= 0.0 && std::abs(a) > 1e-15) {
        const double t_cyl = (-b - std::sqrt(h)) / a;
        const double y = baoa + t_cyl * bard;
        if (t_cyl > kRayEps && y > 0.0 && y < baba) {
            t = t_cyl;  // cylinder body
        }
    }
    // sphere caps
    for (const Eigen::Vector3d& center : {cap.p0, cap.p1}) {
        const Eigen::Vector3d oc = o - center;
        const double bq = oc.dot(d);
        const double cq = oc.dot(oc) - cap.radius * cap.radius;
        const double hq = bq * bq - cq * dd;
        if (hq >= 0.0) {
            const double t_sph = (-bq - std::sqrt(hq)) / dd;
            if (t_sph > kRayEps) t = std::min(t, t_sph);
        }
    }
    if (!std::isfinite(t) || t <= kRayEps || t >= best.t) return;

    best.t = t;
    best.kind = HitKind::Arm;
    best.index = -1;
    best.point = o + t * d;
    const double y = std::clamp(ba.dot(best.point - cap.p0) / baba, 0.0, 1.0);
    best.normal = (best.point - (cap.p0 + y * ba)).normalized();
}

void hit_mirror(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                const MirrorPatch& mirror, RayHit& best) {
    const Eigen::Vector3d n = mirror.plane.normal();
    const double denom = d.dot(n);
    if (std::abs(denom) < 1e-15) return;
    const double t = -mirror.plane.signed_distance(o) / denom;
    if (t <= kRayEps || t >= best.t) return;
    const Eigen::Vector3d p = o + t * d;
    const Eigen::Vector3d rel = p - mirror.center;
    if (std::abs(mirror.axis_u().dot(rel)) > 0.5 * mirror.width) return;
    if (std::abs(mirror.axis_v().dot(rel)) > 0.5 * mirror.height) return;
    best.t = t;
    best.kind = HitKind::Mirror;
    best.index = -1;
    best.point = p;
    best.normal = n;
}

RayHit nearest_hit(const TraceScene& ts, const Eigen::Vector3d& o,
                   const Eigen::Vector3d& d) {
    RayHit best;
    hit_ground(o, d, best);
    for (std::size_t i = 0; i < ts.boxes.size(); ++i) {
        hit_box(o, d, ts.boxes[i], static_cast<int>(i), best);
    }
    for (const auto& cap : ts.capsules) {
        hit_capsule(o, d, cap, best);
    }
    if (ts.mirror) {
        hit_mirror(o, d, *ts.mirror, best);
    }
    if (best.t > ts.max_range) {
        return RayHit{};
    }
    return best;
}

TraceScene flatten(const SceneModel& scene, const RenderOptions& options) {
    TraceScene ts;
    ts.max_range = options.max_range;
    for (const auto& b : scene.boxes) {
        ts.boxes.push_back(OrientedBox{b.center, 0.5 * b.size, std::cos(b.yaw),
                                       std::sin(b.yaw)});
    }
    if (scene.arm) {
        const auto caps = arm_capsules(*scene.arm);
        ts.capsules.assign(caps.begin(), caps.end());
    }
    if (options.include_mirror) {
        ts.mirror = &scene.mirror;
        const Eigen::Vector3d n = scene.mirror.plane.normal();
        const double side = scene.mirror.plane.signed_distance(scene.sensor.position);
        ts.mirror_front_normal = side < 0 ? Eigen::Vector3d(-n) : n;
    }
    return ts;
}

}  // namespace

void CameraIntrinsics::validate() const {
    if (width < 2 || height < 2) {
        throw ValidationError("CameraIntrinsics: width and height must be >= 2");
    }
    if (horizontal_fov <= 0 || horizontal_fov >= M_PI || vertical_fov <= 0 ||
        vertical_fov >= M_PI) {
        throw ValidationError("CameraIntrinsics: fov must be in (0, pi)");
    }
}

void NoiseModel::validate() const {
    if (sigma0 < 0) {
        throw ValidationError("NoiseModel: sigma0 must be >= 0");
    }
    if (reference_distance <= 0) {
        throw ValidationError("NoiseModel: reference_distance must be > 0");
    }
    if (exponent != 1 && exponent != 2) {
        throw ValidationError("NoiseModel: exponent must be 1 or 2");
    }
    if (dropout_threshold < 0) {
        throw ValidationError("NoiseModel: dropout_threshold must be >= 0");
    }
}

double reflect_working_distance(double tilt_angle) {
    if (std::abs(tilt_angle) >= M_PI / 2) {
        throw std::domain_error("reflect_working_distance: |tilt| must be < pi/2");
    }
    return 1.0 / std::cos(tilt_angle);
}

Capture render_from_pose(const SceneModel& scene, const Transform4d& pose,
                         const NoiseModel& noise, const CameraIntrinsics& intrinsics,
                         const RenderOptions& options) {
    intrinsics.validate();
    noise.validate();
    const TraceScene ts = flatten(scene, options);

    const Eigen::Vector3d origin = pose.translation_part();
    const Eigen::Matrix3d rot = pose.rotation();
    const double tan_h = std::tan(0.5 * intrinsics.horizontal_fov);
    const double tan_v = std::tan(0.5 * intrinsics.vertical_fov);
    const double alpha_sq = scene.mirror.reflectance * scene.mirror.reflectance;
    const double d0 = noise.reference_distance;

    Capture cap;
    cap.width = intrinsics.width;
    cap.height = intrinsics.height;
    cap.depth.assign(
        static_cast<std::size_t>(intrinsics.width) * intrinsics.height,
        Capture::kNoReturn);
    cap.cloud.reserve(cap.depth.size());

    const std::uint64_t stream_seed = mix_seed(noise.seed, options.seed_tag);

    for (int v = 0; v < intrinsics.height; ++v) {
        for (int u = 0; u < intrinsics.width; ++u) {
            const std::size_t pixel =
                static_cast<std::size_t>(v) * intrinsics.width + u;
            // pixel centers; +u maps to +x, +v to -y at zero tilt
            const double sx = 2.0 * (u + 0.5) / intrinsics.width - 1.0;
            const double sy = 1.0 - 2.0 * (v + 0.5) / intrinsics.height;
            const Eigen::Vector3d dir_cam =
                Eigen::Vector3d(tan_h * sx, tan_v * sy, -1.0).normalized();
            const Eigen::Vector3d dir = rot * dir_cam;

            RayHit first = nearest_hit(ts, origin, dir);
            if (!first.valid()) continue;

            bool via_mirror = false;
            double range = first.t;
            RayHit surface = first;
            if (first.kind == HitKind::Mirror) {
                if (dir.dot(ts.mirror_front_normal) >= 0.0) continue;  // back face
                const Eigen::Vector3d n = ts.mirror->plane.normal();
                const Eigen::Vector3d dir2 = dir - 2.0 * dir.dot(n) * n;
                const RayHit second = nearest_hit(ts, first.point, dir2);
                if (!second.valid() || second.kind == HitKind::Mirror) continue;
                via_mirror = true;
                range = first.t + second.t;
                surface = second;
            }

            const double falloff = (d0 / range) * (d0 / range);
            const double signal =
                (via_mirror && options.apply_attenuation) ? alpha_sq * falloff : falloff;
            if (noise.dropout_threshold > 0.0 && signal < noise.dropout_threshold) {
                continue;
            }

            double measured = range;
            if (noise.sigma0 > 0.0) {
                Rng pixel_rng(mix_seed(stream_seed, pixel));
                measured += pixel_rng.normal(0.0, noise.sigma(range));
            }

            cap.depth[pixel] = measured;
            cap.cloud.add(dir_cam * measured, via_mirror);
            cap.hit_kind.push_back(surface.kind);
            cap.hit_index.push_back(surface.index);
            cap.hit_point_world.push_back(surface.point);
            cap.hit_normal_world.push_back(surface.normal);
        }
    }
    return cap;
}

Capture render(const SceneModel& scene, double tilt_angle, const NoiseModel& noise,
               const CameraIntrinsics& intrinsics) {
    if (std::abs(tilt_angle) >= M_PI / 2) {
        throw ValidationError("render: |tilt_angle| must be < pi/2");
    }
    RenderOptions options;
    // decorrelate captures taken at different tilts within one run
    options.seed_tag = static_cast<std::uint64_t>(
        std::llround(std::abs(tilt_angle) * 1e6)) + (tilt_angle < 0 ? 1ull << 40 : 0);
    Capture cap = render_from_pose(scene, scene.sensor.pose(tilt_angle), noise,
                                   intrinsics, options);
    cap.tilt_angle = tilt_angle;
    return cap;
}

}  // namespace mirrorsense
