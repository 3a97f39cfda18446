#include "mirrorsense/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "mirrorsense/io.hpp"
#include "mirrorsense/sensor_sim.hpp"

namespace mirrorsense {

namespace {

std::vector<Eigen::Vector2d> rect_corners(const DetectedBox& r) {
    const Eigen::Rotation2Dd rot(r.yaw);
    std::vector<Eigen::Vector2d> out;
    // counter-clockwise so the half-plane clip keeps the interior
    for (const auto& sign : {Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(-0.5, 0.5),
                             Eigen::Vector2d(-0.5, -0.5), Eigen::Vector2d(0.5, -0.5)}) {
        out.push_back(r.center + rot * sign.cwiseProduct(r.extent));
    }
    return out;
}

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
    double area = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        area += a.x() * b.y() - b.x() * a.y();
    }
    return 0.5 * std::abs(area);
}

// Sutherland-Hodgman clip of a convex polygon by the half-plane left of a->b.
std::vector<Eigen::Vector2d> clip_half_plane(const std::vector<Eigen::Vector2d>& poly,
                                             const Eigen::Vector2d& a,
                                             const Eigen::Vector2d& b) {
    auto side = [&](const Eigen::Vector2d& p) {
        return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
    };
    std::vector<Eigen::Vector2d> out;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Eigen::Vector2d& cur = poly[i];
        const Eigen::Vector2d& nxt = poly[(i + 1) % poly.size()];
        const double sc = side(cur);
        const double sn = side(nxt);
        if (sc >= 0) out.push_back(cur);
        if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
            const double t = sc / (sc - sn);
            out.push_back(cur + t * (nxt - cur));
        }
    }
    return out;
}

}  // namespace

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::DirectOnly: return "direct";
        case Strategy::MirrorOnly: return "mirror";
        case Strategy::DirectMirror: return "direct+mirror";
        case Strategy::TwoSensor: return "two-sensor";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "direct") return Strategy::DirectOnly;
    if (s == "mirror") return Strategy::MirrorOnly;
    if (s == "direct+mirror" || s == "both") return Strategy::DirectMirror;
    if (s == "two-sensor" || s == "two_sensor") return Strategy::TwoSensor;
    throw ValidationError("unknown strategy '" + s +
                          "' (expected direct|mirror|direct+mirror|two-sensor)");
}

double rotated_rect_iou(const DetectedBox& a, const DetectedBox& b) {
    const double area_a = a.extent.x() * a.extent.y();
    const double area_b = b.extent.x() * b.extent.y();
    if (area_a <= 0 || area_b <= 0) return 0.0;
    std::vector<Eigen::Vector2d> poly = rect_corners(a);
    const auto clip = rect_corners(b);
    for (std::size_t i = 0; i < clip.size() && !poly.empty(); ++i) {
        poly = clip_half_plane(poly, clip[i], clip[(i + 1) % clip.size()]);
    }
    if (poly.size() < 3) return 0.0;
    const double inter = polygon_area(poly);
    return inter / (area_a + area_b - inter);
}

MatchCounts match_detections(const std::vector<DetectedBox>& detections,
                             const std::vector<DetectedBox>& ground_truth,
                             double iou_threshold) {
    MatchCounts counts;
    std::vector<char> used(ground_truth.size(), 0);
    for (const auto& det : detections) {
        int best_idx = -1;
        double best_iou = iou_threshold;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            if (used[g]) continue;
            const double iou = rotated_rect_iou(det, ground_truth[g]);
            if (iou >= best_iou) {
                best_iou = iou;
                best_idx = static_cast<int>(g);
            }
        }
        if (best_idx >= 0) {
            used[static_cast<std::size_t>(best_idx)] = 1;
            ++counts.tp;
        } else {
            ++counts.fp;
        }
    }
    counts.fn = static_cast<int>(ground_truth.size()) - counts.tp;
    return counts;
}

std::vector<DetectedBox> ground_truth_rects(const SceneModel& scene) {
    std::vector<DetectedBox> out;
    for (const auto& b : scene.boxes) {
        DetectedBox rect;
        rect.center = b.center.head<2>();
        rect.extent = b.size.head<2>();
        rect.yaw = b.yaw;
        rect.score = 1.0;
        out.push_back(rect);
    }
    return out;
}

SceneEvaluation evaluate_scene(const SceneModel& scene,
                               const std::vector<Strategy>& strategies,
                               double coverage_radius) {
    SceneEvaluation eval;
    eval.scene_id = scene.name;

    const Transform4d h_m = scene_mirror_transform(scene);
    const Transform4d h_true = householder_from_plane(scene.mirror.plane);
    const NoiseModel& noise = scene.noise;

    const Capture direct = render(scene, 0.0, noise, scene.camera);
    const TiltChoice choice = choose_tilt(scene, direct, h_m);
    eval.tilt_deg = choice.tilt_angle * 180.0 / M_PI;
    eval.residual_y_deg = choice.residual_y_deg;

    Capture reflect;
    if (choice.occlusion_found && !choice.unreachable) {
        reflect = render(scene, choice.tilt_angle, noise, scene.camera);
    }

    // second sensor at the mirror image of the tilted pose; it sees what
    // reflection sensing would without attenuation or the patch window
    const Transform4d sensor2_pose = h_true * scene.sensor.pose(choice.tilt_angle);
    RenderOptions sensor2_options;
    sensor2_options.include_mirror = false;
    sensor2_options.apply_attenuation = false;
    sensor2_options.seed_tag = 0x5E2;
    const Capture sensor2 =
        render_from_pose(scene, sensor2_pose, noise, scene.camera, sensor2_options);

    // noise-free target reference: box top faces visible to the two sensors
    NoiseModel clean = noise;
    clean.sigma0 = 0.0;
    clean.dropout_threshold = 0.0;
    const Capture ref_direct = render(scene, 0.0, clean, scene.camera);
    const Capture ref_sensor2 =
        render_from_pose(scene, sensor2_pose, clean, scene.camera, sensor2_options);
    for (const Capture* cap : {&ref_direct, &ref_sensor2}) {
        for (std::size_t i = 0; i < cap->size(); ++i) {
            if (cap->hit_kind[i] == HitKind::Box && cap->hit_normal_world[i].z() > 0.99) {
                eval.reference.add(cap->hit_point_world[i], false);
            }
        }
    }

    const auto gt = ground_truth_rects(scene);
    const Capture empty;

    for (Strategy strategy : strategies) {
        const auto start = std::chrono::steady_clock::now();
        StrategyReport row;
        row.strategy = strategy;
        switch (strategy) {
            case Strategy::DirectOnly:
                row.fused = fuse(direct, empty, scene.sensor, h_m);
                break;
            case Strategy::MirrorOnly:
                row.fused = fuse(empty, reflect, scene.sensor, h_m);
                break;
            case Strategy::DirectMirror:
                row.fused = fuse(direct, reflect, scene.sensor, h_m);
                break;
            case Strategy::TwoSensor: {
                row.fused = fuse(direct, empty, scene.sensor, h_m);
                const PointCloud world =
                    apply(sensor2_pose, sensor2.cloud, Frame::World);
                for (std::size_t i = 0; i < world.size(); ++i) {
                    row.fused.cloud.add(world.points[i], false);
                    ++row.fused.direct_count;
                }
                break;
            }
        }
        row.direct_count = row.fused.direct_count;
        row.mirror_count = row.fused.mirror_count;
        row.detections = detect_from_fused(scene, row.fused);
        row.coverage = eval.reference.empty()
                           ? 0.0
                           : coverage(row.fused, eval.reference, coverage_radius);
        row.at50 = match_detections(row.detections, gt, 0.50);
        row.at75 = match_detections(row.detections, gt, 0.75);
        row.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
        eval.rows.push_back(std::move(row));
    }
    return eval;
}

std::string report_to_csv(const SceneEvaluation& eval) {
    std::ostringstream out;
    out << "scene_id,strategy,tilt_deg,residual_y_deg,n_direct,n_mirror,coverage,"
           "tp50,fp50,fn50,f1_50,tp75,fp75,fn75,f1_75\n";
    for (const auto& row : eval.rows) {
        out << eval.scene_id << ',' << to_string(row.strategy) << ','
            << csv_number(eval.tilt_deg) << ',' << csv_number(eval.residual_y_deg) << ','
            << row.direct_count << ',' << row.mirror_count << ','
            << csv_number(row.coverage) << ',' << row.at50.tp << ',' << row.at50.fp
            << ',' << row.at50.fn << ',' << csv_number(row.at50.f1()) << ','
            << row.at75.tp << ',' << row.at75.fp << ',' << row.at75.fn << ','
            << csv_number(row.at75.f1()) << '\n';
    }
    return out.str();
}

}  // namespace mirrorsense
