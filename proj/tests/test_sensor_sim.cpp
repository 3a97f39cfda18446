#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mirrorsense/rng.hpp"
#include "mirrorsense/scene.hpp"
#include "mirrorsense/sensor_sim.hpp"

using namespace mirrorsense;

namespace {

SceneModel bare_ground_scene() {
    SceneModel scene;
    scene.height_threshold = 0.35;
    scene.validate();
    return scene;
}

NoiseModel no_noise() {
    NoiseModel n;
    n.sigma0 = 0.0;
    n.dropout_threshold = 0.0;
    return n;
}

CameraIntrinsics small_camera(int w = 3, int h = 3) {
    CameraIntrinsics cam;
    cam.width = w;
    cam.height = h;
    return cam;
}

// Test-side signed distance from a point to a box surface (local frame).
double box_surface_distance_oracle(const Eigen::Vector3d& p, const Box& box) {
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    const Eigen::Vector3d rel = p - box.center;
    const Eigen::Vector3d local(c * rel.x() + s * rel.y(),
                                -s * rel.x() + c * rel.y(), rel.z());
    const Eigen::Vector3d q = local.cwiseAbs() - 0.5 * box.size;
    const Eigen::Vector3d outside = q.cwiseMax(0.0);
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside.norm() + inside;  // zero exactly on the surface
}

double segment_capsule_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                const Capsule& cap) {
    // coarse but adequate: sample the segment densely
    double best = 1e300;
    for (int i = 0; i <= 200; ++i) {
        const Eigen::Vector3d p = a + (b - a) * (i / 200.0);
        const Eigen::Vector3d ba = cap.p1 - cap.p0;
        const double t =
            std::clamp((p - cap.p0).dot(ba) / ba.dot(ba), 0.0, 1.0);
        best = std::min(best, (p - (cap.p0 + t * ba)).norm() - cap.radius);
    }
    return best;
}

}  // namespace

TEST_CASE("bare ground at zero tilt: center pixel sees (0,0,-2.1)") {
    const auto scene = bare_ground_scene();
    const auto cap = render(scene, 0.0, no_noise(), small_camera());
    const std::size_t center = 4;  // 3x3
    CHECK(cap.depth[center] == doctest::Approx(2.1).epsilon(1e-12));
    // locate the center-pixel point in the cloud: all 9 rays hit the ground
    CHECK(cap.cloud.size() == 9);
    CHECK(cap.cloud.frame == Frame::TiltedSensor);
    const Eigen::Vector3d p = cap.cloud.points[center];
    CHECK((p - Eigen::Vector3d(0, 0, -2.1)).norm() <= 1e-12);
    CHECK(cap.cloud.via_mirror[center] == 0);
}

TEST_CASE("mirror bounce: recorded range equals the sum of both legs") {
    const auto scene = bare_ground_scene();
    const auto pose = scene.sensor.pose(42.0 * M_PI / 180.0);
    const auto cap = render(scene, 42.0 * M_PI / 180.0, no_noise(), small_camera(9, 9));

    int checked = 0;
    for (std::size_t i = 0; i < cap.size(); ++i) {
        if (!cap.cloud.via_mirror[i]) continue;
        // oracle: intersect the recorded virtual ray with the mirror plane,
        // then sum |sensor->bounce| + |bounce->true surface point|
        const Eigen::Vector3d origin = pose.translation_part();
        const Eigen::Vector3d virtual_world = pose.apply(cap.cloud.points[i]);
        const Eigen::Vector3d dir = (virtual_world - origin).normalized();
        const Plane3d& plane = scene.mirror.plane;
        const double t1 = -plane.signed_distance(origin) / dir.dot(plane.normal());
        REQUIRE(t1 > 0);
        const Eigen::Vector3d bounce = origin + t1 * dir;
        const double total = t1 + (cap.hit_point_world[i] - bounce).norm();
        const double range = (cap.cloud.points[i]).norm();
        CHECK(range == doctest::Approx(total).epsilon(1e-9));
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("virtual image realizes onto the true box surface") {
    SceneModel scene;
    scene.boxes.push_back(Box{{0.35, 0.05, 0.11}, {0.36, 0.26, 0.22}, 0.25});
    scene.height_threshold = scene.tallest_box() + 0.05;
    scene.validate();

    const auto h_m = householder_from_plane(scene.mirror.plane);
    const double tilt = 47.0 * M_PI / 180.0;
    const auto pose = scene.sensor.pose(tilt);
    const auto cap = render(scene, tilt, no_noise(), CameraIntrinsics{});

    int box_hits = 0;
    for (std::size_t i = 0; i < cap.size(); ++i) {
        if (!cap.cloud.via_mirror[i] || cap.hit_kind[i] != HitKind::Box) continue;
        const Eigen::Vector3d virtual_world = pose.apply(cap.cloud.points[i]);
        const Eigen::Vector3d realized = h_m.apply(virtual_world);
        CHECK((realized - cap.hit_point_world[i]).norm() <= 1e-9);
        CHECK(std::abs(box_surface_distance_oracle(realized, scene.boxes[0])) <= 1e-9);
        ++box_hits;
    }
    CHECK(box_hits > 20);
}

TEST_CASE("render is bit-identical across repeated calls") {
    const auto scene = bare_ground_scene();
    NoiseModel noise;
    noise.sigma0 = 0.003;
    noise.seed = 77;
    const auto a = render(scene, 0.3, noise, small_camera(17, 13));
    const auto b = render(scene, 0.3, noise, small_camera(17, 13));
    REQUIRE(a.depth.size() == b.depth.size());
    for (std::size_t i = 0; i < a.depth.size(); ++i) {
        CHECK(a.depth[i] == b.depth[i]);
    }
}

TEST_CASE("different capture tilts draw independent noise") {
    const auto scene = bare_ground_scene();
    NoiseModel noise;
    noise.sigma0 = 0.003;
    noise.seed = 5;
    const auto a = render(scene, 0.0, noise, small_camera());
    const auto b = render(scene, 0.01, noise, small_camera());
    CHECK(a.depth[4] != b.depth[4]);
}

TEST_CASE("occlusion realism: no captured box-top point is arm-shadowed") {
    auto scene = randomized_scene(3, Difficulty::Easy);
    scene.noise.sigma0 = 0.0;
    const auto cap = render(scene, 0.0, no_noise(), CameraIntrinsics{});
    const auto caps = arm_capsules(*scene.arm);

    int top_points = 0;
    for (std::size_t i = 0; i < cap.size(); ++i) {
        if (cap.hit_kind[i] != HitKind::Box) continue;
        for (const auto& capsule : caps) {
            CHECK(segment_capsule_distance(scene.sensor.position,
                                           cap.hit_point_world[i], capsule) > -1e-9);
        }
        ++top_points;
    }
    CHECK(top_points > 0);
}

TEST_CASE("reflect_working_distance spot values") {
    CHECK(reflect_working_distance(0.0) == doctest::Approx(1.0));
    CHECK(reflect_working_distance(60.0 * M_PI / 180.0) ==
          doctest::Approx(2.0).epsilon(1e-12));
    CHECK(reflect_working_distance(M_PI / 4) ==
          doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(reflect_working_distance(M_PI / 2), std::domain_error);
}

TEST_CASE("noise sigma tracks sigma(D) for both exponents") {
    const auto scene = bare_ground_scene();
    for (int p : {1, 2}) {
        NoiseModel noise;
        noise.sigma0 = 0.004;
        noise.exponent = p;
        noise.dropout_threshold = 0.0;
        std::vector<double> samples;
        for (int k = 0; k < 20000; ++k) {
            noise.seed = static_cast<std::uint64_t>(k);
            const auto cap = render(scene, 0.0, noise, small_camera());
            samples.push_back(cap.depth[4]);
        }
        const double mean =
            std::accumulate(samples.begin(), samples.end(), 0.0) / samples.size();
        double var = 0.0;
        for (double s : samples) var += (s - mean) * (s - mean);
        var /= samples.size();
        const double sigma = std::sqrt(var);
        CHECK(mean == doctest::Approx(2.1).epsilon(1e-3));
        CHECK(sigma == doctest::Approx(noise.sigma(2.1)).epsilon(0.15));
    }
}

TEST_CASE("working-distance growth doubles sigma at 60 degrees (p=1)") {
    auto scene = bare_ground_scene();
    scene.sensor.tilt_radius = 0.0;  // pure rotation so ranges follow 1/cos
    NoiseModel noise;
    noise.sigma0 = 0.004;
    noise.exponent = 1;
    noise.dropout_threshold = 0.0;

    auto empirical_sigma = [&](double tilt) {
        std::vector<double> samples;
        for (int k = 0; k < 12000; ++k) {
            noise.seed = static_cast<std::uint64_t>(k) + 1;
            const auto cap = render(scene, tilt, noise, small_camera());
            samples.push_back(cap.depth[4]);
        }
        const double mean =
            std::accumulate(samples.begin(), samples.end(), 0.0) / samples.size();
        double var = 0.0;
        for (double s : samples) var += (s - mean) * (s - mean);
        return std::sqrt(var / samples.size());
    };

    const double ratio = empirical_sigma(M_PI / 3) / empirical_sigma(0.0);
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("mirror attenuation drops weak returns") {
    auto scene = bare_ground_scene();
    scene.mirror.reflectance = 0.3;  // alpha^2 = 0.09
    NoiseModel noise = no_noise();
    noise.dropout_threshold = 0.05;

    const auto cap = render(scene, 42.0 * M_PI / 180.0, noise, small_camera(9, 9));
    for (std::size_t i = 0; i < cap.size(); ++i) {
        // every surviving mirror return satisfies the signal threshold
        if (cap.cloud.via_mirror[i]) {
            const double range = cap.cloud.points[i].norm();
            CHECK(0.09 * std::pow(2.1 / range, 2) >= 0.05);
        }
    }

    scene.mirror.reflectance = 0.9;
    const auto strong = render(scene, 42.0 * M_PI / 180.0, noise, small_camera(9, 9));
    std::size_t weak_mirror = 0, strong_mirror = 0;
    for (auto f : cap.cloud.via_mirror) weak_mirror += f;
    for (auto f : strong.cloud.via_mirror) strong_mirror += f;
    CHECK(strong_mirror > weak_mirror);
}

TEST_CASE("two-sensor style pose render ignores the mirror when asked") {
    const auto scene = bare_ground_scene();
    const auto h_m = householder_from_plane(scene.mirror.plane);
    const double tilt = 42.0 * M_PI / 180.0;
    const auto mirrored_pose = h_m * scene.sensor.pose(tilt);
    RenderOptions options;
    options.include_mirror = false;
    options.apply_attenuation = false;
    const auto cap = render_from_pose(scene, mirrored_pose, no_noise(),
                                      small_camera(9, 9), options);
    CHECK(cap.size() > 0);
    for (std::size_t i = 0; i < cap.size(); ++i) {
        CHECK(cap.cloud.via_mirror[i] == 0);
        // all world hits are real ground points
        CHECK(std::abs(cap.hit_point_world[i].z()) <= 1e-9);
    }
}

TEST_CASE("capture size never exceeds the pixel count") {
    const auto scene = bare_ground_scene();
    const auto cap = render(scene, 60.0 * M_PI / 180.0, no_noise(), small_camera(21, 15));
    CHECK(cap.size() <= 21u * 15u);
    CHECK(cap.size() < 21u * 15u);  // horizon rays at high tilt miss everything
}
