#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "mirrorsense/geometry.hpp"
#include "mirrorsense/rng.hpp"

using namespace mirrorsense;

namespace {

Eigen::Vector3d random_unit(Rng& rng) {
    // uniform on the sphere via normal deviates
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    while (v.norm() < 1e-6) {
        v = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    }
    return v.normalized();
}

Plane3d random_plane(Rng& rng) {
    const Eigen::Vector3d n = random_unit(rng);
    return Plane3d(n.x(), n.y(), n.z(), rng.uniform(-2.0, 2.0));
}

Eigen::Vector3d random_point(Rng& rng, double half_extent = 3.0) {
    return Eigen::Vector3d(rng.uniform(-half_extent, half_extent),
                           rng.uniform(-half_extent, half_extent),
                           rng.uniform(-half_extent, half_extent));
}

// Independent construction of the tilt transform as a rotation about the
// pivot p = (0,0,-r): T(p) * Ry(theta, tilt-unit sign convention) * T(-p).
Eigen::Matrix4d tilt_via_pivot_oracle(double theta, double r) {
    const Eigen::Vector3d pivot(0.0, 0.0, -r);
    // The tilt-unit rotation matches Eigen's AngleAxis about Y with the
    // opposite sign: row layout (c,0,-s / 0,1,0 / s,0,c).
    const Eigen::Matrix3d rot =
        Eigen::AngleAxisd(-theta, Eigen::Vector3d::UnitY()).toRotationMatrix();
    Eigen::Affine3d a = Eigen::Translation3d(pivot) * rot * Eigen::Translation3d(-pivot);
    return a.matrix();
}

}  // namespace

TEST_CASE("householder: reflection across z=0 is diag(1,1,-1,1)") {
    const auto h = householder_from_plane(Plane3d(0, 0, 1, 0));
    Eigen::Matrix4d expected = Eigen::Matrix4d::Identity();
    expected(2, 2) = -1.0;
    CHECK((h.matrix() - expected).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
    CHECK(h.kind() == TransformKind::Improper);
}

TEST_CASE("householder: mirror at x=1.2 maps (0.5,0,0) to (1.9,0,0)") {
    const auto h = householder_from_plane(Plane3d(1, 0, 0, -1.2));
    const Eigen::Vector3d p = h.apply(Eigen::Vector3d(0.5, 0, 0));
    CHECK(p.x() == doctest::Approx(1.9).epsilon(1e-12));
    CHECK(p.y() == doctest::Approx(0.0));
    CHECK(p.z() == doctest::Approx(0.0));
}

TEST_CASE("householder: involution for random unit planes") {
    Rng rng(101);
    for (int i = 0; i < 200; ++i) {
        const auto h = householder_from_plane(random_plane(rng));
        const Eigen::Matrix4d sq = (h * h).matrix();
        CHECK((sq - Eigen::Matrix4d::Identity()).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("householder: non-unit normal rejected") {
    CHECK_THROWS_AS(householder_from_plane(Plane3d(1.0, 1.0, 0.0, 0.0)),
                    NormalizationError);
}

TEST_CASE("tilt_transform: zero angle is identity for any radius") {
    for (double r : {0.0, 0.05, 1.0}) {
        const auto h = tilt_transform(0.0, r);
        CHECK((h.matrix() - Eigen::Matrix4d::Identity()).lpNorm<Eigen::Infinity>() == 0.0);
    }
}

TEST_CASE("tilt_transform: quarter turn with r=0.1 matches printed form") {
    const auto h = tilt_transform(M_PI / 2, 0.1);
    Eigen::Matrix4d expected;
    expected << 0, 0, -1, -0.1,
                0, 1,  0,  0,
                1, 0,  0, -0.1,
                0, 0,  0,  1;
    CHECK((h.matrix() - expected).lpNorm<Eigen::Infinity>() <= 1e-15);
    CHECK(h.kind() == TransformKind::Proper);
}

TEST_CASE("tilt_transform: equals rotation about the pivot (0,0,-r)") {
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        const double theta = rng.uniform(-M_PI / 2 + 1e-3, M_PI / 2 - 1e-3);
        const double r = rng.uniform(0.0, 0.5);
        const auto h = tilt_transform(theta, r);
        const Eigen::Matrix4d oracle = tilt_via_pivot_oracle(theta, r);
        CHECK((h.matrix() - oracle).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("tilt_transform: fixes the pivot point exactly") {
    Rng rng(13);
    for (int i = 0; i < 100; ++i) {
        const double theta = rng.uniform(-1.5, 1.5);
        const double r = rng.uniform(0.0, 0.5);
        const auto h = tilt_transform(theta, r);
        const Eigen::Vector3d pivot(0, 0, -r);
        CHECK((h.apply(pivot) - pivot).norm() <= 1e-12);
    }
}

TEST_CASE("apply: identity and translation") {
    PointCloud cloud(Frame::World);
    cloud.add({0, 0, 0});
    cloud.add({1, 2, 3}, true);

    const auto same = apply(Transform4d::identity(), cloud, Frame::World);
    CHECK(same.points[0] == cloud.points[0]);
    CHECK(same.points[1] == cloud.points[1]);
    CHECK(same.via_mirror[1] == 1);

    const auto t = Transform4d::translation({1, 0, 0});
    const auto moved = apply(t, cloud, Frame::Sensor);
    CHECK(moved.points[0] == Eigen::Vector3d(1, 0, 0));
    CHECK(moved.frame == Frame::Sensor);
}

TEST_CASE("apply: composition associates") {
    Rng rng(77);
    PointCloud cloud(Frame::World);
    for (int i = 0; i < 50; ++i) cloud.add(random_point(rng));

    const auto t1 = householder_from_plane(random_plane(rng));
    const auto t2 = tilt_transform(rng.uniform(-1.0, 1.0), 0.2);
    const auto a = apply(t2, apply(t1, cloud, Frame::World), Frame::World);
    const auto b = apply(t2 * t1, cloud, Frame::World);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK((a.points[i] - b.points[i]).norm() <= 1e-12);
    }
}

TEST_CASE("plane_from_transform: round trip over random planes") {
    Rng rng(1000);
    for (int i = 0; i < 1000; ++i) {
        const Plane3d p = random_plane(rng).canonical();
        const Plane3d q = plane_from_transform(householder_from_plane(p));
        CHECK(std::abs(q.a - p.a) <= 1e-10);
        CHECK(std::abs(q.b - p.b) <= 1e-10);
        CHECK(std::abs(q.c - p.c) <= 1e-10);
        CHECK(std::abs(q.d - p.d) <= 1e-10);
    }
}

TEST_CASE("plane_from_transform: diag(1,1,-1,1) gives z=0 plane") {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(2, 2) = -1.0;
    const Plane3d p = plane_from_transform(Transform4d::from_matrix(m));
    CHECK(p.a == doctest::Approx(0.0));
    CHECK(p.b == doctest::Approx(0.0));
    CHECK(p.c == doctest::Approx(1.0));
    CHECK(p.d == doctest::Approx(0.0));
}

TEST_CASE("plane_from_transform: proper rotation rejected") {
    const auto rot = tilt_transform(0.4, 0.1);
    CHECK_THROWS_AS(plane_from_transform(rot), NotAReflectionError);
}

TEST_CASE("plane_from_transform: improper non-reflection rejected") {
    // reflection followed by a large in-plane rotation is improper but far
    // from any pure reflection
    const auto refl = householder_from_plane(Plane3d(0, 0, 1, 0));
    const Eigen::Matrix3d spin =
        Eigen::AngleAxisd(1.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const auto twisted =
        Transform4d::from_rotation_translation(spin, Eigen::Vector3d::Zero()) * refl;
    CHECK(twisted.is_improper());
    CHECK_THROWS_AS(plane_from_transform(twisted), NotAReflectionError);
}

TEST_CASE("determinants: H_m improper, H_S proper") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        CHECK(householder_from_plane(random_plane(rng)).det() ==
              doctest::Approx(-1.0).epsilon(1e-9));
        CHECK(tilt_transform(rng.uniform(-1.5, 1.5), rng.uniform(0.0, 0.3)).det() ==
              doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("isometry: both transform families preserve distances") {
    Rng rng(6);
    for (int i = 0; i < 100; ++i) {
        const auto hm = householder_from_plane(random_plane(rng));
        const auto hs = tilt_transform(rng.uniform(-1.5, 1.5), rng.uniform(0.0, 0.3));
        const Eigen::Vector3d x = random_point(rng);
        const Eigen::Vector3d y = random_point(rng);
        const double dist = (x - y).norm();
        CHECK(std::abs((hm.apply(x) - hm.apply(y)).norm() - dist) <= 1e-9);
        CHECK(std::abs((hs.apply(x) - hs.apply(y)).norm() - dist) <= 1e-9);
    }
}

TEST_CASE("canonical plane sign") {
    CHECK(Plane3d(-1, 0, 0, 1.2).canonical().a == doctest::Approx(1.0));
    CHECK(Plane3d(-1, 0, 0, 1.2).canonical().d == doctest::Approx(-1.2));
    CHECK(Plane3d(0, -1, 0, 0.5).canonical().b == doctest::Approx(1.0));
    CHECK(Plane3d(0, 0, -1, 0.5).canonical().c == doctest::Approx(1.0));
    // already canonical stays put
    CHECK(Plane3d(0, 1, 0, -0.5).canonical().b == doctest::Approx(1.0));
}

TEST_CASE("reorthonormalization pulls drift back") {
    Rng rng(8);
    auto t = Transform4d::identity();
    for (int i = 0; i < 2000; ++i) {
        t = t * householder_from_plane(random_plane(rng));
        t = t * householder_from_plane(random_plane(rng));
    }
    const auto fixed = t.reorthonormalized();
    CHECK(fixed.orthogonality_residual() <= 1e-12);
}

TEST_CASE("transform validation rejects bad input") {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(3, 3) = 2.0;
    CHECK_THROWS_AS(Transform4d::from_matrix(m), GeometryError);

    Eigen::Matrix4d sheared = Eigen::Matrix4d::Identity();
    sheared(0, 1) = 0.5;
    CHECK_THROWS_AS(Transform4d::from_matrix(sheared), GeometryError);
}

TEST_CASE("sensor rig pose at zero tilt is pure translation") {
    SensorRig rig;
    rig.validate();
    const auto pose = rig.pose(0.0);
    CHECK((pose.rotation() - Eigen::Matrix3d::Identity()).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(pose.translation_part() == rig.position);
}
