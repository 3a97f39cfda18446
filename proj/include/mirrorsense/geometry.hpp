#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mirrorsense/errors.hpp"

namespace mirrorsense {

inline constexpr double kOrthogonalityTol = 1e-9;
inline constexpr double kUnitNormalTol = 1e-12;
inline constexpr double kReflectionTol = 1e-6;

enum class Frame : std::uint8_t { World, Sensor, TiltedSensor };

inline const char* frame_name(Frame f) {
    switch (f) {
        case Frame::World: return "World";
        case Frame::Sensor: return "Sensor";
        case Frame::TiltedSensor: return "TiltedSensor";
    }
    return "?";
}

enum class TransformKind : std::uint8_t { Proper, Improper };

/// Rigid or reflection transform as a homogeneous 4x4 matrix. The rotation
/// block is orthogonal; proper (det +1) for rigid motions, improper (det -1)
/// for mirror transforms. Bottom row is pinned to (0,0,0,1).
template <class Scalar>
class Transform4 {
public:
    using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
    using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
    using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

    Transform4() : m_(Mat4::Identity()) {}

    static Transform4 identity() { return Transform4(); }

    static Transform4 from_rotation_translation(const Mat3& r, const Vec3& t) {
        Transform4 out;
        out.m_.template topLeftCorner<3, 3>() = r;
        out.m_.template topRightCorner<3, 1>() = t;
        out.check_orthogonal();
        return out;
    }

    static Transform4 translation(const Vec3& t) {
        return from_rotation_translation(Mat3::Identity(), t);
    }

    // Validates the bottom row and orthogonality of the rotation block.
    static Transform4 from_matrix(const Mat4& m) {
        if (m(3, 0) != Scalar(0) || m(3, 1) != Scalar(0) || m(3, 2) != Scalar(0) ||
            m(3, 3) != Scalar(1)) {
            throw GeometryError("Transform4: bottom row must be (0,0,0,1)");
        }
        Transform4 out;
        out.m_ = m;
        out.check_orthogonal();
        return out;
    }

    const Mat4& matrix() const { return m_; }
    Mat3 rotation() const { return m_.template topLeftCorner<3, 3>(); }
    Vec3 translation_part() const { return m_.template topRightCorner<3, 1>(); }

    Scalar det() const { return rotation().determinant(); }

    TransformKind kind() const {
        return det() > Scalar(0) ? TransformKind::Proper : TransformKind::Improper;
    }

    bool is_improper() const { return kind() == TransformKind::Improper; }

    Vec3 apply(const Vec3& p) const {
        return rotation() * p + translation_part();
    }

    // Rotation block is orthogonal, so the inverse needs no matrix solve.
    Transform4 inverse() const {
        Transform4 out;
        const Mat3 rt = rotation().transpose();
        out.m_.template topLeftCorner<3, 3>() = rt;
        out.m_.template topRightCorner<3, 1>() = -(rt * translation_part());
        return out;
    }

    Transform4 operator*(const Transform4& rhs) const {
        Transform4 out;
        out.m_ = m_ * rhs.m_;
        out.m_.row(3) << Scalar(0), Scalar(0), Scalar(0), Scalar(1);
        return out;
    }

    // Polar projection of the rotation block; use after long composition
    // chains to pull float drift back onto the orthogonal manifold.
    Transform4 reorthonormalized() const {
        Eigen::JacobiSVD<Mat3> svd(rotation(), Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 r = svd.matrixU() * svd.matrixV().transpose();
        Transform4 out;
        out.m_.template topLeftCorner<3, 3>() = r;
        out.m_.template topRightCorner<3, 1>() = translation_part();
        return out;
    }

    Scalar orthogonality_residual() const {
        const Mat3 r = rotation();
        return (r.transpose() * r - Mat3::Identity()).template lpNorm<Eigen::Infinity>();
    }

private:
    void check_orthogonal() const {
        if (orthogonality_residual() > Scalar(kOrthogonalityTol)) {
            throw GeometryError("Transform4: rotation block is not orthogonal");
        }
    }

    Mat4 m_;
};

using Transform4d = Transform4<double>;

/// Plane a*x + b*y + c*z + d = 0 with unit (a,b,c); d in meters.
template <class Scalar>
struct Plane3 {
    Scalar a{0}, b{0}, c{1}, d{0};

    using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

    Plane3() = default;
    Plane3(Scalar a_, Scalar b_, Scalar c_, Scalar d_) : a(a_), b(b_), c(c_), d(d_) {}

    static Plane3 from_point_normal(const Vec3& point, const Vec3& normal) {
        const Scalar n = normal.norm();
        if (n <= Scalar(0)) {
            throw NormalizationError("Plane3: zero normal");
        }
        const Vec3 u = normal / n;
        return Plane3(u.x(), u.y(), u.z(), -u.dot(point));
    }

    Vec3 normal() const { return Vec3(a, b, c); }

    Scalar normal_norm_error() const { return std::abs(normal().norm() - Scalar(1)); }

    bool is_unit(Scalar tol = Scalar(kUnitNormalTol)) const {
        return normal_norm_error() <= tol;
    }

    Scalar signed_distance(const Vec3& p) const { return normal().dot(p) + d; }

    // (a,b,c,d) and (-a,-b,-c,-d) name the same plane; fix the sign so plane
    // comparisons are well-defined: a >= 0, ties broken by b then c.
    Plane3 canonical(Scalar tol = Scalar(1e-12)) const {
        Scalar lead = a;
        if (std::abs(lead) <= tol) {
            lead = b;
            if (std::abs(lead) <= tol) {
                lead = c;
            }
        }
        if (lead < Scalar(0)) {
            return Plane3(-a, -b, -c, -d);
        }
        return *this;
    }
};

using Plane3d = Plane3<double>;

/// Mirror-image (Householder) transform for a unit plane: rotation block
/// I - 2*n*n^T, translation -2*d*n. Improper and involutive.
template <class Scalar>
Transform4<Scalar> householder_from_plane(const Plane3<Scalar>& plane) {
    if (!plane.is_unit()) {
        throw NormalizationError("householder_from_plane: plane normal is not unit length");
    }
    using Mat3 = typename Transform4<Scalar>::Mat3;
    using Vec3 = typename Transform4<Scalar>::Vec3;
    const Vec3 n = plane.normal();
    const Mat3 r = Mat3::Identity() - Scalar(2) * (n * n.transpose());
    const Vec3 t = Scalar(-2) * plane.d * n;
    return Transform4<Scalar>::from_rotation_translation(r, t);
}

/// Tilted-sensor-to-home transform for a tilt of theta about the Y axis with
/// pivot radius r. Rows follow the tilt-unit convention: the optical axis
/// swings toward +X for positive theta; the pivot point (0,0,-r) is fixed.
template <class Scalar>
Transform4<Scalar> tilt_transform(Scalar theta, Scalar r) {
    if (r < Scalar(0)) {
        throw GeometryError("tilt_transform: negative tilt radius");
    }
    using Mat3 = typename Transform4<Scalar>::Mat3;
    using Vec3 = typename Transform4<Scalar>::Vec3;
    const Scalar c = std::cos(theta);
    const Scalar s = std::sin(theta);
    Mat3 rot;
    rot << c, Scalar(0), -s,
           Scalar(0), Scalar(1), Scalar(0),
           s, Scalar(0), c;
    const Vec3 t(-r * s, Scalar(0), -r * (Scalar(1) - c));
    return Transform4<Scalar>::from_rotation_translation(rot, t);
}

/// Rotation angle in radians of an orthogonal 3x3 block (proper rotations).
template <class Scalar>
Scalar rotation_angle(const Eigen::Matrix<Scalar, 3, 3>& r) {
    const Scalar c = std::clamp((r.trace() - Scalar(1)) / Scalar(2), Scalar(-1), Scalar(1));
    return std::acos(c);
}

/// Nearest pure reflection to an improper transform: the plane normal is the
/// dominant eigenvector of the symmetrized (I - R)/2, offset d = -n.t/2.
/// Returns the canonical plane and the max-abs residual against the
/// re-synthesized Householder transform.
template <class Scalar>
std::pair<Plane3<Scalar>, Scalar> project_to_reflection(const Transform4<Scalar>& h) {
    using Mat3 = typename Transform4<Scalar>::Mat3;
    using Vec3 = typename Transform4<Scalar>::Vec3;
    const Mat3 m = (Mat3::Identity() - h.rotation()) / Scalar(2);
    const Mat3 sym = (m + m.transpose()) / Scalar(2);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(sym);
    // eigenvalues ascending; the reflection direction carries eigenvalue ~1
    const Vec3 n = eig.eigenvectors().col(2).normalized();
    const Scalar d = -n.dot(h.translation_part()) / Scalar(2);
    const Plane3<Scalar> plane = Plane3<Scalar>(n.x(), n.y(), n.z(), d).canonical();
    const Transform4<Scalar> rebuilt = householder_from_plane(plane);
    const Scalar residual =
        (h.matrix() - rebuilt.matrix()).template lpNorm<Eigen::Infinity>();
    return {plane, residual};
}

/// Inverse of householder_from_plane. Requires an improper transform within
/// tau of a pure reflection.
template <class Scalar>
Plane3<Scalar> plane_from_transform(const Transform4<Scalar>& h,
                                    Scalar tau = Scalar(kReflectionTol)) {
    if (!h.is_improper()) {
        throw NotAReflectionError("plane_from_transform: transform is proper (det +1)");
    }
    auto [plane, residual] = project_to_reflection(h);
    if (residual > tau) {
        throw NotAReflectionError("plane_from_transform: residual " +
                                  std::to_string(static_cast<double>(residual)) +
                                  " exceeds tolerance");
    }
    return plane;
}

/// Tagged 3D point set. Every transform application relabels the frame, so a
/// cloud never holds mixed-frame points.
struct PointCloud {
    std::vector<Eigen::Vector3d> points;
    std::vector<std::uint8_t> via_mirror;
    Frame frame = Frame::World;

    PointCloud() = default;
    explicit PointCloud(Frame f) : frame(f) {}

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    void add(const Eigen::Vector3d& p, bool mirrored = false) {
        points.push_back(p);
        via_mirror.push_back(mirrored ? 1 : 0);
    }

    void reserve(std::size_t n) {
        points.reserve(n);
        via_mirror.reserve(n);
    }

    bool all_finite() const {
        for (const auto& p : points) {
            if (!p.allFinite()) return false;
        }
        return true;
    }
};

/// Zenith sensor on a tilt unit. `position` is the optical center at zero
/// tilt in world coordinates; the tilt pivot sits at position + (0,0,-r).
struct SensorRig {
    Eigen::Vector3d position{0.0, 0.0, 2.1};
    double tilt_radius = 0.05;
    double tilt_angle = 0.0;  // radians about the world Y axis

    void validate() const {
        if (tilt_radius < 0.0) {
            throw ValidationError("SensorRig: tilt_radius must be >= 0");
        }
        if (std::abs(tilt_angle) >= M_PI / 2) {
            throw ValidationError("SensorRig: |tilt_angle| must be < pi/2");
        }
    }

    // world <- tilted-sensor transform for a given tilt
    Transform4d pose(double theta) const {
        return Transform4d::translation(position) * tilt_transform(theta, tilt_radius);
    }
};

inline PointCloud apply(const Transform4d& t, const PointCloud& cloud, Frame new_frame) {
    PointCloud out(new_frame);
    out.points.resize(cloud.points.size());
    out.via_mirror = cloud.via_mirror;
    const Eigen::Matrix3d r = t.rotation();
    const Eigen::Vector3d tr = t.translation_part();
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        out.points[i] = r * cloud.points[i] + tr;
    }
    return out;
}

}  // namespace mirrorsense
