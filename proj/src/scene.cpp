#include "mirrorsense/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mirrorsense/rng.hpp"

namespace mirrorsense {

using nlohmann::json;

namespace {

constexpr double kGroundTol = 1e-9;

json vec_to_json(const Eigen::Vector2d& v) { return json::array({v.x(), v.y()}); }
json vec_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector2d vec2_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw ConfigError("config field '" + path + "' must be a 2-element number array");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

Eigen::Vector3d vec3_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError("config field '" + path + "' must be a 3-element number array");
    }
    for (const auto& e : j) {
        if (!e.is_number()) {
            throw ConfigError("config field '" + path + "' must hold numbers");
        }
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

const json& require(const json& j, const std::string& key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw ConfigError("config field '" + path + key + "' is missing");
    }
    return *it;
}

double number_or(const json& j, const std::string& key, double fallback,
                 const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number()) {
        throw ConfigError("config field '" + path + key + "' must be a number");
    }
    return it->get<double>();
}

int int_or(const json& j, const std::string& key, int fallback, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number_integer()) {
        throw ConfigError("config field '" + path + key + "' must be an integer");
    }
    return it->get<int>();
}

// Separating-axis test for two yawed rectangles in the plane.
bool footprints_overlap(const Box& a, const Box& b, double margin) {
    const auto corners = [&](const Box& box) {
        std::array<Eigen::Vector2d, 4> out;
        const double cy = std::cos(box.yaw), sy = std::sin(box.yaw);
        const Eigen::Vector2d ex = 0.5 * box.size.x() * Eigen::Vector2d(cy, sy);
        const Eigen::Vector2d ey = 0.5 * box.size.y() * Eigen::Vector2d(-sy, cy);
        const Eigen::Vector2d c(box.center.x(), box.center.y());
        out[0] = c + ex + ey;
        out[1] = c + ex - ey;
        out[2] = c - ex - ey;
        out[3] = c - ex + ey;
        return out;
    };
    const auto ca = corners(a);
    const auto cb = corners(b);
    const auto axes = [&](const Box& box) {
        const double cy = std::cos(box.yaw), sy = std::sin(box.yaw);
        return std::array<Eigen::Vector2d, 2>{Eigen::Vector2d(cy, sy),
                                              Eigen::Vector2d(-sy, cy)};
    };
    for (const auto& axis_set : {axes(a), axes(b)}) {
        for (const auto& axis : axis_set) {
            double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
            for (const auto& p : ca) {
                const double v = axis.dot(p);
                amin = std::min(amin, v);
                amax = std::max(amax, v);
            }
            for (const auto& p : cb) {
                const double v = axis.dot(p);
                bmin = std::min(bmin, v);
                bmax = std::max(bmax, v);
            }
            if (amax + margin < bmin || bmax + margin < amin) {
                return false;  // separating axis found
            }
        }
    }
    return true;
}

bool point_in_footprint(const Eigen::Vector2d& p, const Box& box, double inflate) {
    const double cy = std::cos(box.yaw), sy = std::sin(box.yaw);
    const Eigen::Vector2d rel = p - Eigen::Vector2d(box.center.x(), box.center.y());
    const double lx = cy * rel.x() + sy * rel.y();
    const double ly = -sy * rel.x() + cy * rel.y();
    return std::abs(lx) <= 0.5 * box.size.x() + inflate &&
           std::abs(ly) <= 0.5 * box.size.y() + inflate;
}

// Lowest axis height of the capsule segment over the box footprint (inflated
// by the capsule radius). Returns +inf when the projection misses.
double min_axis_z_over_footprint(const Capsule& cap, const Box& box) {
    const double cy = std::cos(box.yaw), sy = std::sin(box.yaw);
    const Eigen::Vector2d c(box.center.x(), box.center.y());
    auto to_local = [&](const Eigen::Vector3d& p) {
        const Eigen::Vector2d rel = Eigen::Vector2d(p.x(), p.y()) - c;
        return Eigen::Vector2d(cy * rel.x() + sy * rel.y(), -sy * rel.x() + cy * rel.y());
    };
    const Eigen::Vector2d a = to_local(cap.p0);
    const Eigen::Vector2d b = to_local(cap.p1);
    const Eigen::Vector2d half(0.5 * box.size.x() + cap.radius,
                               0.5 * box.size.y() + cap.radius);
    // slab clip of the parametric segment
    double t0 = 0.0, t1 = 1.0;
    for (int axis = 0; axis < 2; ++axis) {
        const double origin = a[axis];
        const double delta = b[axis] - a[axis];
        if (std::abs(delta) < 1e-12) {
            if (std::abs(origin) > half[axis]) return INFINITY;
            continue;
        }
        double lo = (-half[axis] - origin) / delta;
        double hi = (half[axis] - origin) / delta;
        if (lo > hi) std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
        if (t0 > t1) return INFINITY;
    }
    const double z0 = cap.p0.z() + t0 * (cap.p1.z() - cap.p0.z());
    const double z1 = cap.p0.z() + t1 * (cap.p1.z() - cap.p0.z());
    return std::min(z0, z1);
}

}  // namespace

void Box::validate() const {
    if (size.x() <= 0 || size.y() <= 0 || size.z() <= 0) {
        throw ValidationError("Box: all size components must be > 0");
    }
    if (bottom_z() < -kGroundTol) {
        throw ValidationError("Box: must rest on or above the ground plane");
    }
}

void ArmModel::validate() const {
    if (link_lengths.x() <= 0 || link_lengths.y() <= 0) {
        throw ValidationError("ArmModel: link lengths must be > 0");
    }
    if (link_radius <= 0) {
        throw ValidationError("ArmModel: link radius must be > 0");
    }
    if (joint_limits.x() > joint_limits.y()) {
        throw ValidationError("ArmModel: joint limits reversed");
    }
    for (int i = 0; i < 2; ++i) {
        if (joint_angles[i] < joint_limits.x() - 1e-12 ||
            joint_angles[i] > joint_limits.y() + 1e-12) {
            throw ValidationError("ArmModel: joint angle outside limits");
        }
    }
}

std::array<Capsule, 2> arm_capsules(const ArmModel& arm) {
    arm.validate();
    const Eigen::Vector3d heading(std::cos(arm.base_yaw), std::sin(arm.base_yaw), 0.0);
    const Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
    const Eigen::Vector3d shoulder(arm.base.x(), arm.base.y(), 0.0);

    const double pitch_upper = arm.joint_angles.x();
    const double pitch_fore = arm.joint_angles.x() - arm.joint_angles.y();

    const Eigen::Vector3d elbow = shoulder + arm.link_lengths.x() *
        (std::cos(pitch_upper) * heading + std::sin(pitch_upper) * up);
    const Eigen::Vector3d wrist = elbow + arm.link_lengths.y() *
        (std::cos(pitch_fore) * heading + std::sin(pitch_fore) * up);

    for (const auto& p : {shoulder, elbow, wrist}) {
        if (p.z() < -kGroundTol) {
            throw InvalidPoseError("arm_capsules: configuration reaches below ground");
        }
    }
    return {Capsule{shoulder, elbow, arm.link_radius},
            Capsule{elbow, wrist, arm.link_radius}};
}

Eigen::Vector3d MirrorPatch::axis_u() const {
    const Eigen::Vector3d n = plane.normal();
    Eigen::Vector3d u = Eigen::Vector3d::UnitZ().cross(n);
    if (u.norm() < 1e-9) {
        // horizontal mirror; pick x as the in-plane horizontal axis
        u = Eigen::Vector3d::UnitX();
    }
    return u.normalized();
}

Eigen::Vector3d MirrorPatch::axis_v() const {
    return plane.normal().cross(axis_u()).normalized();
}

void MirrorPatch::validate() const {
    if (!plane.is_unit(1e-9)) {
        throw ValidationError("MirrorPatch: plane normal must be unit length");
    }
    if (std::abs(plane.signed_distance(center)) > 1e-9) {
        throw ValidationError("MirrorPatch: center must lie on the plane");
    }
    if (width <= 0 || height <= 0) {
        throw ValidationError("MirrorPatch: width and height must be > 0");
    }
    if (reflectance <= 0.0 || reflectance > 1.0) {
        throw ValidationError("MirrorPatch: reflectance must be in (0, 1]");
    }
}

double SceneModel::tallest_box() const {
    double top = 0.0;
    for (const auto& b : boxes) top = std::max(top, b.top_z());
    return top;
}

void SceneModel::validate() const {
    for (const auto& b : boxes) b.validate();
    mirror.validate();
    sensor.validate();
    camera.validate();
    noise.validate();
    if (arm) {
        (void)arm_capsules(*arm);
    }
    if (expected_robots < 1) {
        throw ValidationError("SceneModel: expected_robots must be >= 1");
    }
    if (height_threshold <= tallest_box()) {
        throw ValidationError("SceneModel: height_threshold must exceed the tallest box");
    }
    if (expected_object_height <= 0) {
        throw ValidationError("SceneModel: expected_object_height must be > 0");
    }
    if (workspace_x.x() >= workspace_x.y() || workspace_y.x() >= workspace_y.y()) {
        throw ValidationError("SceneModel: workspace bounds reversed");
    }
    // the mirror must not be degenerate with the sensor on the plane
    if (std::abs(mirror.plane.signed_distance(sensor.position)) < 1e-6) {
        throw ValidationError("SceneModel: sensor lies on the mirror plane");
    }
}

Difficulty difficulty_from_string(const std::string& s) {
    if (s == "easy") return Difficulty::Easy;
    if (s == "hard") return Difficulty::Hard;
    throw ValidationError("unknown difficulty '" + s + "' (expected easy|hard)");
}

std::string to_string(Difficulty d) {
    return d == Difficulty::Easy ? "easy" : "hard";
}

SceneModel scene_from_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("config root must be an object");
    }

    SceneModel scene;
    scene.name = j.value("name", std::string("scene"));

    const json& boxes = require(j, "boxes", "");
    if (!boxes.is_array()) {
        throw ConfigError("config field 'boxes' must be an array");
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const std::string path = "boxes[" + std::to_string(i) + "].";
        const json& jb = boxes[i];
        Box b;
        b.center = vec3_from_json(require(jb, "center", path), path + "center");
        b.size = vec3_from_json(require(jb, "size", path), path + "size");
        b.yaw = number_or(jb, "yaw", 0.0, path);
        scene.boxes.push_back(b);
    }

    if (auto it = j.find("arm"); it != j.end() && !it->is_null()) {
        const json& ja = *it;
        ArmModel arm;
        arm.base = vec2_from_json(require(ja, "base", "arm."), "arm.base");
        arm.base_yaw = number_or(ja, "base_yaw", 0.0, "arm.");
        if (ja.contains("link_lengths")) {
            arm.link_lengths = vec2_from_json(ja["link_lengths"], "arm.link_lengths");
        }
        arm.link_radius = number_or(ja, "link_radius", arm.link_radius, "arm.");
        if (ja.contains("joint_angles")) {
            arm.joint_angles = vec2_from_json(ja["joint_angles"], "arm.joint_angles");
        }
        if (ja.contains("joint_limits")) {
            arm.joint_limits = vec2_from_json(ja["joint_limits"], "arm.joint_limits");
        }
        scene.arm = arm;
    }

    if (auto it = j.find("mirror"); it != j.end()) {
        const json& jm = *it;
        MirrorPatch m;
        m.center = vec3_from_json(require(jm, "center", "mirror."), "mirror.center");
        const Eigen::Vector3d n =
            vec3_from_json(require(jm, "normal", "mirror."), "mirror.normal");
        m.plane = Plane3d::from_point_normal(m.center, n).canonical();
        m.width = number_or(jm, "width", m.width, "mirror.");
        m.height = number_or(jm, "height", m.height, "mirror.");
        m.reflectance = number_or(jm, "reflectance", m.reflectance, "mirror.");
        scene.mirror = m;
    }

    if (auto it = j.find("sensor"); it != j.end()) {
        const json& js = *it;
        if (js.contains("position")) {
            scene.sensor.position = vec3_from_json(js["position"], "sensor.position");
        }
        scene.sensor.tilt_radius =
            number_or(js, "tilt_radius", scene.sensor.tilt_radius, "sensor.");
    }

    if (auto it = j.find("camera"); it != j.end()) {
        const json& jc = *it;
        scene.camera.width = int_or(jc, "width", scene.camera.width, "camera.");
        scene.camera.height = int_or(jc, "height", scene.camera.height, "camera.");
        scene.camera.horizontal_fov =
            number_or(jc, "hfov_deg", scene.camera.horizontal_fov * 180.0 / M_PI,
                      "camera.") * M_PI / 180.0;
        scene.camera.vertical_fov =
            number_or(jc, "vfov_deg", scene.camera.vertical_fov * 180.0 / M_PI,
                      "camera.") * M_PI / 180.0;
    }

    if (auto it = j.find("noise"); it != j.end()) {
        const json& jn = *it;
        scene.noise.sigma0 = number_or(jn, "sigma0", scene.noise.sigma0, "noise.");
        scene.noise.reference_distance = number_or(
            jn, "reference_distance", scene.noise.reference_distance, "noise.");
        scene.noise.exponent = int_or(jn, "exponent", scene.noise.exponent, "noise.");
        scene.noise.dropout_threshold = number_or(
            jn, "dropout_threshold", scene.noise.dropout_threshold, "noise.");
        if (jn.contains("seed")) {
            scene.noise.seed = jn["seed"].get<std::uint64_t>();
        }
    }

    const double default_threshold =
        scene.boxes.empty() ? 0.35 : scene.tallest_box() + 0.05;
    scene.height_threshold =
        number_or(j, "height_threshold", default_threshold, "");
    scene.expected_robots = int_or(j, "expected_robots", 1, "");
    scene.expected_object_height =
        number_or(j, "expected_object_height", scene.expected_object_height, "");
    if (j.contains("workspace_x")) {
        scene.workspace_x = vec2_from_json(j["workspace_x"], "workspace_x");
    }
    if (j.contains("workspace_y")) {
        scene.workspace_y = vec2_from_json(j["workspace_y"], "workspace_y");
    }
    if (auto it = j.find("estimated_mirror_plane"); it != j.end() && !it->is_null()) {
        if (!it->is_array() || it->size() != 4) {
            throw ConfigError("config field 'estimated_mirror_plane' must be [a,b,c,d]");
        }
        scene.estimated_mirror_plane =
            Plane3d((*it)[0].get<double>(), (*it)[1].get<double>(),
                    (*it)[2].get<double>(), (*it)[3].get<double>());
    }

    scene.validate();
    return scene;
}

std::string scene_to_config(const SceneModel& scene) {
    json j;
    j["name"] = scene.name;
    j["boxes"] = json::array();
    for (const auto& b : scene.boxes) {
        json jb;
        jb["center"] = vec_to_json(b.center);
        jb["size"] = vec_to_json(b.size);
        jb["yaw"] = b.yaw;
        j["boxes"].push_back(jb);
    }
    if (scene.arm) {
        json ja;
        ja["base"] = vec_to_json(scene.arm->base);
        ja["base_yaw"] = scene.arm->base_yaw;
        ja["link_lengths"] = vec_to_json(scene.arm->link_lengths);
        ja["link_radius"] = scene.arm->link_radius;
        ja["joint_angles"] = vec_to_json(scene.arm->joint_angles);
        ja["joint_limits"] = vec_to_json(scene.arm->joint_limits);
        j["arm"] = ja;
    }
    json jm;
    jm["center"] = vec_to_json(scene.mirror.center);
    jm["normal"] = vec_to_json(scene.mirror.plane.normal());
    jm["width"] = scene.mirror.width;
    jm["height"] = scene.mirror.height;
    jm["reflectance"] = scene.mirror.reflectance;
    j["mirror"] = jm;
    json js;
    js["position"] = vec_to_json(scene.sensor.position);
    js["tilt_radius"] = scene.sensor.tilt_radius;
    j["sensor"] = js;
    json jc;
    jc["width"] = scene.camera.width;
    jc["height"] = scene.camera.height;
    jc["hfov_deg"] = scene.camera.horizontal_fov * 180.0 / M_PI;
    jc["vfov_deg"] = scene.camera.vertical_fov * 180.0 / M_PI;
    j["camera"] = jc;
    json jn;
    jn["sigma0"] = scene.noise.sigma0;
    jn["reference_distance"] = scene.noise.reference_distance;
    jn["exponent"] = scene.noise.exponent;
    jn["dropout_threshold"] = scene.noise.dropout_threshold;
    jn["seed"] = scene.noise.seed;
    j["noise"] = jn;
    j["height_threshold"] = scene.height_threshold;
    j["expected_robots"] = scene.expected_robots;
    j["expected_object_height"] = scene.expected_object_height;
    j["workspace_x"] = vec_to_json(scene.workspace_x);
    j["workspace_y"] = vec_to_json(scene.workspace_y);
    if (scene.estimated_mirror_plane) {
        const auto& p = *scene.estimated_mirror_plane;
        j["estimated_mirror_plane"] = json::array({p.a, p.b, p.c, p.d});
    }
    return j.dump(2) + "\n";
}

SceneModel load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open scene file '" + path + "'");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return scene_from_config(buf.str());
}

void save_scene(const SceneModel& scene, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write scene file '" + path + "'");
    }
    out << scene_to_config(scene);
}

SceneModel randomized_scene(std::uint64_t seed, Difficulty difficulty) {
    Rng rng(mix_seed(seed, difficulty == Difficulty::Easy ? 11 : 13));

    SceneModel scene;
    scene.name = "seed" + std::to_string(seed) + "-" + to_string(difficulty);
    scene.noise.seed = seed;

    const int n_boxes = difficulty == Difficulty::Easy ? rng.uniform_int(1, 3)
                                                       : rng.uniform_int(4, 6);
    const double margin = 0.04;
    for (int attempt = 0; attempt < 400 && static_cast<int>(scene.boxes.size()) < n_boxes;
         ++attempt) {
        Box b;
        b.size = Eigen::Vector3d(rng.uniform(0.15, 0.30), rng.uniform(0.12, 0.26),
                                 rng.uniform(0.08, 0.20));
        b.center = Eigen::Vector3d(rng.uniform(-0.85, 0.65), rng.uniform(-0.55, 0.55),
                                   0.5 * b.size.z());
        b.yaw = rng.uniform(-M_PI / 2, M_PI / 2);
        bool ok = true;
        for (const auto& other : scene.boxes) {
            if (footprints_overlap(b, other, margin)) {
                ok = false;
                break;
            }
        }
        if (ok) scene.boxes.push_back(b);
    }
    if (static_cast<int>(scene.boxes.size()) < n_boxes) {
        throw GenerationError("randomized_scene: box placement failed after retries");
    }

    scene.height_threshold = scene.tallest_box() + 0.05;

    // pose the arm so its wrist sits on the sensor-to-box ray: the shadow
    // projects radially outward from the nadir, so hovering on the ray is
    // what actually hides the box from the zenith sensor
    const int target_idx = rng.uniform_int(0, n_boxes - 1);
    const Box& target = scene.boxes[static_cast<std::size_t>(target_idx)];
    const Eigen::Vector2d sensor_xy(0.0, 0.0);
    const double sensor_z = 2.1;
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
        ArmModel arm;
        const double azimuth = rng.uniform(-M_PI, M_PI);
        const double dist = rng.uniform(0.28, 0.42);
        const double wrist_z = std::max(rng.uniform(0.58, 0.70),
                                        scene.height_threshold + 0.15);
        const Eigen::Vector2d box_xy(target.center.x(), target.center.y());
        const Eigen::Vector2d wrist_xy =
            sensor_xy + (box_xy - sensor_xy) * (sensor_z - wrist_z) / sensor_z;
        arm.base = wrist_xy + dist * Eigen::Vector2d(std::cos(azimuth), std::sin(azimuth));
        if (arm.base.x() < -1.3 || arm.base.x() > 0.95 || std::abs(arm.base.y()) > 0.95) {
            continue;
        }
        bool base_clear = true;
        for (const auto& b : scene.boxes) {
            if (point_in_footprint(arm.base, b, arm.link_radius + 0.03)) {
                base_clear = false;
                break;
            }
        }
        if (!base_clear) continue;
        arm.base_yaw =
            std::atan2(wrist_xy.y() - arm.base.y(), wrist_xy.x() - arm.base.x());

        const double l1 = arm.link_lengths.x();
        const double l2 = arm.link_lengths.y();
        const double reach2 = dist * dist + wrist_z * wrist_z;
        const double reach = std::sqrt(reach2);
        if (reach > l1 + l2 - 0.02 || reach < std::abs(l1 - l2) + 0.05) continue;

        // elbow-up two-link inverse kinematics in the (heading, z) plane
        const double cos_open = (reach2 + l1 * l1 - l2 * l2) / (2.0 * l1 * reach);
        const double shoulder =
            std::atan2(wrist_z, dist) + std::acos(std::clamp(cos_open, -1.0, 1.0));
        const Eigen::Vector2d elbow(l1 * std::cos(shoulder), l1 * std::sin(shoulder));
        const double fore_pitch =
            std::atan2(wrist_z - elbow.y(), dist - elbow.x());
        const double elbow_angle = shoulder - fore_pitch;
        if (shoulder < arm.joint_limits.x() || shoulder > arm.joint_limits.y() ||
            elbow_angle < arm.joint_limits.x() || elbow_angle > arm.joint_limits.y()) {
            continue;
        }
        arm.joint_angles = Eigen::Vector2d(shoulder, elbow_angle);

        std::array<Capsule, 2> caps;
        try {
            caps = arm_capsules(arm);
        } catch (const InvalidPoseError&) {
            continue;
        }
        bool clear = true;
        for (const auto& b : scene.boxes) {
            for (const auto& cap : caps) {
                const double min_z = min_axis_z_over_footprint(cap, b);
                if (min_z < b.top_z() + cap.radius + 0.02) {
                    clear = false;
                    break;
                }
            }
            if (!clear) break;
        }
        if (!clear) continue;

        scene.arm = arm;
        placed = true;
    }
    if (!placed) {
        throw GenerationError("randomized_scene: arm placement failed after retries");
    }

    scene.validate();
    return scene;
}

}  // namespace mirrorsense
