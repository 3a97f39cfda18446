// Batch CLI for the tilt-mirror workcell simulator: scene generation,
// captures, strategy evaluation runs, and mirror displacement calibration.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "mirrorsense/calibration.hpp"
#include "mirrorsense/evaluation.hpp"
#include "mirrorsense/io.hpp"
#include "mirrorsense/pipeline.hpp"
#include "mirrorsense/rng.hpp"
#include "mirrorsense/scene.hpp"

namespace fs = std::filesystem;
using namespace mirrorsense;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("MIRRORSENSE_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return 0;
}

SceneModel load_scene_with_seed(const std::string& path,
                                const std::optional<std::uint64_t>& seed) {
    SceneModel scene = load_scene(path);
    if (seed) {
        scene.noise.seed = *seed;
    }
    return scene;
}

std::vector<Strategy> parse_strategies(const std::vector<std::string>& names) {
    std::vector<Strategy> out;
    for (const auto& name : names) {
        if (name == "all") {
            return {Strategy::DirectOnly, Strategy::MirrorOnly, Strategy::DirectMirror,
                    Strategy::TwoSensor};
        }
        out.push_back(strategy_from_string(name));
    }
    return out;
}

int cmd_scene(std::uint64_t seed, const std::string& difficulty,
              const std::string& out_path) {
    const SceneModel scene = randomized_scene(seed, difficulty_from_string(difficulty));
    save_scene(scene, out_path);
    std::cout << "scene " << scene.name << ": " << scene.boxes.size()
              << " boxes, height threshold " << csv_number(scene.height_threshold)
              << " m, written to " << out_path << "\n";
    return 0;
}

int cmd_capture(const std::string& scene_path, std::optional<double> tilt_deg,
                const std::string& strategy, const std::string& out_ply,
                const std::string& depth_pgm, const std::string& frame,
                std::optional<std::uint64_t> seed) {
    const SceneModel scene = load_scene_with_seed(scene_path, seed);
    if (strategy != "direct" && strategy != "mirror") {
        throw ValidationError("capture strategy must be direct or mirror");
    }

    double tilt = 0.0;
    if (tilt_deg) {
        tilt = *tilt_deg * M_PI / 180.0;
    } else if (strategy == "mirror") {
        const Capture probe = render(scene, 0.0, scene.noise, scene.camera);
        const TiltChoice choice =
            choose_tilt(scene, probe, scene_mirror_transform(scene));
        if (!choice.occlusion_found) {
            std::cout << "note: no occlusion detected; keeping tilt 0\n";
        }
        tilt = choice.tilt_angle;
    }

    const Capture capture = render(scene, tilt, scene.noise, scene.camera);
    PointCloud cloud = capture.cloud;
    if (frame == "world") {
        cloud = apply(scene.sensor.pose(tilt), capture.cloud, Frame::World);
    } else if (frame != "tilted") {
        throw ValidationError("capture frame must be world or tilted");
    }
    write_ply(cloud, out_ply);
    if (!depth_pgm.empty()) {
        write_pgm(capture, depth_pgm);
    }

    std::size_t mirror_points = 0;
    for (auto f : capture.cloud.via_mirror) mirror_points += f;
    std::cout << "capture: tilt " << csv_number(tilt * 180.0 / M_PI) << " deg, "
              << capture.size() << " points (" << mirror_points
              << " via mirror), written to " << out_ply << "\n";
    return 0;
}

int cmd_run(const std::string& scene_path, const std::vector<std::string>& strategy_names,
            const std::string& out_dir, std::optional<std::uint64_t> seed,
            double coverage_radius) {
    const SceneModel scene = load_scene_with_seed(scene_path, seed);
    const auto strategies = parse_strategies(strategy_names);
    if (strategies.empty()) {
        throw ValidationError("no strategies requested");
    }

    fs::create_directories(out_dir);
    const SceneEvaluation eval = evaluate_scene(scene, strategies, coverage_radius);

    write_text(report_to_csv(eval), (fs::path(out_dir) / "report.csv").string());
    for (const auto& row : eval.rows) {
        std::string stem = to_string(row.strategy);
        std::replace(stem.begin(), stem.end(), '+', '_');
        write_ply(row.fused.cloud, (fs::path(out_dir) / (stem + ".ply")).string());
        write_text(detections_to_csv(row.detections),
                   (fs::path(out_dir) / (stem + "_detections.csv")).string());
    }

    std::cout << "scene " << eval.scene_id << ": tilt "
              << csv_number(eval.tilt_deg) << " deg, Y-residual "
              << csv_number(eval.residual_y_deg) << " deg\n";
    for (const auto& row : eval.rows) {
        std::cout << "  " << to_string(row.strategy) << ": coverage "
                  << csv_number(row.coverage) << ", F1@50 "
                  << csv_number(row.at50.f1()) << ", points "
                  << row.direct_count + row.mirror_count << "\n";
        std::cerr << "  " << to_string(row.strategy) << " wall_ms "
                  << row.wall_ms << "\n";
    }
    std::cout << "report written to " << out_dir << "/report.csv\n";
    return 0;
}

int cmd_calibrate(const std::string& scene_path, double sweep_min, double sweep_max,
                  double step, int runs, const std::string& out_csv,
                  const std::string& pose_mode, std::optional<std::uint64_t> seed,
                  const std::string& estimate_out) {
    SceneModel scene = load_scene_with_seed(scene_path, seed);
    if (!scene.arm) {
        throw ValidationError("calibrate: scene has no arm to use as a target");
    }
    if (step <= 0 || sweep_max < sweep_min) {
        throw ValidationError("calibrate: bad sweep range");
    }

    ArmModel pose = *scene.arm;
    if (pose_mode == "optimal") {
        const PoseSearchResult search = find_optimal_pose(
            scene, PoseSearchSpace::default_two_joint(10), scene.noise);
        pose = search.pose;
        std::cout << "optimal pose: shoulder "
                  << csv_number(pose.joint_angles.x() * 180.0 / M_PI) << " deg, elbow "
                  << csv_number(pose.joint_angles.y() * 180.0 / M_PI)
                  << " deg, weighted points " << csv_number(search.best_n_points)
                  << " (" << search.capture_pairs << " capture pairs)\n";
    } else if (pose_mode == "random") {
        Rng rng(mix_seed(scene.noise.seed, 0xF0))
            ;
        pose.joint_angles = {rng.uniform(0.2, M_PI / 2), rng.uniform(-0.5, M_PI / 2)};
    } else if (pose_mode != "current") {
        throw ValidationError("calibrate: pose mode must be optimal|random|current");
    }

    std::vector<double> angles;
    for (double a = sweep_min; a <= sweep_max + 1e-9; a += step) {
        angles.push_back(a);
    }
    RegistrationParams params;
    params.seed = scene.noise.seed;
    const auto rows = calibration_sweep(scene, angles, pose, runs, params);

    std::ostringstream csv;
    csv << "angle_deg,mean_trans_m,mean_rot_deg,converged_fraction\n";
    for (const auto& row : rows) {
        csv << csv_number(row.angle_deg) << ',' << csv_number(row.mean_translational)
            << ',' << csv_number(row.mean_rotational) << ','
            << csv_number(row.converged_fraction) << '\n';
    }
    write_text(csv.str(), out_csv);

    for (const auto& row : rows) {
        std::cout << "angle " << csv_number(row.angle_deg) << " deg: trans "
                  << csv_number(row.mean_translational) << " m, rot "
                  << csv_number(row.mean_rotational) << " deg, converged "
                  << csv_number(row.converged_fraction) << "\n";
    }
    std::cout << "sweep written to " << out_csv << "\n";

    if (!estimate_out.empty()) {
        // calibrate the as-configured mirror against the perpendicular prior
        // and persist the estimate in the scene document
        SceneModel posed = scene;
        posed.arm = pose;
        Eigen::Vector3d n = posed.mirror.plane.normal();
        n.z() = 0.0;
        if (n.norm() < 1e-9) {
            throw ValidationError("calibrate: mirror is horizontal; no prior");
        }
        const Plane3d prior_plane =
            Plane3d::from_point_normal(posed.mirror.center, n.normalized()).canonical();
        const Transform4d h_init = householder_from_plane(prior_plane);
        const CalibrationCaptures caps =
            calibration_captures(posed, posed.noise, h_init);
        const PointCloud virtual_cloud =
            select_virtual_arm_cloud(posed, caps.reflect, h_init);
        const PointCloud direct_cloud = select_direct_arm_cloud(posed, caps.direct);
        const CalibrationResult result =
            register_mirror(virtual_cloud, direct_cloud, h_init, params);
        scene.estimated_mirror_plane = result.plane_estimated;
        save_scene(scene, estimate_out);
        std::cout << "estimated mirror plane appended to " << estimate_out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tilt-mirror workcell simulator and calibration toolkit"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "root seed (default: MIRRORSENSE_SEED or 0)");

    auto* scene_cmd = app.add_subcommand("scene", "generate a randomized scene config");
    std::uint64_t scene_seed = default_seed();
    std::string difficulty = "easy";
    std::string scene_out = "scene.json";
    scene_cmd->add_option("--seed", scene_seed, "generator seed");
    scene_cmd->add_option("--difficulty", difficulty, "easy|hard");
    scene_cmd->add_option("--out", scene_out, "output scene path");

    auto* capture_cmd = app.add_subcommand("capture", "render one capture to PLY");
    std::string capture_scene;
    std::optional<double> tilt_deg;
    std::string capture_strategy = "direct";
    std::string capture_out = "capture.ply";
    std::string capture_pgm;
    std::string capture_frame = "world";
    capture_cmd->add_option("--scene", capture_scene, "scene config path")->required();
    capture_cmd->add_option("--tilt-deg", tilt_deg,
                            "tilt angle (default 0, or computed for mirror)");
    capture_cmd->add_option("--strategy", capture_strategy, "direct|mirror");
    capture_cmd->add_option("--out", capture_out, "output PLY path");
    capture_cmd->add_option("--depth-pgm", capture_pgm, "optional depth PGM path");
    capture_cmd->add_option("--frame", capture_frame, "world|tilted point frame");

    auto* run_cmd = app.add_subcommand("run", "evaluate sensing strategies on a scene");
    std::string run_scene;
    std::vector<std::string> run_strategies{"all"};
    std::string run_out = "run-out";
    double coverage_radius = 0.02;
    run_cmd->add_option("--scene", run_scene, "scene config path")->required();
    run_cmd->add_option("--strategies", run_strategies,
                        "all or a list: direct mirror direct+mirror two-sensor");
    run_cmd->add_option("--out-dir", run_out, "output directory");
    run_cmd->add_option("--coverage-radius", coverage_radius,
                        "coverage match radius in meters");

    auto* calib_cmd = app.add_subcommand("calibrate",
                                         "mirror displacement calibration sweep");
    std::string calib_scene;
    double sweep_min = -5.0, sweep_max = 5.0, sweep_step = 1.0;
    int runs = 10;
    std::string calib_out = "sweep.csv";
    std::string pose_mode = "optimal";
    std::string estimate_out;
    calib_cmd->add_option("--scene", calib_scene, "scene config path")->required();
    calib_cmd->add_option("--sweep-min", sweep_min, "sweep start, degrees");
    calib_cmd->add_option("--sweep-max", sweep_max, "sweep end, degrees");
    calib_cmd->add_option("--step", sweep_step, "sweep step, degrees");
    calib_cmd->add_option("--runs", runs, "noise seeds per sweep point");
    calib_cmd->add_option("--out", calib_out, "output CSV path");
    calib_cmd->add_option("--pose", pose_mode, "optimal|random|current");
    calib_cmd->add_option("--estimate-out", estimate_out,
                          "write the scene with the estimated mirror plane");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (scene_cmd->parsed()) {
            return cmd_scene(seed.value_or(scene_seed), difficulty, scene_out);
        }
        if (capture_cmd->parsed()) {
            return cmd_capture(capture_scene, tilt_deg, capture_strategy, capture_out,
                               capture_pgm, capture_frame, seed);
        }
        if (run_cmd->parsed()) {
            return cmd_run(run_scene, run_strategies, run_out, seed, coverage_radius);
        }
        if (calib_cmd->parsed()) {
            return cmd_calibrate(calib_scene, sweep_min, sweep_max, sweep_step, runs,
                                 calib_out, pose_mode, seed, estimate_out);
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
