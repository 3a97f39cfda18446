#pragma once

#include <string>
#include <vector>

#include "mirrorsense/pipeline.hpp"
#include "mirrorsense/scene.hpp"

namespace mirrorsense {

/// The four sensing strategies of the evaluation protocol; TwoSensor is the
/// reference configuration with a second virtual sensor at the mirror image
/// of the first.
enum class Strategy { DirectOnly, MirrorOnly, DirectMirror, TwoSensor };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct MatchCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;

    double precision() const { return tp + fp == 0 ? 0.0 : double(tp) / (tp + fp); }
    double recall() const { return tp + fn == 0 ? 0.0 : double(tp) / (tp + fn); }
    double f1() const {
        const double p = precision(), r = recall();
        return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    }
};

/// Intersection-over-union of two yawed rectangles (convex polygon clip).
double rotated_rect_iou(const DetectedBox& a, const DetectedBox& b);

/// Greedy matching, largest detections first; a ground-truth rect matches at
/// most one detection.
MatchCounts match_detections(const std::vector<DetectedBox>& detections,
                             const std::vector<DetectedBox>& ground_truth,
                             double iou_threshold);

std::vector<DetectedBox> ground_truth_rects(const SceneModel& scene);

struct StrategyReport {
    Strategy strategy = Strategy::DirectOnly;
    std::size_t direct_count = 0;
    std::size_t mirror_count = 0;
    double coverage = 0.0;
    MatchCounts at50;
    MatchCounts at75;
    double wall_ms = 0.0;  // printed to stdout, never written to CSV
    FusedCloud fused;
    std::vector<DetectedBox> detections;
};

struct SceneEvaluation {
    std::string scene_id;
    double tilt_deg = 0.0;
    double residual_y_deg = 0.0;
    PointCloud reference{Frame::World};  // target top-face points seen by two sensors
    std::vector<StrategyReport> rows;
};

/// Capture once, then assemble every requested strategy from the shared
/// captures. Coverage is measured against the noise-free two-sensor target
/// reference at `coverage_radius`.
SceneEvaluation evaluate_scene(const SceneModel& scene,
                               const std::vector<Strategy>& strategies,
                               double coverage_radius = 0.02);

/// Report rows as diffable CSV (fixed decimals, no wall times).
std::string report_to_csv(const SceneEvaluation& eval);

}  // namespace mirrorsense
