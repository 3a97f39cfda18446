#pragma once

#include <string>
#include <vector>

#include "mirrorsense/geometry.hpp"
#include "mirrorsense/pipeline.hpp"
#include "mirrorsense/sensor_sim.hpp"

namespace mirrorsense {

/// ASCII PLY with properties x, y, z (double) and via_mirror (uchar).
/// Writers print shortest round-trip representations, so files are
/// bit-exact across runs for a fixed seed.
std::string ply_to_string(const PointCloud& cloud);
void write_ply(const PointCloud& cloud, const std::string& path);
PointCloud read_ply(const std::string& path);

/// 16-bit ASCII PGM of the depth image in millimeters; no-return pixels are 0.
std::string pgm_to_string(const Capture& capture);
void write_pgm(const Capture& capture, const std::string& path);

/// Fixed-precision CSV cell (6 decimals) for diffable reports.
std::string csv_number(double value);

void write_text(const std::string& text, const std::string& path);

std::string detections_to_csv(const std::vector<DetectedBox>& detections);

}  // namespace mirrorsense
