#include "mirrorsense/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mirrorsense {

namespace {

std::string shortest_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // prefer the shortest representation that round-trips
    for (int precision = 1; precision < 17; ++precision) {
        char trial[32];
        std::snprintf(trial, sizeof(trial), "%.*g", precision, v);
        double parsed = 0.0;
        std::sscanf(trial, "%lf", &parsed);
        if (parsed == v) return trial;
    }
    return buf;
}

}  // namespace

std::string ply_to_string(const PointCloud& cloud) {
    std::ostringstream out;
    out << "ply\n"
        << "format ascii 1.0\n"
        << "comment frame " << frame_name(cloud.frame) << "\n"
        << "element vertex " << cloud.size() << "\n"
        << "property double x\n"
        << "property double y\n"
        << "property double z\n"
        << "property uchar via_mirror\n"
        << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        out << shortest_double(p.x()) << ' ' << shortest_double(p.y()) << ' '
            << shortest_double(p.z()) << ' ' << int(cloud.via_mirror[i]) << '\n';
    }
    return out.str();
}

void write_ply(const PointCloud& cloud, const std::string& path) {
    write_text(ply_to_string(cloud), path);
}

PointCloud read_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("read_ply: cannot open '" + path + "'");
    }
    std::string line;
    std::size_t count = 0;
    Frame frame = Frame::World;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (line.rfind("element vertex", 0) == 0) {
            count = std::stoul(line.substr(15));
        } else if (line.rfind("comment frame ", 0) == 0) {
            const std::string name = line.substr(14);
            if (name == "Sensor") frame = Frame::Sensor;
            else if (name == "TiltedSensor") frame = Frame::TiltedSensor;
            else frame = Frame::World;
        } else if (line == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done) {
        throw ValidationError("read_ply: missing end_header in '" + path + "'");
    }
    PointCloud cloud(frame);
    cloud.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        double x, y, z;
        int flag;
        if (!(in >> x >> y >> z >> flag)) {
            throw ValidationError("read_ply: truncated vertex data in '" + path + "'");
        }
        cloud.add({x, y, z}, flag != 0);
    }
    return cloud;
}

std::string pgm_to_string(const Capture& capture) {
    std::ostringstream out;
    out << "P2\n" << capture.width << ' ' << capture.height << "\n65535\n";
    for (int v = 0; v < capture.height; ++v) {
        for (int u = 0; u < capture.width; ++u) {
            const double d = capture.depth[static_cast<std::size_t>(v) * capture.width + u];
            int mm = 0;
            if (std::isfinite(d)) {
                mm = std::clamp(static_cast<int>(std::lround(d * 1000.0)), 1, 65535);
            }
            out << mm << (u + 1 == capture.width ? '\n' : ' ');
        }
    }
    return out.str();
}

void write_pgm(const Capture& capture, const std::string& path) {
    write_text(pgm_to_string(capture), path);
}

std::string csv_number(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    return buf;
}

void write_text(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot write '" + path + "'");
    }
    out << text;
}

std::string detections_to_csv(const std::vector<DetectedBox>& detections) {
    std::ostringstream out;
    out << "center_x,center_y,w,d,yaw,score\n";
    for (const auto& det : detections) {
        out << csv_number(det.center.x()) << ',' << csv_number(det.center.y()) << ','
            << csv_number(det.extent.x()) << ',' << csv_number(det.extent.y()) << ','
            << csv_number(det.yaw) << ',' << csv_number(det.score) << '\n';
    }
    return out.str();
}

}  // namespace mirrorsense
