#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace cft {

// Speed above which an object counts as moving; used both when generating
// attributes and when predicting them from decoded velocity.
inline constexpr double kMovingSpeedThreshold = 0.2;

struct DetectionBox {
    std::array<double, 3> center{};  // x, y, z meters in ego frame
    std::array<double, 3> size{};    // l, w, h meters
    double yaw = 0.0;                // radians, normalized to (-pi, pi]
    std::array<double, 2> velocity{};
    int class_id = 0;
    double score = 1.0;

    double speed() const { return std::hypot(velocity[0], velocity[1]); }
    bool moving() const { return speed() > kMovingSpeedThreshold; }
};

inline double normalize_yaw(double yaw) {
    yaw = std::fmod(yaw, 2.0 * M_PI);
    if (yaw > M_PI) yaw -= 2.0 * M_PI;
    if (yaw <= -M_PI) yaw += 2.0 * M_PI;
    return yaw;
}

struct ClassSpec {
    std::string name;
    std::array<double, 3> size;   // nominal l, w, h
    std::array<double, 3> color;  // render color for the splat
};

const std::vector<ClassSpec>& default_classes();

}  // namespace cft
