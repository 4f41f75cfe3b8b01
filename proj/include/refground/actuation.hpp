#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "refground/scene.hpp"

namespace refground {

using Point3 = Eigen::Vector3d;
using PointCloud = std::vector<Point3>;

struct GripperSpec {
    double max_opening = 0.08;
    double finger_length = 0.05;

    bool valid() const { return max_opening > 0.0 && finger_length > 0.0; }
};

enum class Grasp { forward, top_down };

std::string_view to_string(Grasp grasp);

/// Mean of all points; throws std::invalid_argument on an empty cloud.
Point3 centroid(const PointCloud& cloud);

/// Top-down when the object is wider than the gripper opening or shorter
/// than the fingers, forward otherwise.
Grasp select_grasp(const ObjectExtent& extent, const GripperSpec& gripper);

/// Desk plane scale used to place synthetic objects in meters.
inline constexpr double kMetersPerPixel = 0.001;

/// Surface samples of the object's extent box standing on the desk plane
/// below its image position.
PointCloud sample_object_cloud(const SceneObject& object, int points, std::uint64_t seed);

}  // namespace refground
