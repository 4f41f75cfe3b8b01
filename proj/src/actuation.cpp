#include "refground/actuation.hpp"

#include <random>
#include <stdexcept>

namespace refground {

std::string_view to_string(Grasp grasp) {
    return grasp == Grasp::forward ? "forward" : "top_down";
}

Point3 centroid(const PointCloud& cloud) {
    if (cloud.empty()) {
        throw std::invalid_argument("centroid of an empty point cloud");
    }
    Point3 sum = Point3::Zero();
    for (const auto& p : cloud) {
        sum += p;
    }
    return sum / static_cast<double>(cloud.size());
}

Grasp select_grasp(const ObjectExtent& extent, const GripperSpec& gripper) {
    if (!extent.valid() || !gripper.valid()) {
        throw std::invalid_argument("select_grasp: extent and gripper sizes must be positive");
    }
    if (extent.width > gripper.max_opening || extent.height < gripper.finger_length) {
        return Grasp::top_down;
    }
    return Grasp::forward;
}

PointCloud sample_object_cloud(const SceneObject& object, int points, std::uint64_t seed) {
    if (points < 1) {
        throw std::invalid_argument("sample_object_cloud: need at least one point");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    std::uniform_int_distribution<int> face(0, 5);
    const Point3 center(object.bbox.center_x() * kMetersPerPixel,
                        object.bbox.center_y() * kMetersPerPixel, 0.5 * object.extent.height);
    const Point3 size(object.extent.width, object.extent.depth, object.extent.height);
    PointCloud cloud;
    cloud.reserve(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        Point3 local(unit(rng), unit(rng), unit(rng));
        const int f = face(rng);
        local[f / 2] = f % 2 == 0 ? -0.5 : 0.5;
        cloud.push_back(center + local.cwiseProduct(size));
    }
    return cloud;
}

}  // namespace refground
