#pragma once

#include <algorithm>

namespace refground {

/// Axis-aligned box in pixel coordinates.
struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }

    bool valid() const { return x_min < x_max && y_min < y_max; }

    bool inside(double canvas_width, double canvas_height) const {
        return x_min >= 0.0 && y_min >= 0.0 && x_max <= canvas_width && y_max <= canvas_height;
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Intersection area over union area; 0 for disjoint boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    if (inter <= 0.0) {
        return 0.0;
    }
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace refground
