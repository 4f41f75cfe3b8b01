#include <doctest.h>

#include <random>

#include "refground/actuation.hpp"

using namespace refground;

TEST_CASE("centroid hand values") {
    CHECK(centroid({Point3(1, 2, 3)}) == Point3(1, 2, 3));
    CHECK(centroid({Point3(0, 0, 0), Point3(2, 2, 2)}) == Point3(1, 1, 1));
    const auto c = centroid({Point3(1, 0, 0), Point3(0, 1, 0), Point3(0, 0, 1)});
    CHECK(c.isApprox(Point3::Constant(1.0 / 3.0), 1e-15));
    CHECK_THROWS_AS(centroid({}), std::invalid_argument);
}

TEST_CASE("centroid is translation equivariant") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        PointCloud cloud(1 + trial % 17);
        for (auto& p : cloud) p = Point3(u(rng), u(rng), u(rng));
        const Point3 v(u(rng), u(rng), u(rng));
        PointCloud moved = cloud;
        for (auto& p : moved) p += v;
        CHECK((centroid(moved) - (centroid(cloud) + v)).norm() <= 1e-12);
    }
}

TEST_CASE("grasp rule examples") {
    const GripperSpec gripper{0.08, 0.05};
    CHECK(select_grasp({0.10, 0.20, 0.05}, gripper) == Grasp::top_down);
    CHECK(select_grasp({0.05, 0.03, 0.05}, gripper) == Grasp::top_down);
    CHECK(select_grasp({0.05, 0.20, 0.05}, gripper) == Grasp::forward);
    CHECK(select_grasp({0.08, 0.05, 0.05}, gripper) == Grasp::forward);
    CHECK(to_string(Grasp::top_down) == "top_down");
    CHECK(to_string(Grasp::forward) == "forward");
}

TEST_CASE("widening an object never turns a top-down grasp forward") {
    const GripperSpec gripper;
    for (double height : {0.02, 0.05, 0.2}) {
        bool top_down = false;
        for (double width = 0.01; width < 0.2; width += 0.005) {
            const bool now = select_grasp({width, height, 0.05}, gripper) == Grasp::top_down;
            CHECK((now || !top_down));
            top_down = now;
        }
    }
}

TEST_CASE("sampled cloud lies on the object's extent") {
    const SceneObject object{"o0", Category::cup, Color::red, SizeClass::small,
                             {100, 200, 180, 300}, {0.08, 0.1, 0.06}};
    const auto cloud = sample_object_cloud(object, 500, 4);
    REQUIRE(cloud.size() == 500);
    CHECK(cloud == sample_object_cloud(object, 500, 4));
    const auto c = centroid(cloud);
    CHECK(std::abs(c.x() - object.bbox.center_x() * kMetersPerPixel) < 0.01);
    for (const auto& p : cloud) {
        CHECK(p.z() >= -1e-12);
        CHECK(p.z() <= object.extent.height + 1e-12);
    }
    CHECK_THROWS(sample_object_cloud(object, 0, 4));
}
