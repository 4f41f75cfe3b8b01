#include <doctest.h>

#include <random>

#include "golden.hpp"
#include "refground/featurizer.hpp"

using namespace refground;

namespace {

Scene scene_of(std::vector<SceneObject> objects) { return Scene{"f", 640, 480, std::move(objects)}; }

SceneObject red_cup(BoundingBox box) {
    return SceneObject{"o0", Category::cup, Color::red, SizeClass::small, box, {0.08, 0.1, 0.08}};
}

constexpr int kColorOffset = kCategoryCount;
constexpr int kSizeOffset = kCategoryCount + kColorCount;
constexpr int kBoxOffset = kCategoryCount + kColorCount + kSizeClassCount;

}  // namespace

TEST_CASE("encode_bbox hand values") {
    const auto full = encode_bbox({0, 0, 640, 480}, 640, 480);
    CHECK(full == (BoxEncoding() << 0, 0, 1, 1, 1).finished());
    const auto quarter = encode_bbox({0, 0, 320, 240}, 640, 480);
    CHECK(quarter == (BoxEncoding() << 0, 0, 0.5, 0.5, 0.25).finished());
    CHECK_THROWS_AS(encode_bbox({640, 0, 641, 480}, 640, 480), std::invalid_argument);
    CHECK_THROWS_AS(encode_bbox({10, 10, 10, 20}, 640, 480), std::invalid_argument);
    CHECK_THROWS_AS(encode_bbox({0, 0, 10, 10}, 0, 480), std::invalid_argument);
}

TEST_CASE("encode_bbox entries stay in range with the area identity") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 10000; ++trial) {
        const double w = 50.0 + 1000.0 * u(rng);
        const double h = 50.0 + 1000.0 * u(rng);
        double x0 = w * u(rng), x1 = w * u(rng), y0 = h * u(rng), y1 = h * u(rng);
        if (x0 == x1 || y0 == y1) {
            continue;
        }
        const BoundingBox box{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
        const auto e = encode_bbox(box, w, h);
        CHECK((e.array() >= 0.0).all());
        CHECK((e.array() <= 1.0).all());
        CHECK(std::abs(e[4] - (e[2] - e[0]) * (e[3] - e[1])) <= 1e-9);
    }
}

TEST_CASE("exact object box gives unit attribute one-hots") {
    const auto scene = scene_of({red_cup({100, 100, 200, 200})});
    const auto f = extract_features(scene, {100, 100, 200, 200});
    REQUIRE(f.size() == kDefaultFeatureDim);
    CHECK(f[static_cast<int>(Category::cup)] == 1.0);
    CHECK(f[kColorOffset + static_cast<int>(Color::red)] == 1.0);
    CHECK(f[kSizeOffset + static_cast<int>(SizeClass::small)] == 1.0);
    CHECK(f.head(kBoxOffset).sum() == 3.0);
    CHECK(f.segment<5>(kBoxOffset) == encode_bbox({100, 100, 200, 200}, 640, 480));
    CHECK(f.tail(kDefaultFeatureDim - kBoxOffset - 5).isZero(0.0));
}

TEST_CASE("box overlapping nothing has an empty attribute block") {
    const auto scene = scene_of({red_cup({100, 100, 200, 200})});
    const auto f = extract_features(scene, {300, 300, 400, 400});
    CHECK(f.head(kBoxOffset).isZero(0.0));
    CHECK(f.segment<5>(kBoxOffset) == encode_bbox({300, 300, 400, 400}, 640, 480));
}

TEST_CASE("partial overlap scales the attribute blocks by the IoU") {
    // Intersection 100x80 over union 100x100.
    const auto scene = scene_of({red_cup({0, 0, 100, 100})});
    const auto f = extract_features(scene, {0, 0, 100, 80});
    CHECK(f[static_cast<int>(Category::cup)] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(f[kColorOffset + static_cast<int>(Color::red)] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(f[kSizeOffset + static_cast<int>(SizeClass::small)] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("feature extraction is bitwise deterministic") {
    const auto scene = generate_scene({}, 21);
    for (const auto& object : scene.objects) {
        const auto a = extract_features(scene, object.bbox);
        const auto b = extract_features(scene, object.bbox);
        CHECK(a == b);
        CHECK(a.allFinite());
    }
}

TEST_CASE("featurizer dimension is configurable") {
    const AttributeFeaturizer wide(128);
    const auto scene = scene_of({red_cup({100, 100, 200, 200})});
    CHECK(wide.extract(scene, {100, 100, 200, 200}).size() == 128);
    CHECK_THROWS_AS(AttributeFeaturizer(kMinFeatureDim - 1), std::invalid_argument);
}

TEST_CASE("whole-image region of one object is that object's feature") {
    const auto scene = scene_of({red_cup({100, 100, 200, 200})});
    const auto region = whole_image_region(scene);
    CHECK(region.box == (BoxEncoding() << 0, 0, 1, 1, 1).finished());
    CHECK(region.feature == extract_features(scene, {100, 100, 200, 200}));
}

TEST_CASE("whole-image region of two objects is the elementwise mean") {
    auto other = red_cup({300, 50, 380, 150});
    other.id = "o1";
    other.color = Color::blue;
    const auto scene = scene_of({red_cup({100, 100, 200, 200}), other});
    const auto region = whole_image_region(scene);
    const Eigen::VectorXd mean =
        0.5 * (extract_features(scene, scene.objects[0].bbox) + extract_features(scene, other.bbox));
    CHECK(region.feature.isApprox(mean, 1e-15));
    CHECK(region.feature[kColorOffset + static_cast<int>(Color::blue)] == 0.5);
}

TEST_CASE("whole-image vector of the seed 42 scene is frozen") {
    const auto scene = generate_scene({}, 42);
    const auto region = whole_image_region(scene);
    refground::testing::check_golden(
        "whole_image_seed42",
        nlohmann::ordered_json(std::vector<double>(region.feature.data(),
                                                   region.feature.data() + region.feature.size())));
}
