#include "refground/featurizer.hpp"

#include <stdexcept>
#include <string>

namespace refground {

BoxEncoding encode_bbox(const BoundingBox& box, double width, double height) {
    if (!(width > 0.0) || !(height > 0.0)) {
        throw std::invalid_argument("encode_bbox: image dimensions must be positive");
    }
    if (!box.valid()) {
        throw std::invalid_argument("encode_bbox: degenerate box");
    }
    if (!box.inside(width, height)) {
        throw std::invalid_argument("encode_bbox: box outside image bounds");
    }
    BoxEncoding encoding;
    encoding << box.x_min / width, box.y_min / height, box.x_max / width, box.y_max / height, 0.0;
    encoding[4] = (encoding[2] - encoding[0]) * (encoding[3] - encoding[1]);
    return encoding;
}

AttributeFeaturizer::AttributeFeaturizer(int dimension) : dimension_(dimension) {
    if (dimension < kMinFeatureDim) {
        throw std::invalid_argument("feature dimension must be at least " +
                                    std::to_string(kMinFeatureDim));
    }
}

FeatureVector AttributeFeaturizer::extract(const Scene& scene, const BoundingBox& box) const {
    FeatureVector feature = FeatureVector::Zero(dimension_);
    const SceneObject* best = nullptr;
    double best_iou = 0.0;
    for (const auto& object : scene.objects) {
        const double overlap = iou(object.bbox, box);
        if (overlap > best_iou) {
            best_iou = overlap;
            best = &object;
        }
    }
    if (best != nullptr) {
        feature[static_cast<int>(best->category)] = best_iou;
        feature[kCategoryCount + static_cast<int>(best->color)] = best_iou;
        feature[kCategoryCount + kColorCount + static_cast<int>(best->size_class)] = best_iou;
    }
    constexpr int offset = kCategoryCount + kColorCount + kSizeClassCount;
    feature.segment<5>(offset) = encode_bbox(box, scene.width, scene.height);
    return feature;
}

FeatureVector extract_features(const Scene& scene, const BoundingBox& box) {
    static const AttributeFeaturizer featurizer;
    return featurizer.extract(scene, box);
}

RegionFeatures whole_image_region(const Featurizer& featurizer, const Scene& scene) {
    RegionFeatures region{FeatureVector::Zero(featurizer.dimension()), BoxEncoding()};
    region.box << 0.0, 0.0, 1.0, 1.0, 1.0;
    for (const auto& object : scene.objects) {
        region.feature += featurizer.extract(scene, object.bbox);
    }
    if (!scene.objects.empty()) {
        region.feature /= static_cast<double>(scene.objects.size());
    }
    return region;
}

RegionFeatures whole_image_region(const Scene& scene) {
    static const AttributeFeaturizer featurizer;
    return whole_image_region(featurizer, scene);
}

}  // namespace refground
