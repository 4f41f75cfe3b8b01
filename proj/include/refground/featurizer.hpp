#pragma once

#include <Eigen/Core>

#include "refground/box.hpp"
#include "refground/scene.hpp"

namespace refground {

using FeatureVector = Eigen::VectorXd;
using BoxEncoding = Eigen::Matrix<double, 5, 1>;

inline constexpr int kDefaultFeatureDim = 64;
/// Attribute one-hots (category, color, size) followed by the box encoding.
inline constexpr int kMinFeatureDim = kCategoryCount + kColorCount + kSizeClassCount + 5;

/// [x_min/W, y_min/H, x_max/W, y_max/H, box_area/image_area].
/// Throws std::invalid_argument for degenerate or out-of-bounds boxes.
BoxEncoding encode_bbox(const BoundingBox& box, double width, double height);

/// Region representation seam: any extractor with a declared dimension can
/// stand behind the grounding engine.
class Featurizer {
public:
    virtual ~Featurizer() = default;
    virtual int dimension() const = 0;
    virtual FeatureVector extract(const Scene& scene, const BoundingBox& box) const = 0;
};

/// Attribute one-hots of the best-overlapping object, scaled by that IoU,
/// plus the box encoding, zero-padded to the declared dimension.
class AttributeFeaturizer final : public Featurizer {
public:
    explicit AttributeFeaturizer(int dimension = kDefaultFeatureDim);

    int dimension() const override { return dimension_; }
    FeatureVector extract(const Scene& scene, const BoundingBox& box) const override;

private:
    int dimension_;
};

FeatureVector extract_features(const Scene& scene, const BoundingBox& box);

struct RegionFeatures {
    FeatureVector feature;
    BoxEncoding box;
};

/// The whole-canvas context: mean object feature with encoding [0,0,1,1,1].
RegionFeatures whole_image_region(const Featurizer& featurizer, const Scene& scene);
RegionFeatures whole_image_region(const Scene& scene);

}  // namespace refground
