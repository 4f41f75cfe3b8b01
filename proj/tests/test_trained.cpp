#include <doctest.h>

#include "refground/pipeline.hpp"
#include "refground/training.hpp"

using namespace refground;

namespace {

constexpr std::size_t kTrainScenes = 400;
constexpr std::size_t kHeldOutScenes = 60;

struct Trained {
    std::vector<AnnotatedScene> held_out;
    SeqModel semantic;
    SpatialModel spatial;
};

// Trains both stages once on a small corpus shared by every case.
const Trained& trained() {
    static const Trained t = [] {
        auto corpus = generate_corpus(kTrainScenes + kHeldOutScenes, 42);
        std::vector<AnnotatedScene> train(corpus.begin(), corpus.begin() + kTrainScenes);
        std::vector<AnnotatedScene> held_out(corpus.begin() + kTrainScenes, corpus.end());
        auto semantic = train_semantic_stage(train, default_semantic_config()).model;
        auto spatial_config = default_spatial_config();
        spatial_config.epochs = 12;
        auto spatial = train_spatial_stage(train, spatial_config).model;
        return Trained{std::move(held_out), std::move(semantic), std::move(spatial)};
    }();
    return t;
}

SceneObject object(std::string id, Category category, Color color, BoundingBox box) {
    return SceneObject{std::move(id), category, color, SizeClass::small, box, {0.08, 0.12, 0.08}};
}

Scene scene_of(std::vector<SceneObject> objects) { return Scene{"hand", 640, 480, std::move(objects)}; }

GroundingEngine engine() { return GroundingEngine(trained().semantic, trained().spatial); }

std::string caption(const SeqModel& model, const Scene& scene, const BoundingBox& box) {
    const AttributeFeaturizer featurizer;
    const auto ids = generate_caption(model, featurizer.extract(scene, box), kCaptionMaxLength);
    std::string text;
    for (const auto& word : model.vocab().decode(ids)) {
        text += (text.empty() ? "" : " ") + word;
    }
    return text;
}

RegionFeatures features_of(const Scene& scene, const SceneObject& o) {
    const AttributeFeaturizer featurizer;
    return {featurizer.extract(scene, o.bbox), encode_bbox(o.bbox, scene.width, scene.height)};
}

}  // namespace

TEST_CASE("a lone red cup is captioned as the red cup") {
    const auto scene = scene_of({object("o0", Category::cup, Color::red, {100, 100, 160, 180}),
                                 object("o1", Category::book, Color::green, {400, 250, 520, 300})});
    CHECK(caption(trained().semantic, scene, scene.objects[0].bbox) == "the red cup");
}

TEST_CASE("the semantic stage ranks the described object first") {
    const auto scene = scene_of({object("o0", Category::bottle, Color::blue, {60, 120, 110, 260}),
                                 object("o1", Category::cup, Color::red, {250, 200, 310, 280}),
                                 object("o2", Category::cup, Color::green, {420, 210, 480, 290}),
                                 object("o3", Category::book, Color::red, {300, 350, 420, 400})});
    const auto proposals = make_proposals(scene, ProposalMode::ground_truth, 0);
    const auto scores = score_regions(trained().semantic, scene, proposals, Expression("the red cup"));
    REQUIRE(!scores.regions.empty());
    CHECK(scores.regions.front().box == scene.objects[1].bbox);
    const auto result = engine().ground(scene, proposals, "the red cup");
    CHECK(result.ranked.front().box == scene.objects[1].bbox);
}

TEST_CASE("the left blue bottle prefers the left of two look-alikes") {
    const auto scene = scene_of({object("o0", Category::bottle, Color::blue, {400, 200, 450, 320}),
                                 object("o1", Category::bottle, Color::blue, {100, 200, 150, 320})});
    const auto& spatial = trained().spatial;
    const auto ids = spatial.seq.vocab().encode(Expression("the left blue bottle").tokens());
    const auto left = features_of(scene, scene.objects[1]);
    const auto right = features_of(scene, scene.objects[0]);
    CHECK(pair_probability(spatial, left, right, ids).probability >
          pair_probability(spatial, right, left, ids).probability);
    const auto proposals = make_proposals(scene, ProposalMode::ground_truth, 0);
    const auto result = engine().ground(scene, proposals, "the left blue bottle");
    CHECK(result.ranked.front().box == scene.objects[1].bbox);
}

TEST_CASE("the leftmost cup among three") {
    const auto scene = scene_of({object("o0", Category::cup, Color::white, {300, 200, 360, 280}),
                                 object("o1", Category::cup, Color::white, {520, 210, 580, 290}),
                                 object("o2", Category::cup, Color::white, {80, 190, 140, 270})});
    const auto proposals = make_proposals(scene, ProposalMode::ground_truth, 0);
    for (auto aggregation : {Aggregation::noisy_or, Aggregation::max}) {
        const auto result = engine().ground(scene, proposals, "the leftmost white cup", aggregation);
        CHECK(result.ranked.front().box == scene.objects[2].bbox);
    }
}

TEST_CASE("held-out positives have lower loss than negatives") {
    const auto& t = trained();
    const AttributeFeaturizer featurizer;
    const auto& vocab = t.semantic.vocab();
    double positive = 0.0, negative = 0.0;
    std::size_t count = 0;
    for (const auto& annotated : t.held_out) {
        const auto& scene = annotated.scene;
        for (const auto& g : annotated.expressions) {
            if (g.kind != ExpressionKind::semantic_only) continue;
            const auto ids = vocab.encode(g.expression.tokens());
            for (const auto& other : scene.objects) {
                if (other.id == g.target_object_id) continue;
                positive += sequence_nll(t.semantic, featurizer.extract(scene, scene.find(g.target_object_id)->bbox), ids);
                negative += sequence_nll(t.semantic, featurizer.extract(scene, other.bbox), ids);
                ++count;
                break;
            }
        }
    }
    REQUIRE(count > 50);
    CHECK(positive / count < negative / count);
}
