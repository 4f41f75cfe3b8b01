#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "refground/semantic.hpp"

using namespace refground;

namespace {

class ConstantFeaturizer final : public Featurizer {
public:
    int dimension() const override { return 4; }
    FeatureVector extract(const Scene&, const BoundingBox&) const override {
        return FeatureVector::Constant(4, 0.25);
    }
};

Vocabulary vocab() { return Vocabulary({"the", "red", "cup", "blue", "bottle"}); }

SeqModel small_model(int cond_dim, std::uint64_t seed = 3) {
    return init_model(vocab(), {vocab().size(), 6, 8, cond_dim}, seed);
}

Scene cluttered_scene() { return generate_scene({}, 31); }

}  // namespace

TEST_CASE("identical features tie and fall back to geometry") {
    const ConstantFeaturizer featurizer;
    const auto model = small_model(4);
    const Scene scene{"s", 640, 480,
                      {{"o0", Category::cup, Color::red, SizeClass::small, {300, 10, 350, 60}, {0.1, 0.1, 0.1}},
                       {"o1", Category::cup, Color::red, SizeClass::small, {100, 90, 150, 140}, {0.1, 0.1, 0.1}},
                       {"o2", Category::cup, Color::red, SizeClass::small, {100, 20, 150, 70}, {0.1, 0.1, 0.1}}}};
    const auto proposals = make_proposals(scene, ProposalMode::ground_truth, 0);
    const auto scores = score_regions(model, featurizer, scene, proposals, Expression("the red cup"));
    REQUIRE(scores.regions.size() == 3);
    CHECK(scores.regions[0].loss == scores.regions[1].loss);
    CHECK(scores.regions[1].loss == scores.regions[2].loss);
    CHECK(scores.regions[0].proposal_index == 2);
    CHECK(scores.regions[1].proposal_index == 1);
    CHECK(scores.regions[2].proposal_index == 0);
}

TEST_CASE("uniform model gives every region 4 ln V") {
    auto model = small_model(kDefaultFeatureDim);
    model.tensor(SeqTensor::output_weights).setZero();
    model.tensor(SeqTensor::output_bias).setZero();
    const auto scene = cluttered_scene();
    const auto proposals = make_proposals(scene, ProposalMode::ground_truth, 0);
    const auto scores = score_regions(model, scene, proposals, Expression("the red cup"));
    for (const auto& region : scores.regions) {
        CHECK(region.loss == doctest::Approx(4.0 * std::log(vocab().size())).epsilon(1e-12));
    }
    CHECK_FALSE(scores.unknown_query);
}

TEST_CASE("scoring is a sorted permutation of the proposals") {
    const auto model = small_model(kDefaultFeatureDim);
    const auto scene = cluttered_scene();
    const auto proposals = make_proposals(scene, ProposalMode::degraded, 4);
    const auto scores = score_regions(model, scene, proposals, Expression("the blue bottle"));
    REQUIRE(scores.regions.size() == proposals.boxes.size());
    std::vector<std::size_t> seen;
    for (const auto& region : scores.regions) {
        CHECK(region.box == proposals.boxes[region.proposal_index]);
        CHECK(region.loss >= 0.0);
        CHECK(region.generated_caption.raw().size() > 0);
        CHECK(static_cast<int>(region.generated_caption.tokens().size()) <= kCaptionMaxLength);
        seen.push_back(region.proposal_index);
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) {
        CHECK(seen[i] == i);
    }
    CHECK(std::is_sorted(scores.regions.begin(), scores.regions.end(), region_order));
}

TEST_CASE("region losses do not depend on the other regions") {
    const auto model = small_model(kDefaultFeatureDim);
    const auto scene = cluttered_scene();
    const auto full = make_proposals(scene, ProposalMode::ground_truth, 0);
    const auto all = score_regions(model, scene, full, Expression("the red cup"));
    ProposalSet reduced = full;
    std::reverse(reduced.boxes.begin(), reduced.boxes.end());
    reduced.boxes.pop_back();
    const auto fewer = score_regions(model, scene, reduced, Expression("the red cup"));
    for (const auto& region : fewer.regions) {
        const auto match = std::find_if(all.regions.begin(), all.regions.end(),
                                        [&](const auto& r) { return r.box == region.box; });
        REQUIRE(match != all.regions.end());
        CHECK(match->loss == region.loss);
    }
}

TEST_CASE("query without known words sets the warning flag") {
    const auto model = small_model(kDefaultFeatureDim);
    const auto scene = cluttered_scene();
    const auto proposals = make_proposals(scene, ProposalMode::ground_truth, 0);
    CHECK(score_regions(model, scene, proposals, Expression("zebra giraffe")).unknown_query);
    CHECK_FALSE(score_regions(model, scene, proposals, Expression("zebra cup")).unknown_query);
}

TEST_CASE("scoring rejects an empty proposal set and mismatched features") {
    const auto scene = cluttered_scene();
    ProposalSet empty{scene.id, {}, ProposalMode::ground_truth};
    CHECK_THROWS(score_regions(small_model(kDefaultFeatureDim), scene, empty, Expression("the cup")));
    const auto proposals = make_proposals(scene, ProposalMode::ground_truth, 0);
    CHECK_THROWS(score_regions(small_model(5), scene, proposals, Expression("the cup")));
}

TEST_CASE("top_k takes the sorted prefix") {
    std::vector<ScoredRegion> scored(15);
    for (std::size_t i = 0; i < scored.size(); ++i) {
        scored[i].loss = static_cast<double>(i);
        scored[i].box = {double(i), 0, double(i) + 1, 1};
        scored[i].proposal_index = i;
    }
    CHECK(top_k(scored, 10).size() == 10);
    CHECK(top_k(scored, 10).back().loss == 9.0);
    CHECK(top_k(scored).size() == 10);
    CHECK(top_k(std::span(scored).first(7), 10).size() == 7);
    const auto best = top_k(scored, 1);
    REQUIRE(best.size() == 1);
    CHECK(best[0].loss == 0.0);
    CHECK_THROWS_AS(top_k(scored, 0), std::invalid_argument);
}

TEST_CASE("semantic examples come from semantic_only expressions") {
    const auto corpus = generate_corpus(10, 5);
    std::vector<Expression> expressions;
    std::size_t semantic = 0;
    for (const auto& a : corpus) {
        for (const auto& g : a.expressions) {
            expressions.push_back(g.expression);
            semantic += g.kind == ExpressionKind::semantic_only ? 1 : 0;
        }
    }
    const auto v = build_vocab(expressions, 1);
    const AttributeFeaturizer featurizer;
    const auto examples = build_semantic_examples(corpus, v, featurizer);
    CHECK(examples.size() == semantic);
    for (const auto& example : examples) {
        CHECK(example.condition.size() == kDefaultFeatureDim);
        CHECK(std::find(example.tokens.begin(), example.tokens.end(), kUnk) == example.tokens.end());
    }
}

TEST_CASE("semantic bundle round trip preserves scores bit exactly") {
    const auto model = small_model(kDefaultFeatureDim, 17);
    const auto path = std::filesystem::temp_directory_path() / "refground_semantic_bundle.json";
    save_semantic_model(model, path);
    const auto loaded = load_semantic_model(path);
    std::filesystem::remove(path);
    CHECK(loaded.parameters() == model.parameters());
    const auto scene = cluttered_scene();
    const auto proposals = make_proposals(scene, ProposalMode::degraded, 2);
    const auto a = score_regions(model, scene, proposals, Expression("the red cup"));
    const auto b = score_regions(loaded, scene, proposals, Expression("the red cup"));
    for (std::size_t i = 0; i < a.regions.size(); ++i) {
        CHECK(a.regions[i].loss == b.regions[i].loss);
        CHECK(a.regions[i].generated_caption.raw() == b.regions[i].generated_caption.raw());
    }
}

TEST_CASE("semantic bundle validation") {
    auto bundle = nlohmann::json::parse(semantic_bundle(small_model(kDefaultFeatureDim)).dump());
    CHECK_NOTHROW(semantic_model_from_json(bundle));
    auto wrong_role = bundle;
    wrong_role["role"] = "spatial";
    CHECK_THROWS_AS(semantic_model_from_json(wrong_role), ModelFormatError);
    auto wrong_dim = bundle;
    wrong_dim["dims"]["feature_dim"] = 32;
    CHECK_THROWS_AS(semantic_model_from_json(wrong_dim), ModelFormatError);
    CHECK_THROWS_AS(load_semantic_model("/nonexistent/semantic.json"), ModelFormatError);
}
