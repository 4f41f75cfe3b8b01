#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "refground/spatial.hpp"

using namespace refground;

namespace {

Vocabulary vocab() { return Vocabulary({"the", "left", "right", "blue", "bottle", "cup", "leftmost"}); }

SpatialDims small_dims() { return {kDefaultFeatureDim, 6, 5, 7}; }

SpatialModel small_model(std::uint64_t seed = 5) { return init_spatial_model(vocab(), small_dims(), seed); }

std::vector<int> ids(const char* text) { return vocab().encode(Expression(text).tokens()); }

std::vector<ScoredRegion> candidates_of(const Scene& scene) {
    std::vector<ScoredRegion> out;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        ScoredRegion r;
        r.box = scene.objects[i].bbox;
        r.feature = extract_features(scene, r.box);
        r.box_encoding = encode_bbox(r.box, scene.width, scene.height);
        r.loss = 1.0 + 0.1 * static_cast<double>(i);
        r.proposal_index = i;
        out.push_back(r);
    }
    return out;
}

Scene bottles_scene() {
    return Scene{"b", 640, 480,
                 {{"o0", Category::bottle, Color::blue, SizeClass::small, {400, 200, 450, 320}, {0.07, 0.2, 0.07}},
                  {"o1", Category::bottle, Color::blue, SizeClass::small, {100, 200, 150, 320}, {0.07, 0.2, 0.07}},
                  {"o2", Category::cup, Color::red, SizeClass::small, {250, 50, 300, 110}, {0.08, 0.1, 0.08}}}};
}

SpatialModel uniform_model() {
    auto model = small_model();
    model.seq.tensor(SeqTensor::output_weights).setZero();
    model.seq.tensor(SeqTensor::output_bias).setZero();
    return model;
}

std::vector<SpatialExample> toy_examples() {
    const std::vector<AnnotatedScene> corpus{
        {bottles_scene(),
         {{Expression("the left blue bottle"), "o1", ExpressionKind::spatio_semantic},
          {Expression("the right blue bottle"), "o0", ExpressionKind::spatio_semantic}}}};
    return build_spatial_examples(corpus, vocab(), AttributeFeaturizer());
}

}  // namespace

TEST_CASE("pair input layout") {
    const auto model = small_model();
    CHECK(pair_input_dim(32) == 74);
    CHECK(model.seq.dims().cond_dim == pair_input_dim(6));
    const auto scene = bottles_scene();
    const auto cands = candidates_of(scene);
    const auto t = region_of(cands[0]);
    const auto c = region_of(cands[1]);
    const auto input = model.pair_input(t, c);
    REQUIRE(input.size() == 22);
    CHECK(input.head(6).isApprox(model.projection * t.feature));
    CHECK(input.segment(6, 5) == t.box);
    CHECK(input.segment(11, 6).isApprox(model.projection * c.feature));
    CHECK(input.tail(5) == c.box);
}

TEST_CASE("probability mapping") {
    CHECK(length_normalized_probability(0.0, 3) == 1.0);
    CHECK(length_normalized_probability(4.0 * std::log(7.0), 3) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    double previous = 1.0;
    for (double nll = 0.1; nll < 30.0; nll += 0.7) {
        const double p = length_normalized_probability(nll, 4);
        CHECK(p < previous);
        CHECK(p > 0.0);
        previous = p;
    }
}

TEST_CASE("uniform model gives 1/V for every pair") {
    const auto model = uniform_model();
    const auto scene = bottles_scene();
    const auto cands = candidates_of(scene);
    const auto query = ids("the left blue bottle");
    const double v = vocab().size();
    const auto whole = whole_image_region(scene);
    for (const auto& t : cands) {
        const auto score = pair_probability(model, region_of(t), whole, query);
        CHECK(score.probability == doctest::Approx(1.0 / v).epsilon(1e-12));
    }
}

TEST_CASE("score_pairs evaluates k squared pairs") {
    const auto model = small_model();
    const auto scene = generate_scene({}, 12);
    std::vector<RegionFeatures> regions;
    for (const auto& c : candidates_of(scene)) {
        regions.push_back(region_of(c));
    }
    const auto whole = whole_image_region(scene);
    const auto query = ids("the leftmost cup");
    for (std::size_t k = 1; k <= std::min<std::size_t>(regions.size(), 10); ++k) {
        const auto pairs = score_pairs(model, std::span(regions).first(k), whole, query);
        CHECK(pairs.evaluations == k * k);
        CHECK(pairs.probability.rows() == static_cast<Eigen::Index>(k));
        CHECK(((pairs.probability.array() > 0.0) && (pairs.probability.array() <= 1.0)).all());
    }
    const auto pairs = score_pairs(model, std::span(regions).first(3), whole, query);
    CHECK(pairs.probability(0, 0) == pair_probability(model, regions[0], whole, query).probability);
    CHECK(pairs.probability(1, 2) == pair_probability(model, regions[1], regions[2], query).probability);
}

TEST_CASE("noisy-or worked values and algebra") {
    const std::vector<double> halves{0.5, 0.5};
    CHECK(noisy_or(halves) == doctest::Approx(0.75).epsilon(1e-15));
    const std::vector<double> single{0.3};
    CHECK(noisy_or(single) == 0.3);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> p(1 + trial % 10);
        for (auto& x : p) x = u(rng);
        const double value = noisy_or(p);
        CHECK(value >= 0.0);
        CHECK(value <= 1.0);
        CHECK(value >= *std::max_element(p.begin(), p.end()) - 1e-12);
        auto shuffled = p;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(std::abs(noisy_or(shuffled) - value) <= 1e-12);
        auto bumped = p;
        bumped[0] = std::min(1.0, bumped[0] + 0.1);
        CHECK(noisy_or(bumped) >= value - 1e-12);
    }
    const std::vector<double> zeros(4, 0.0);
    CHECK(noisy_or(zeros) == 0.0);
}

TEST_CASE("single candidate aggregates the same under both rules") {
    const auto model = small_model();
    const auto scene = bottles_scene();
    const auto cands = candidates_of(scene);
    const auto one = std::span(cands).first(1);
    const auto a = rank_noisy_or(model, one, scene, Expression("the left blue bottle"));
    const auto b = rank_max(model, one, scene, Expression("the left blue bottle"));
    REQUIRE(a.size() == 1);
    CHECK(a[0].score == b[0].score);
    CHECK(a[0].score == pair_probability(model, region_of(cands[0]), whole_image_region(scene),
                                         ids("the left blue bottle")).probability);
}

TEST_CASE("rank_from_pairs aggregates rows") {
    PairMatrix pairs;
    pairs.probability.resize(2, 2);
    pairs.probability << 0.2, 0.9, 0.5, 0.5;
    std::vector<ScoredRegion> cands(2);
    cands[0].loss = 1.0;
    cands[1].loss = 2.0;
    cands[1].proposal_index = 1;
    const auto max = rank_from_pairs(pairs, cands, Aggregation::max);
    CHECK(max[0].candidate_index == 0);
    CHECK(max[0].score == 0.9);
    const auto nor = rank_from_pairs(pairs, cands, Aggregation::noisy_or);
    CHECK(nor[0].candidate_index == 0);
    CHECK(nor[0].score == doctest::Approx(1 - 0.8 * 0.1).epsilon(1e-15));
    CHECK(nor[1].score == doctest::Approx(0.75).epsilon(1e-15));

    pairs.probability << 0.5, 0.5, 0.5, 0.5;
    const auto tied = rank_from_pairs(pairs, cands, Aggregation::noisy_or);
    CHECK(tied[0].candidate_index == 0);
}

TEST_CASE("ranking is invariant to candidate order") {
    const auto model = small_model(9);
    const auto scene = generate_scene({}, 14);
    auto cands = candidates_of(scene);
    cands.resize(std::min<std::size_t>(cands.size(), 6));
    const auto a = rank_noisy_or(model, cands, scene, Expression("the leftmost cup"));
    auto reversed = cands;
    std::reverse(reversed.begin(), reversed.end());
    const auto b = rank_noisy_or(model, reversed, scene, Expression("the leftmost cup"));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(cands[a[i].candidate_index].proposal_index == reversed[b[i].candidate_index].proposal_index);
        CHECK(a[i].score == b[i].score);
    }
    CHECK_THROWS(rank_noisy_or(model, std::vector<ScoredRegion>{}, scene, Expression("the cup")));
}

TEST_CASE("aggregation names") {
    CHECK(to_string(Aggregation::noisy_or) == "noisy-or");
    CHECK(parse_aggregation("max") == Aggregation::max);
    CHECK_THROWS(parse_aggregation("mean"));
}

TEST_CASE("spatial examples carry the sibling context") {
    const auto examples = toy_examples();
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].candidates.size() == 2);
    REQUIRE(examples[0].context);
    CHECK(*examples[0].context != examples[0].target);
    CHECK(examples[0].tokens == ids("the left blue bottle"));
}

TEST_CASE("zero margin weight ignores the negatives") {
    auto examples = toy_examples();
    TrainConfig config;
    config.epochs = 3;
    config.batch_size = 1;
    const auto a = train_spatial(small_model(), examples, config, {1.0, 0.0});
    // Appending unrelated wrong candidates only changes the negatives.
    for (auto& e : examples) {
        e.candidates.push_back(e.whole_image);
    }
    const auto b = train_spatial(small_model(), examples, config, {1.0, 0.0});
    CHECK(a.model.seq.parameters() == b.model.seq.parameters());
    CHECK(a.model.projection == b.model.projection);
    const auto c = train_spatial(small_model(), examples, config, {1.0, 1.0});
    CHECK(c.model.seq.parameters() != b.model.seq.parameters());
}

TEST_CASE("spatial training is deterministic and learns the sibling relation") {
    const auto examples = toy_examples();
    TrainConfig config;
    config.epochs = 60;
    config.batch_size = 2;
    config.learning_rate = 1e-2;
    const auto a = train_spatial(small_model(), examples, config);
    const auto b = train_spatial(small_model(), examples, config);
    CHECK(a.model.seq.parameters() == b.model.seq.parameters());
    CHECK(a.epoch_losses == b.epoch_losses);
    CHECK(a.epoch_losses.back() < a.epoch_losses.front());
    const auto& e = examples[0];
    const std::size_t wrong = 1 - e.target;
    const auto right = pair_probability(a.model, e.candidates[e.target], e.candidates[wrong], e.tokens);
    const auto swapped = pair_probability(a.model, e.candidates[wrong], e.candidates[e.target], e.tokens);
    CHECK(right.probability > swapped.probability);
}

TEST_CASE("single-candidate examples are skipped") {
    auto examples = toy_examples();
    examples[0].candidates.resize(1);
    examples[0].target = 0;
    examples[0].context.reset();
    TrainConfig config;
    config.epochs = 1;
    const auto result = train_spatial(small_model(), examples, config);
    CHECK(result.skipped == 1);
}

TEST_CASE("spatial gradient check and mutation") {
    const auto examples = toy_examples();
    TrainConfig config;
    config.epochs = 20;
    config.learning_rate = 1e-2;
    const auto trained = train_spatial(small_model(), examples, config).model;
    for (const auto& e : examples) {
        CHECK(spatial_grad_check(trained, e, 1e-5) < 1e-4);
        CHECK(spatial_grad_check(trained, e, 1e-5, 1000, 0, GradientFault::forget_gate_derivative) > 1e-2);
    }
}

TEST_CASE("spatial bundle round trip preserves scores bit exactly") {
    const auto model = small_model(21);
    const auto path = std::filesystem::temp_directory_path() / "refground_spatial_bundle.json";
    save_spatial_model(model, path);
    const auto loaded = load_spatial_model(path);
    std::filesystem::remove(path);
    CHECK(loaded.projection == model.projection);
    CHECK(loaded.seq.parameters() == model.seq.parameters());
    const auto scene = bottles_scene();
    const auto cands = candidates_of(scene);
    const auto a = rank_noisy_or(model, cands, scene, Expression("the left blue bottle"));
    const auto b = rank_noisy_or(loaded, cands, scene, Expression("the left blue bottle"));
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].score == b[i].score);
    }
    auto bundle = nlohmann::json::parse(to_json(model).dump());
    bundle["role"] = "semantic";
    CHECK_THROWS_AS(spatial_model_from_json(bundle), ModelFormatError);
}
