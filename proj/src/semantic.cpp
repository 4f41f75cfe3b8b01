#include "refground/semantic.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <tuple>

namespace refground {

bool region_order(const ScoredRegion& a, const ScoredRegion& b) {
    return std::tie(a.loss, a.box.x_min, a.box.y_min, a.proposal_index) <
           std::tie(b.loss, b.box.x_min, b.box.y_min, b.proposal_index);
}

SemanticScores score_regions(const SeqModel& model, const Featurizer& featurizer, const Scene& scene,
                             const ProposalSet& proposals, const Expression& query) {
    if (proposals.boxes.empty()) {
        throw std::invalid_argument("score_regions: proposal set is empty");
    }
    if (featurizer.dimension() != model.dims().cond_dim) {
        throw std::invalid_argument("score_regions: featurizer dimension does not match model");
    }
    const auto ids = model.vocab().encode(query.tokens());
    SemanticScores out;
    out.unknown_query = std::all_of(ids.begin(), ids.end(), [](int id) { return id == kUnk; });
    out.regions.reserve(proposals.boxes.size());
    for (std::size_t i = 0; i < proposals.boxes.size(); ++i) {
        ScoredRegion region;
        region.box = proposals.boxes[i];
        region.feature = featurizer.extract(scene, region.box);
        region.box_encoding = encode_bbox(region.box, scene.width, scene.height);
        region.loss = sequence_nll(model, region.feature, ids);
        const auto caption = generate_caption(model, region.feature, kCaptionMaxLength);
        std::string text;
        for (int id : caption) {
            if (!text.empty()) {
                text += ' ';
            }
            text += model.vocab().token(id);
        }
        region.generated_caption = Expression(std::move(text));
        region.proposal_index = i;
        out.regions.push_back(std::move(region));
    }
    std::sort(out.regions.begin(), out.regions.end(), region_order);
    return out;
}

SemanticScores score_regions(const SeqModel& model, const Scene& scene, const ProposalSet& proposals,
                             const Expression& query) {
    const AttributeFeaturizer featurizer(model.dims().cond_dim);
    return score_regions(model, featurizer, scene, proposals, query);
}

std::vector<ScoredRegion> top_k(std::span<const ScoredRegion> scored, int k) {
    if (k < 1) {
        throw std::invalid_argument("top_k: k must be >= 1");
    }
    const auto n = std::min(scored.size(), static_cast<std::size_t>(k));
    return {scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<SeqExample> build_semantic_examples(std::span<const AnnotatedScene> corpus,
                                                const Vocabulary& vocab, const Featurizer& featurizer) {
    std::vector<SeqExample> out;
    for (const auto& annotated : corpus) {
        for (const auto& grounded : annotated.expressions) {
            if (grounded.kind != ExpressionKind::semantic_only) {
                continue;
            }
            const SceneObject* target = annotated.scene.find(grounded.target_object_id);
            if (target == nullptr) {
                throw std::invalid_argument("expression target missing from scene " +
                                            annotated.scene.id);
            }
            out.push_back({featurizer.extract(annotated.scene, target->bbox),
                           vocab.encode(grounded.expression.tokens())});
        }
    }
    return out;
}

nlohmann::ordered_json semantic_bundle(const SeqModel& model) {
    nlohmann::ordered_json bundle;
    bundle["format_version"] = kModelFormatVersion;
    bundle["role"] = "semantic";
    write_seq_model(model, bundle);
    bundle["dims"]["feature_dim"] = model.dims().cond_dim;
    return bundle;
}

SeqModel semantic_model_from_json(const nlohmann::json& bundle) {
    if (!bundle.is_object() || bundle.value("role", std::string{}) != "semantic") {
        throw ModelFormatError("model bundle role is not 'semantic'");
    }
    auto model = read_seq_model(bundle);
    const auto& dims = bundle.at("dims");
    if (!dims.contains("feature_dim") || !dims["feature_dim"].is_number_integer() ||
        dims["feature_dim"].get<int>() != model.dims().cond_dim) {
        throw ModelFormatError("semantic bundle feature_dim does not match cond_dim");
    }
    return model;
}

nlohmann::json read_bundle_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ModelFormatError("cannot open model file: " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& error) {
        throw ModelFormatError(path.string() + ": " + error.what());
    }
}

void write_bundle_file(const nlohmann::ordered_json& bundle, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write model file: " + path.string());
    }
    out << bundle.dump() << '\n';
}

void save_semantic_model(const SeqModel& model, const std::filesystem::path& path) {
    write_bundle_file(semantic_bundle(model), path);
}

SeqModel load_semantic_model(const std::filesystem::path& path) {
    return semantic_model_from_json(read_bundle_file(path));
}

}  // namespace refground
