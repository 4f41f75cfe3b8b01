#include "refground/pipeline.hpp"

#include <algorithm>
#include <cctype>

namespace refground {

GroundingEngine::GroundingEngine(SeqModel semantic, SpatialModel spatial,
                                 std::shared_ptr<const Featurizer> featurizer, EngineConfig config,
                                 SynonymTable synonyms)
    : semantic_(std::move(semantic)),
      spatial_(std::move(spatial)),
      featurizer_(std::move(featurizer)),
      config_(config),
      synonyms_(std::move(synonyms)) {
    if (!featurizer_) {
        featurizer_ = std::make_shared<AttributeFeaturizer>(semantic_.dims().cond_dim);
    }
    if (!(semantic_.vocab() == spatial_.seq.vocab())) {
        throw std::invalid_argument("semantic and spatial models use different vocabularies");
    }
    if (semantic_.dims().cond_dim != featurizer_->dimension() ||
        spatial_.feature_dim() != featurizer_->dimension()) {
        throw std::invalid_argument("model feature dimensions disagree with the featurizer");
    }
    if (config_.k < 1 || config_.k > kDefaultTopK) {
        throw std::invalid_argument("engine k must lie in [1, 10]");
    }
}

GroundingEngine GroundingEngine::load(const std::filesystem::path& models_dir, EngineConfig config,
                                      SynonymTable synonyms) {
    return GroundingEngine(load_semantic_model(models_dir / "semantic.json"),
                           load_spatial_model(models_dir / "spatial.json"), nullptr, config,
                           std::move(synonyms));
}

GroundingResult GroundingEngine::ground(const Scene& scene, const ProposalSet& proposals,
                                        std::string_view query_text) const {
    return ground(scene, proposals, query_text, config_.aggregation);
}

GroundingResult GroundingEngine::ground(const Scene& scene, const ProposalSet& proposals,
                                        std::string_view query_text,
                                        Aggregation aggregation) const {
    GroundingResult result;
    result.query = Expression(std::string(query_text));
    result.aggregation = aggregation;
    if (!result.query.has_content()) {
        throw GroundingError("query", "query is empty after tokenization");
    }
    auto& diag = result.diagnostics;
    try {
        auto scores = score_regions(semantic_, *featurizer_, scene, proposals, result.query);
        diag.regions = std::move(scores.regions);
        diag.unknown_query = scores.unknown_query;
    } catch (const std::exception& error) {
        throw GroundingError("semantic", error.what());
    }

    const auto top = top_k(diag.regions, config_.k);
    try {
        diag.relevance = normalize_metrics(top, result.query, synonyms_);
        diag.relevant = relevancy_cluster(diag.relevance);
    } catch (const std::exception& error) {
        throw GroundingError("cluster", error.what());
    }

    try {
        std::vector<RegionFeatures> candidates;
        for (auto index : diag.relevant) {
            candidates.push_back(region_of(diag.regions[index]));
        }
        const auto whole = whole_image_region(*featurizer_, scene);
        const auto ids = spatial_.seq.vocab().encode(result.query.tokens());
        diag.pairs = score_pairs(spatial_, candidates, whole, ids);
    } catch (const std::exception& error) {
        throw GroundingError("spatial", error.what());
    }
    return reaggregate(result, aggregation);
}

GroundingResult reaggregate(const GroundingResult& result, Aggregation aggregation) {
    GroundingResult out = result;
    out.aggregation = aggregation;
    out.ranked.clear();
    const auto& diag = result.diagnostics;
    std::vector<ScoredRegion> candidates;
    for (auto index : diag.relevant) {
        candidates.push_back(diag.regions[index]);
    }
    for (const auto& entry : rank_from_pairs(diag.pairs, candidates, aggregation)) {
        const auto region_index = diag.relevant[entry.candidate_index];
        out.ranked.push_back({diag.regions[region_index].box, entry.score, region_index});
    }
    return out;
}

std::optional<std::size_t> next_candidate(const GroundingResult& result,
                                          const std::set<std::size_t>& rejected) {
    for (std::size_t i = 0; i < result.ranked.size(); ++i) {
        if (!rejected.contains(i)) {
            return i;
        }
    }
    return std::nullopt;
}

std::string_view to_string(CommandAction action) {
    return action == CommandAction::pick_up ? "pick_up" : "put_it";
}

Command parse_command(std::string_view text) {
    std::vector<std::string> words;
    std::vector<std::size_t> ends;
    std::size_t i = 0;
    while (i < text.size() && words.size() < 2) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::string word;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
            ++i;
        }
        if (word.empty()) {
            break;
        }
        words.push_back(word);
        ends.push_back(i);
    }
    Command command;
    if (words.size() == 2 && words[0] == "pick" && words[1] == "up") {
        command.action = CommandAction::pick_up;
    } else if (words.size() == 2 && words[0] == "put" && words[1] == "it") {
        command.action = CommandAction::put_it;
    } else {
        throw UnknownActionError("unknown action in '" + std::string(text) +
                                 "'; supported actions: pick up, put it");
    }
    std::string_view rest = text.substr(ends[1]);
    const auto first = rest.find_first_not_of(" \t\r\n");
    const auto last = rest.find_last_not_of(" \t\r\n");
    command.expression_text = first == std::string_view::npos
                                  ? std::string{}
                                  : std::string(rest.substr(first, last - first + 1));
    return command;
}

nlohmann::ordered_json to_json(const BoundingBox& box) {
    return nlohmann::ordered_json::array({box.x_min, box.y_min, box.x_max, box.y_max});
}

nlohmann::ordered_json to_json(const GroundingResult& result, bool include_diagnostics) {
    nlohmann::ordered_json out;
    out["query"] = result.query.raw();
    out["aggregation"] = to_string(result.aggregation);
    auto ranked = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < result.ranked.size(); ++r) {
        const auto& entry = result.ranked[r];
        nlohmann::ordered_json item;
        item["rank"] = r + 1;
        item["box"] = to_json(entry.box);
        item["score"] = entry.score;
        item["region"] = entry.region_index;
        ranked.push_back(std::move(item));
    }
    out["ranked"] = std::move(ranked);
    if (!include_diagnostics) {
        return out;
    }
    const auto& diag = result.diagnostics;
    nlohmann::ordered_json d;
    d["unknown_query"] = diag.unknown_query;
    auto regions = nlohmann::ordered_json::array();
    for (const auto& region : diag.regions) {
        nlohmann::ordered_json item;
        item["box"] = to_json(region.box);
        item["proposal"] = region.proposal_index;
        item["loss"] = region.loss;
        item["caption"] = region.generated_caption.raw();
        regions.push_back(std::move(item));
    }
    d["regions"] = std::move(regions);
    auto points = nlohmann::ordered_json::array();
    for (const auto& point : diag.relevance) {
        points.push_back({{"region", point.region_index}, {"m_loss", point.m_loss}, {"m_gen", point.m_gen}});
    }
    d["relevance"] = std::move(points);
    d["relevant"] = diag.relevant;
    auto matrix = nlohmann::ordered_json::array();
    for (Eigen::Index t = 0; t < diag.pairs.probability.rows(); ++t) {
        auto row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < diag.pairs.probability.cols(); ++c) {
            row.push_back(diag.pairs.probability(t, c));
        }
        matrix.push_back(std::move(row));
    }
    d["pair_probabilities"] = std::move(matrix);
    out["diagnostics"] = std::move(d);
    return out;
}

}  // namespace refground
