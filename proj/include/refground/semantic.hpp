#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "refground/featurizer.hpp"
#include "refground/scene.hpp"
#include "refground/seqmodel.hpp"

namespace refground {

inline constexpr int kDefaultTopK = 10;
inline constexpr int kCaptionMaxLength = 8;

struct ScoredRegion {
    BoundingBox box;
    FeatureVector feature;
    BoxEncoding box_encoding;
    double loss = 0.0;
    Expression generated_caption;
    /// Position of the region in the proposal set it was scored from.
    std::size_t proposal_index = 0;
};

struct SemanticScores {
    std::vector<ScoredRegion> regions;
    /// Every query token was outside the model vocabulary.
    bool unknown_query = false;
};

/// Ascending by loss; ties by box x_min, then y_min, then proposal index.
bool region_order(const ScoredRegion& a, const ScoredRegion& b);

SemanticScores score_regions(const SeqModel& model, const Featurizer& featurizer, const Scene& scene,
                             const ProposalSet& proposals, const Expression& query);
SemanticScores score_regions(const SeqModel& model, const Scene& scene, const ProposalSet& proposals,
                             const Expression& query);

std::vector<ScoredRegion> top_k(std::span<const ScoredRegion> scored, int k = kDefaultTopK);

/// Training pairs (target feature, token ids) from the semantic_only expressions.
std::vector<SeqExample> build_semantic_examples(std::span<const AnnotatedScene> corpus,
                                                const Vocabulary& vocab, const Featurizer& featurizer);

// Model bundle with role "semantic".
nlohmann::ordered_json semantic_bundle(const SeqModel& model);
SeqModel semantic_model_from_json(const nlohmann::json& bundle);
void save_semantic_model(const SeqModel& model, const std::filesystem::path& path);
SeqModel load_semantic_model(const std::filesystem::path& path);

/// Reads a JSON document, raising ModelFormatError on unreadable or malformed files.
nlohmann::json read_bundle_file(const std::filesystem::path& path);
void write_bundle_file(const nlohmann::ordered_json& bundle, const std::filesystem::path& path);

}  // namespace refground
