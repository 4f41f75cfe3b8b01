#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "refground/cluster.hpp"
#include "refground/featurizer.hpp"
#include "refground/scene.hpp"
#include "refground/semantic.hpp"
#include "refground/spatial.hpp"

namespace refground {

struct EngineConfig {
    int k = kDefaultTopK;
    Aggregation aggregation = Aggregation::noisy_or;
};

class GroundingError : public std::runtime_error {
public:
    GroundingError(std::string stage, const std::string& message)
        : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct RankedBox {
    BoundingBox box;
    double score = 0.0;
    /// Index into GroundingDiagnostics::regions.
    std::size_t region_index = 0;
};

struct GroundingDiagnostics {
    /// Every proposal, in stage-one order (ascending loss).
    std::vector<ScoredRegion> regions;
    /// One point per top-k region; region_index refers to `regions`.
    std::vector<RelevancePoint> relevance;
    /// Ascending indices into `regions`; the spatial stage saw exactly these.
    std::vector<std::size_t> relevant;
    /// Row/column i is relevant[i]; the diagonal holds the whole-image context.
    PairMatrix pairs;
    bool unknown_query = false;
};

struct GroundingResult {
    Expression query;
    Aggregation aggregation = Aggregation::noisy_or;
    std::vector<RankedBox> ranked;
    GroundingDiagnostics diagnostics;
};

/// Immutable after construction; ground() may run concurrently.
class GroundingEngine {
public:
    GroundingEngine(SeqModel semantic, SpatialModel spatial,
                    std::shared_ptr<const Featurizer> featurizer = nullptr, EngineConfig config = {},
                    SynonymTable synonyms = default_synonyms());

    /// Loads semantic.json and spatial.json from a models directory.
    static GroundingEngine load(const std::filesystem::path& models_dir, EngineConfig config = {},
                                SynonymTable synonyms = default_synonyms());

    const SeqModel& semantic() const { return semantic_; }
    const SpatialModel& spatial() const { return spatial_; }
    const Featurizer& featurizer() const { return *featurizer_; }
    const EngineConfig& config() const { return config_; }

    GroundingResult ground(const Scene& scene, const ProposalSet& proposals,
                           std::string_view query_text) const;
    GroundingResult ground(const Scene& scene, const ProposalSet& proposals,
                           std::string_view query_text, Aggregation aggregation) const;

private:
    SeqModel semantic_;
    SpatialModel spatial_;
    std::shared_ptr<const Featurizer> featurizer_;
    EngineConfig config_;
    SynonymTable synonyms_;
};

/// Same stage outputs, ranked with another aggregation.
GroundingResult reaggregate(const GroundingResult& result, Aggregation aggregation);

/// Rank position of the first entry not yet rejected; nullopt when exhausted.
std::optional<std::size_t> next_candidate(const GroundingResult& result,
                                          const std::set<std::size_t>& rejected);

enum class CommandAction { pick_up, put_it };

std::string_view to_string(CommandAction action);

struct Command {
    CommandAction action = CommandAction::pick_up;
    std::string expression_text;
};

class UnknownActionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Command parse_command(std::string_view text);

nlohmann::ordered_json to_json(const BoundingBox& box);
nlohmann::ordered_json to_json(const GroundingResult& result, bool include_diagnostics = true);

}  // namespace refground
