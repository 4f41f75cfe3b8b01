#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "refground/pipeline.hpp"
#include "refground/scene.hpp"

namespace refground {

using BoxPair = std::pair<BoundingBox, BoundingBox>;

/// Fraction of (predicted, ground truth) pairs with IoU strictly above threshold.
double prec_at_1(std::span<const BoxPair> results, double threshold = 0.5);

struct Partition {
    std::string name;
    std::vector<AnnotatedScene> scenes;
};

/// val as given; the test scenes are split into test_a (three or more
/// objects of one category) and test_b (the rest).
std::vector<Partition> make_partitions(std::vector<AnnotatedScene> val,
                                       std::vector<AnnotatedScene> test);

/// Anything that maps (scene, proposals, query) to a top-1 box per aggregation.
class GroundingPredictor {
public:
    virtual ~GroundingPredictor() = default;
    /// One box per entry of `aggregations`, in the same order.
    virtual std::vector<BoundingBox> predict(const Scene& scene, const ProposalSet& proposals,
                                             const Expression& query,
                                             std::span<const Aggregation> aggregations) const = 0;
};

/// Runs the engine once per query and re-aggregates the shared pair matrix.
class EnginePredictor final : public GroundingPredictor {
public:
    explicit EnginePredictor(const GroundingEngine& engine) : engine_(engine) {}
    std::vector<BoundingBox> predict(const Scene& scene, const ProposalSet& proposals,
                                     const Expression& query,
                                     std::span<const Aggregation> aggregations) const override;

private:
    const GroundingEngine& engine_;
};

struct KindTally {
    std::size_t evaluated = 0;
    std::size_t correct = 0;
    double prec_at_1() const { return evaluated == 0 ? 0.0 : double(correct) / double(evaluated); }
};

struct BenchmarkCell {
    std::string partition;
    ProposalMode mode = ProposalMode::ground_truth;
    Aggregation aggregation = Aggregation::noisy_or;
    KindTally all;
    KindTally semantic_only;
    KindTally spatio_semantic;
    std::size_t failures = 0;
};

struct PartitionSummary {
    std::string name;
    std::size_t scenes = 0;
    std::size_t expressions = 0;
    std::size_t pruned = 0;
};

struct RuntimeStats {
    std::size_t queries = 0;
    double total_seconds = 0.0;
    double mean_ms = 0.0;
    double max_ms = 0.0;
};

struct BenchmarkReport {
    std::vector<PartitionSummary> partitions;
    std::vector<BenchmarkCell> cells;
    RuntimeStats runtime;

    const BenchmarkCell* find(std::string_view partition, ProposalMode mode,
                              Aggregation aggregation) const;
};

struct BenchmarkConfig {
    std::vector<ProposalMode> modes{ProposalMode::ground_truth, ProposalMode::degraded};
    std::vector<Aggregation> aggregations{Aggregation::noisy_or, Aggregation::max};
    double threshold = 0.5;
    std::uint64_t proposal_seed = 0;
    const NounLexicon* lexicon = nullptr;
};

/// Seed of the degraded proposals of a scene, stable across runs and platforms.
std::uint64_t proposal_seed(std::uint64_t base, std::string_view scene_id);

BenchmarkReport run_benchmark(const GroundingPredictor& predictor,
                              std::span<const Partition> partitions,
                              const BenchmarkConfig& config = {});

/// Runtime statistics are wall-clock dependent and only emitted on request.
nlohmann::ordered_json to_json(const BenchmarkReport& report, bool include_runtime = false);

/// Aligned table: one row per (aggregation, proposal mode), one column per partition.
std::string format_table(const BenchmarkReport& report);

}  // namespace refground
