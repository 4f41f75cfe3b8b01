#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "refground/featurizer.hpp"
#include "refground/scene.hpp"
#include "refground/semantic.hpp"
#include "refground/seqmodel.hpp"

namespace refground {

inline constexpr int kDefaultReducedDim = 32;

constexpr int pair_input_dim(int reduced_dim) { return 2 * (reduced_dim + 5); }

/// Pairwise scorer: a learned projection of region features followed by a
/// sequence model conditioned on [P f_t, b_t, P f_c, b_c].
struct SpatialModel {
    Eigen::MatrixXd projection;  // reduced_dim x feature_dim
    SeqModel seq;

    int feature_dim() const { return static_cast<int>(projection.cols()); }
    int reduced_dim() const { return static_cast<int>(projection.rows()); }

    Eigen::VectorXd pair_input(const RegionFeatures& target, const RegionFeatures& context) const;
};

struct SpatialDims {
    int feature_dim = kDefaultFeatureDim;
    int reduced_dim = kDefaultReducedDim;
    int embed_dim = 32;
    int hidden_dim = 64;
};

SpatialModel init_spatial_model(Vocabulary vocab, const SpatialDims& dims, std::uint64_t seed);

RegionFeatures region_of(const ScoredRegion& region);

/// Sentinel context index for the whole-image pseudo-region.
inline constexpr std::size_t kWholeImage = std::numeric_limits<std::size_t>::max();

struct PairScore {
    std::size_t target_index = 0;
    std::size_t context_index = kWholeImage;
    double nll = 0.0;
    double probability = 0.0;
};

/// exp(-nll / (token_count + 1)).
double length_normalized_probability(double nll, std::size_t token_count);

PairScore pair_probability(const SpatialModel& model, const RegionFeatures& target,
                           const RegionFeatures& context, std::span<const int> query_ids);

/// k x k matrix; entry (t, c) scores target t against peer c, the diagonal
/// holds the whole-image context of each target.
struct PairMatrix {
    Eigen::MatrixXd probability;
    Eigen::MatrixXd nll;
    std::size_t evaluations = 0;
};

PairMatrix score_pairs(const SpatialModel& model, std::span<const RegionFeatures> candidates,
                       const RegionFeatures& whole_image, std::span<const int> query_ids);

double noisy_or(std::span<const double> probabilities);

enum class Aggregation { noisy_or, max };

std::string_view to_string(Aggregation aggregation);
Aggregation parse_aggregation(std::string_view text);

struct RankedCandidate {
    std::size_t candidate_index = 0;
    double score = 0.0;
};

/// Aggregates each row of the pair matrix; descending score, ties by the
/// stage-one region order of the candidates.
std::vector<RankedCandidate> rank_from_pairs(const PairMatrix& pairs,
                                             std::span<const ScoredRegion> candidates,
                                             Aggregation aggregation);

std::vector<RankedCandidate> rank_noisy_or(const SpatialModel& model,
                                           std::span<const ScoredRegion> candidates,
                                           const Scene& scene, const Expression& query);
std::vector<RankedCandidate> rank_max(const SpatialModel& model,
                                      std::span<const ScoredRegion> candidates, const Scene& scene,
                                      const Expression& query);

struct SpatialExample {
    std::vector<RegionFeatures> candidates;
    RegionFeatures whole_image;
    std::size_t target = 0;
    /// Ground-truth relation context among the candidates, if the corpus has one.
    std::optional<std::size_t> context;
    std::vector<int> tokens;
};

/// Candidates are the scene objects matching the target's appearance terms
/// (every object when that set is a singleton), plus the relation context.
/// The context of "left"/"right" between two look-alikes is the other one.
std::vector<SpatialExample> build_spatial_examples(std::span<const AnnotatedScene> corpus,
                                                   const Vocabulary& vocab,
                                                   const Featurizer& featurizer,
                                                   const ExpressionConfig& config = {});

struct MarginConfig {
    double margin = 1.0;
    double weight = 1.0;
};

struct SpatialTrainResult {
    SpatialModel model;
    std::vector<double> epoch_losses;
    std::size_t skipped = 0;
};

SpatialTrainResult train_spatial(SpatialModel model, std::span<const SpatialExample> dataset,
                                 const TrainConfig& config, const MarginConfig& margin = {});

/// Gradient check over the flat [sequence parameters, projection] vector of
/// the positive-pair loss.
double spatial_grad_check(const SpatialModel& model, const SpatialExample& example, double epsilon,
                          std::size_t samples = 200, std::uint64_t seed = 0,
                          GradientFault fault = GradientFault::none);

// Model bundles.
nlohmann::ordered_json to_json(const SpatialModel& model);
SpatialModel spatial_model_from_json(const nlohmann::json& bundle);
void save_spatial_model(const SpatialModel& model, const std::filesystem::path& path);
SpatialModel load_spatial_model(const std::filesystem::path& path);

}  // namespace refground
