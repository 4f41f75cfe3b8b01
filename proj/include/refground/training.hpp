#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "refground/scene.hpp"
#include "refground/seqmodel.hpp"
#include "refground/spatial.hpp"

namespace refground {

struct ModelOptions {
    int embed_dim = 32;
    int hidden_dim = 64;
    int feature_dim = kDefaultFeatureDim;
    int reduced_dim = kDefaultReducedDim;
    int min_count = 1;
    std::uint64_t init_seed = 11;
};

/// Shipped defaults of the semantic stage.
TrainConfig default_semantic_config();
/// Shipped defaults of the spatial stage.
TrainConfig default_spatial_config();

/// Vocabulary over every expression of the corpus, so both stages agree.
Vocabulary corpus_vocabulary(std::span<const AnnotatedScene> corpus, int min_count = 1);

struct SemanticTraining {
    SeqModel model;
    std::vector<double> epoch_losses;
    std::size_t examples = 0;
};

SemanticTraining train_semantic_stage(std::span<const AnnotatedScene> corpus,
                                      const TrainConfig& config, const ModelOptions& options = {});

struct SpatialTraining {
    SpatialModel model;
    std::vector<double> epoch_losses;
    std::size_t examples = 0;
    std::size_t skipped = 0;
};

SpatialTraining train_spatial_stage(std::span<const AnnotatedScene> corpus,
                                    const TrainConfig& config, const MarginConfig& margin = {},
                                    const ModelOptions& options = {});

}  // namespace refground
