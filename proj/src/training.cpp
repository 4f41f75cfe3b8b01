#include "refground/training.hpp"

#include "refground/semantic.hpp"

namespace refground {

TrainConfig default_semantic_config() {
    TrainConfig config;
    config.learning_rate = 3e-3;
    config.epochs = 10;
    config.batch_size = 32;
    config.seed = 1;
    return config;
}

TrainConfig default_spatial_config() {
    TrainConfig config;
    config.learning_rate = 3e-3;
    config.epochs = 30;
    config.batch_size = 32;
    config.seed = 2;
    return config;
}

Vocabulary corpus_vocabulary(std::span<const AnnotatedScene> corpus, int min_count) {
    std::vector<Expression> expressions;
    for (const auto& annotated : corpus) {
        for (const auto& grounded : annotated.expressions) {
            expressions.push_back(grounded.expression);
        }
    }
    return build_vocab(expressions, min_count);
}

SemanticTraining train_semantic_stage(std::span<const AnnotatedScene> corpus,
                                      const TrainConfig& config, const ModelOptions& options) {
    auto vocab = corpus_vocabulary(corpus, options.min_count);
    const AttributeFeaturizer featurizer(options.feature_dim);
    const auto examples = build_semantic_examples(corpus, vocab, featurizer);
    if (examples.empty()) {
        throw std::invalid_argument("corpus has no semantic_only expressions");
    }
    auto model = init_model(std::move(vocab),
                            SeqDims{0, options.embed_dim, options.hidden_dim, options.feature_dim},
                            options.init_seed);
    auto result = train(std::move(model), examples, config);
    return {std::move(result.model), std::move(result.epoch_losses), examples.size()};
}

SpatialTraining train_spatial_stage(std::span<const AnnotatedScene> corpus,
                                    const TrainConfig& config, const MarginConfig& margin,
                                    const ModelOptions& options) {
    auto vocab = corpus_vocabulary(corpus, options.min_count);
    const AttributeFeaturizer featurizer(options.feature_dim);
    const auto examples = build_spatial_examples(corpus, vocab, featurizer);
    auto model = init_spatial_model(std::move(vocab),
                                    SpatialDims{options.feature_dim, options.reduced_dim,
                                                options.embed_dim, options.hidden_dim},
                                    mix_seed(options.init_seed, 2));
    auto result = train_spatial(std::move(model), examples, config, margin);
    return {std::move(result.model), std::move(result.epoch_losses), examples.size(), result.skipped};
}

}  // namespace refground
