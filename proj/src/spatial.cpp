#include "refground/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace refground {

Eigen::VectorXd SpatialModel::pair_input(const RegionFeatures& target,
                                         const RegionFeatures& context) const {
    const Eigen::Index r = projection.rows();
    if (target.feature.size() != projection.cols() || context.feature.size() != projection.cols()) {
        throw std::invalid_argument("pair_input: feature dimension mismatch");
    }
    Eigen::VectorXd input(pair_input_dim(static_cast<int>(r)));
    input.head(r).noalias() = projection * target.feature;
    input.segment<5>(r) = target.box;
    input.segment(r + 5, r).noalias() = projection * context.feature;
    input.tail<5>() = context.box;
    return input;
}

SpatialModel init_spatial_model(Vocabulary vocab, const SpatialDims& dims, std::uint64_t seed) {
    if (dims.feature_dim < 1 || dims.reduced_dim < 1) {
        throw std::invalid_argument("spatial model dimensions must be positive");
    }
    SpatialModel model;
    model.seq = init_model(std::move(vocab),
                           SeqDims{0, dims.embed_dim, dims.hidden_dim, pair_input_dim(dims.reduced_dim)},
                           seed);
    model.projection.resize(dims.reduced_dim, dims.feature_dim);
    std::mt19937_64 rng(mix_seed(seed, 1));
    const double s = 1.0 / std::sqrt(static_cast<double>(dims.feature_dim));
    std::uniform_real_distribution<double> dist(-s, s);
    for (Eigen::Index c = 0; c < model.projection.cols(); ++c) {
        for (Eigen::Index r = 0; r < model.projection.rows(); ++r) {
            model.projection(r, c) = dist(rng);
        }
    }
    return model;
}

RegionFeatures region_of(const ScoredRegion& region) {
    return {region.feature, region.box_encoding};
}

double length_normalized_probability(double nll, std::size_t token_count) {
    return std::exp(-nll / static_cast<double>(token_count + 1));
}

PairScore pair_probability(const SpatialModel& model, const RegionFeatures& target,
                           const RegionFeatures& context, std::span<const int> query_ids) {
    PairScore score;
    score.nll = sequence_nll(model.seq, model.pair_input(target, context), query_ids);
    score.probability = length_normalized_probability(score.nll, query_ids.size());
    return score;
}

PairMatrix score_pairs(const SpatialModel& model, std::span<const RegionFeatures> candidates,
                       const RegionFeatures& whole_image, std::span<const int> query_ids) {
    const auto k = static_cast<Eigen::Index>(candidates.size());
    if (k == 0) {
        throw std::invalid_argument("spatial ranking needs at least one candidate");
    }
    PairMatrix out;
    out.probability.resize(k, k);
    out.nll.resize(k, k);
    for (Eigen::Index t = 0; t < k; ++t) {
        for (Eigen::Index c = 0; c < k; ++c) {
            const auto& context = t == c ? whole_image : candidates[static_cast<std::size_t>(c)];
            const auto score =
                pair_probability(model, candidates[static_cast<std::size_t>(t)], context, query_ids);
            out.nll(t, c) = score.nll;
            out.probability(t, c) = score.probability;
            ++out.evaluations;
        }
    }
    return out;
}

double noisy_or(std::span<const double> probabilities) {
    if (probabilities.size() == 1) {
        return probabilities[0];
    }
    // Fixed multiplication order keeps the result independent of input order.
    std::vector<double> sorted(probabilities.begin(), probabilities.end());
    std::sort(sorted.begin(), sorted.end());
    double complement = 1.0;
    for (double p : sorted) {
        complement *= 1.0 - p;
    }
    return 1.0 - complement;
}

std::string_view to_string(Aggregation aggregation) {
    return aggregation == Aggregation::noisy_or ? "noisy-or" : "max";
}

Aggregation parse_aggregation(std::string_view text) {
    if (text == "noisy-or" || text == "noisy_or") {
        return Aggregation::noisy_or;
    }
    if (text == "max") {
        return Aggregation::max;
    }
    throw std::invalid_argument("unknown aggregation '" + std::string(text) +
                                "' (expected noisy-or or max)");
}

std::vector<RankedCandidate> rank_from_pairs(const PairMatrix& pairs,
                                             std::span<const ScoredRegion> candidates,
                                             Aggregation aggregation) {
    const auto k = static_cast<Eigen::Index>(candidates.size());
    if (pairs.probability.rows() != k || pairs.probability.cols() != k) {
        throw std::invalid_argument("pair matrix does not match candidate count");
    }
    std::vector<RankedCandidate> ranked;
    std::vector<double> row(static_cast<std::size_t>(k));
    for (Eigen::Index t = 0; t < k; ++t) {
        Eigen::Map<Eigen::VectorXd>(row.data(), k) = pairs.probability.row(t).transpose();
        const double score = aggregation == Aggregation::noisy_or
                                 ? noisy_or(row)
                                 : *std::max_element(row.begin(), row.end());
        ranked.push_back({static_cast<std::size_t>(t), score});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return region_order(candidates[a.candidate_index], candidates[b.candidate_index]);
    });
    return ranked;
}

namespace {

std::vector<RankedCandidate> rank(const SpatialModel& model, std::span<const ScoredRegion> candidates,
                                  const Scene& scene, const Expression& query,
                                  Aggregation aggregation) {
    if (candidates.empty()) {
        throw std::invalid_argument("spatial ranking needs at least one candidate");
    }
    std::vector<RegionFeatures> regions;
    for (const auto& c : candidates) {
        regions.push_back(region_of(c));
    }
    const AttributeFeaturizer featurizer(model.feature_dim());
    const auto whole = whole_image_region(featurizer, scene);
    const auto ids = model.seq.vocab().encode(query.tokens());
    return rank_from_pairs(score_pairs(model, regions, whole, ids), candidates, aggregation);
}

}  // namespace

std::vector<RankedCandidate> rank_noisy_or(const SpatialModel& model,
                                           std::span<const ScoredRegion> candidates,
                                           const Scene& scene, const Expression& query) {
    return rank(model, candidates, scene, query, Aggregation::noisy_or);
}

std::vector<RankedCandidate> rank_max(const SpatialModel& model,
                                      std::span<const ScoredRegion> candidates, const Scene& scene,
                                      const Expression& query) {
    return rank(model, candidates, scene, query, Aggregation::max);
}

std::vector<SpatialExample> build_spatial_examples(std::span<const AnnotatedScene> corpus,
                                                   const Vocabulary& vocab,
                                                   const Featurizer& featurizer,
                                                   const ExpressionConfig& config) {
    std::vector<SpatialExample> out;
    for (const auto& annotated : corpus) {
        const Scene& scene = annotated.scene;
        const auto whole = whole_image_region(featurizer, scene);
        for (const auto& grounded : annotated.expressions) {
            const auto parsed = parse_expression(grounded.expression.tokens());
            if (!parsed) {
                continue;
            }
            std::vector<const SceneObject*> members;
            for (const auto& object : scene.objects) {
                if (parsed->target.matches(object)) {
                    members.push_back(&object);
                }
            }
            if (members.size() <= 1) {
                members.clear();
                for (const auto& object : scene.objects) {
                    members.push_back(&object);
                }
            }
            std::optional<std::string> context_id;
            if (parsed->relation == Relation::left || parsed->relation == Relation::right) {
                for (const auto* m : members) {
                    if (m->id != grounded.target_object_id && members.size() == 2) {
                        context_id = m->id;
                    }
                }
            } else if (parsed->context) {
                context_id = resolve_expression(scene, grounded.expression, config).context_id;
            }
            if (context_id) {
                const bool present = std::any_of(members.begin(), members.end(),
                                                 [&](const auto* m) { return m->id == *context_id; });
                if (!present) {
                    members.push_back(scene.find(*context_id));
                }
            }

            SpatialExample example;
            example.whole_image = whole;
            example.tokens = vocab.encode(grounded.expression.tokens());
            bool has_target = false;
            for (std::size_t i = 0; i < members.size(); ++i) {
                example.candidates.push_back(
                    {featurizer.extract(scene, members[i]->bbox),
                     encode_bbox(members[i]->bbox, scene.width, scene.height)});
                if (members[i]->id == grounded.target_object_id) {
                    example.target = i;
                    has_target = true;
                }
                if (context_id && members[i]->id == *context_id) {
                    example.context = i;
                }
            }
            if (!has_target) {
                throw std::invalid_argument("expression target missing from scene " + scene.id);
            }
            out.push_back(std::move(example));
        }
    }
    return out;
}

namespace {

/// Flat [sequence parameters, projection] vector used by the optimizer.
Eigen::VectorXd flatten(const SpatialModel& model) {
    const Eigen::Index n = model.seq.parameters().size();
    Eigen::VectorXd flat(n + model.projection.size());
    flat.head(n) = model.seq.parameters();
    flat.tail(model.projection.size()) =
        Eigen::Map<const Eigen::VectorXd>(model.projection.data(), model.projection.size());
    return flat;
}

void unflatten(const Eigen::VectorXd& flat, SpatialModel& model) {
    const Eigen::Index n = model.seq.parameters().size();
    model.seq.parameters() = flat.head(n);
    Eigen::Map<Eigen::VectorXd>(model.projection.data(), model.projection.size()) =
        flat.tail(model.projection.size());
}

const RegionFeatures& context_region(const SpatialExample& example, std::size_t target) {
    if (example.context && *example.context != target) {
        return example.candidates[*example.context];
    }
    return example.whole_image;
}

/// Loss gradient of one pair with respect to the flat parameter vector.
double accumulate_pair(const SpatialModel& model, const RegionFeatures& target,
                       const RegionFeatures& context, std::span<const int> tokens, double scale,
                       Eigen::VectorXd& seq_grad, Eigen::VectorXd& flat_grad,
                       GradientFault fault = GradientFault::none) {
    const Eigen::Index r = model.projection.rows();
    Eigen::VectorXd cond_grad = Eigen::VectorXd::Zero(pair_input_dim(static_cast<int>(r)));
    seq_grad.setZero();
    const double nll = sequence_nll_gradient(model.seq, model.pair_input(target, context), tokens,
                                             seq_grad, &cond_grad, scale, fault);
    const Eigen::Index n = seq_grad.size();
    flat_grad.head(n) += seq_grad;
    Eigen::Map<Eigen::MatrixXd> dproj(flat_grad.data() + n, r, model.projection.cols());
    dproj.noalias() += cond_grad.head(r) * target.feature.transpose();
    dproj.noalias() += cond_grad.segment(r + 5, r) * context.feature.transpose();
    return nll;
}

}  // namespace

SpatialTrainResult train_spatial(SpatialModel model, std::span<const SpatialExample> dataset,
                                 const TrainConfig& config, const MarginConfig& margin) {
    std::vector<const SpatialExample*> usable;
    std::size_t skipped = 0;
    for (const auto& example : dataset) {
        if (example.target >= example.candidates.size()) {
            throw std::invalid_argument("train_spatial: true target is not among the candidates");
        }
        if (example.candidates.size() < 2) {
            ++skipped;
            continue;
        }
        detail::check_sequence_inputs(model.seq, model.seq.dims().cond_dim, example.tokens);
        usable.push_back(&example);
    }
    if (usable.empty()) {
        throw std::invalid_argument("train_spatial: no example has a valid negative");
    }

    Eigen::VectorXd flat = flatten(model);
    const Eigen::Index seq_size = model.seq.parameters().size();
    const SpatialModel& view = model;
    auto losses = run_training(
        flat, usable.size(), config,
        [&](std::size_t index, int epoch, Eigen::VectorXd& grad) {
            const SpatialExample& ex = *usable[index];
            std::mt19937_64 rng(mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)), index));
            std::uniform_int_distribution<std::size_t> pick(0, ex.candidates.size() - 2);
            std::size_t negative = pick(rng);
            if (negative >= ex.target) {
                ++negative;
            }
            const auto& positive_context = context_region(ex, ex.target);
            const auto& negative_context =
                ex.context && *ex.context == negative ? ex.whole_image : positive_context;

            const auto pos_in = view.pair_input(ex.candidates[ex.target], positive_context);
            const double pos = sequence_nll(view.seq, pos_in, ex.tokens);
            double loss = pos;
            double pos_scale = 1.0;
            double neg = 0.0;
            bool active = false;
            if (margin.weight > 0.0) {
                neg = sequence_nll(view.seq, view.pair_input(ex.candidates[negative], negative_context),
                                   ex.tokens);
                const double hinge = margin.margin - (neg - pos);
                if (hinge > 0.0) {
                    active = true;
                    loss += margin.weight * hinge;
                    pos_scale += margin.weight;
                }
            }
            Eigen::VectorXd seq_grad(seq_size);
            accumulate_pair(view, ex.candidates[ex.target], positive_context, ex.tokens, pos_scale,
                            seq_grad, grad);
            if (active) {
                accumulate_pair(view, ex.candidates[negative], negative_context, ex.tokens,
                                -margin.weight, seq_grad, grad);
            }
            return loss;
        },
        [&] { unflatten(flat, model); });
    return {std::move(model), std::move(losses), skipped};
}

double spatial_grad_check(const SpatialModel& model, const SpatialExample& example, double epsilon,
                          std::size_t samples, std::uint64_t seed, GradientFault fault) {
    if (example.target >= example.candidates.size()) {
        throw std::invalid_argument("spatial_grad_check: target index out of range");
    }
    const auto& target = example.candidates[example.target];
    const auto& context = context_region(example, example.target);
    const Eigen::VectorXd flat = flatten(model);
    Eigen::VectorXd analytic = Eigen::VectorXd::Zero(flat.size());
    Eigen::VectorXd seq_grad(model.seq.parameters().size());
    accumulate_pair(model, target, context, example.tokens, 1.0, seq_grad, analytic, fault);
    using ExtendedMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    auto seq = model.seq.cast<long double>();
    const Eigen::Index n = seq.parameters().size();
    const Eigen::Index r = model.projection.rows();
    const Eigen::Index f = model.projection.cols();
    const ExtendedVector target_feature = target.feature.cast<long double>();
    const ExtendedVector context_feature = context.feature.cast<long double>();
    ExtendedVector input(pair_input_dim(static_cast<int>(r)));
    input.segment(r, 5) = target.box.cast<long double>();
    input.tail(5) = context.box.cast<long double>();
    return finite_difference_check(
        flat,
        [&](const ExtendedVector& p) {
            seq.parameters() = p.head(n);
            const Eigen::Map<const ExtendedMatrix> projection(p.data() + n, r, f);
            input.head(r).noalias() = projection * target_feature;
            input.segment(r + 5, r).noalias() = projection * context_feature;
            return sequence_nll(seq, input, example.tokens);
        },
        analytic, epsilon, samples, seed);
}

nlohmann::ordered_json to_json(const SpatialModel& model) {
    nlohmann::ordered_json bundle;
    bundle["format_version"] = kModelFormatVersion;
    bundle["role"] = "spatial";
    write_seq_model(model.seq, bundle);
    bundle["dims"]["feature_dim"] = model.feature_dim();
    bundle["dims"]["reduced_dim"] = model.reduced_dim();
    bundle["parameters"]["projection"] = matrix_to_json(model.projection);
    return bundle;
}

SpatialModel spatial_model_from_json(const nlohmann::json& bundle) {
    if (!bundle.is_object() || bundle.value("role", std::string{}) != "spatial") {
        throw ModelFormatError("model bundle role is not 'spatial'");
    }
    SpatialModel model;
    model.seq = read_seq_model(bundle);
    try {
        const int feature_dim = bundle.at("dims").at("feature_dim").get<int>();
        const int reduced_dim = bundle.at("dims").at("reduced_dim").get<int>();
        if (feature_dim < 1 || reduced_dim < 1 ||
            model.seq.dims().cond_dim != pair_input_dim(reduced_dim)) {
            throw ModelFormatError("spatial dims are inconsistent with cond_dim");
        }
        model.projection = matrix_from_json(bundle.at("parameters").at("projection"), reduced_dim,
                                            feature_dim, "projection");
    } catch (const nlohmann::json::exception& error) {
        throw ModelFormatError(std::string("malformed spatial bundle: ") + error.what());
    }
    return model;
}

void save_spatial_model(const SpatialModel& model, const std::filesystem::path& path) {
    write_bundle_file(to_json(model), path);
}

SpatialModel load_spatial_model(const std::filesystem::path& path) {
    return spatial_model_from_json(read_bundle_file(path));
}

}  // namespace refground
