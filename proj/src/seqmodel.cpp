#include "refground/seqmodel.hpp"

#include <algorithm>
#include <future>
#include <numeric>
#include <random>
#include <thread>

namespace refground {

const char* tensor_name(SeqTensor tensor) {
    switch (tensor) {
    case SeqTensor::embedding: return "embedding";
    case SeqTensor::cond_projection: return "cond_projection";
    case SeqTensor::gate_weights: return "gate_weights";
    case SeqTensor::gate_bias: return "gate_bias";
    case SeqTensor::output_weights: return "output_weights";
    case SeqTensor::output_bias: return "output_bias";
    }
    return "";
}

SeqModel init_model(Vocabulary vocab, SeqDims dims, std::uint64_t seed) {
    SeqModel model(std::move(vocab), dims);
    const auto& d = model.dims();
    std::mt19937_64 rng(seed);
    auto fill = [&](SeqTensor tensor, double fan_in) {
        const double s = 1.0 / std::sqrt(fan_in);
        std::uniform_real_distribution<double> dist(-s, s);
        auto view = model.tensor(tensor);
        for (Eigen::Index c = 0; c < view.cols(); ++c) {
            for (Eigen::Index r = 0; r < view.rows(); ++r) {
                view(r, c) = dist(rng);
            }
        }
    };
    fill(SeqTensor::embedding, d.embed_dim);
    fill(SeqTensor::cond_projection, d.cond_dim);
    fill(SeqTensor::gate_weights, d.embed_dim + d.hidden_dim);
    fill(SeqTensor::output_weights, d.hidden_dim);
    model.tensor(SeqTensor::gate_bias).setZero();
    model.tensor(SeqTensor::gate_bias).col(0).segment(d.hidden_dim, d.hidden_dim).setOnes();
    model.tensor(SeqTensor::output_bias).setZero();
    return model;
}

namespace {

constexpr std::size_t kGradientShards = 4;

struct ShardResult {
    Eigen::VectorXd grad;
    double loss = 0.0;
};

}  // namespace

std::vector<double> run_training(Eigen::VectorXd& params, std::size_t example_count,
                                 const TrainConfig& config, const ExampleGradientFn& example_gradient,
                                 const std::function<void()>& on_update) {
    if (example_count == 0) {
        throw std::invalid_argument("training dataset is empty");
    }
    if (!(config.learning_rate >= 0.0) || config.epochs < 1 || config.batch_size < 1) {
        throw std::invalid_argument("invalid training configuration");
    }
    const Eigen::Index n_params = params.size();
    std::vector<std::size_t> order(example_count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed);

    Eigen::VectorXd first_moment = Eigen::VectorXd::Zero(n_params);
    Eigen::VectorXd second_moment = Eigen::VectorXd::Zero(n_params);
    std::array<ShardResult, kGradientShards> shards;
    for (auto& shard : shards) {
        shard.grad = Eigen::VectorXd::Zero(n_params);
    }
    const bool parallel = std::thread::hardware_concurrency() > 1;
    long step = 0;
    std::vector<double> epoch_losses;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < example_count;
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(example_count, start + static_cast<std::size_t>(config.batch_size));
            const std::size_t batch = stop - start;

            auto run_shard = [&](std::size_t s) {
                auto& shard = shards[s];
                shard.grad.setZero();
                shard.loss = 0.0;
                const std::size_t lo = start + batch * s / kGradientShards;
                const std::size_t hi = start + batch * (s + 1) / kGradientShards;
                for (std::size_t i = lo; i < hi; ++i) {
                    const double loss = example_gradient(order[i], epoch, shard.grad);
                    if (!std::isfinite(loss)) {
                        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                            ", example " + std::to_string(order[i]));
                    }
                    shard.loss += loss;
                }
            };
            if (parallel && batch >= kGradientShards) {
                std::vector<std::future<void>> pending;
                for (std::size_t s = 1; s < kGradientShards; ++s) {
                    pending.push_back(std::async(std::launch::async, run_shard, s));
                }
                run_shard(0);
                for (auto& f : pending) {
                    f.get();
                }
            } else {
                for (std::size_t s = 0; s < kGradientShards; ++s) {
                    run_shard(s);
                }
            }

            Eigen::VectorXd& grad = shards[0].grad;
            double batch_loss = shards[0].loss;
            for (std::size_t s = 1; s < kGradientShards; ++s) {
                grad += shards[s].grad;
                batch_loss += shards[s].loss;
            }
            epoch_loss += batch_loss;
            grad /= static_cast<double>(batch);
            if (!grad.allFinite()) {
                throw TrainingError("non-finite gradient at epoch " + std::to_string(epoch));
            }
            if (config.grad_clip > 0.0) {
                const double norm = grad.norm();
                if (norm > config.grad_clip) {
                    grad *= config.grad_clip / norm;
                }
            }

            ++step;
            if (config.optimizer == OptimizerKind::sgd) {
                params.noalias() -= config.learning_rate * grad;
            } else {
                first_moment = config.beta1 * first_moment + (1.0 - config.beta1) * grad;
                second_moment =
                    config.beta2 * second_moment + (1.0 - config.beta2) * grad.cwiseAbs2();
                const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
                const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
                params.array() -= config.learning_rate * (first_moment.array() / correction1) /
                                  ((second_moment.array() / correction2).sqrt() + config.adam_epsilon);
            }
            if (on_update) {
                on_update();
            }
        }
        epoch_losses.push_back(epoch_loss / static_cast<double>(example_count));
        if (config.on_epoch) {
            config.on_epoch(epoch, epoch_losses.back());
        }
    }
    return epoch_losses;
}

TrainResult train(SeqModel model, std::span<const SeqExample> dataset, const TrainConfig& config) {
    if (dataset.empty()) {
        throw std::invalid_argument("train: dataset is empty");
    }
    for (const auto& example : dataset) {
        detail::check_sequence_inputs(model, example.condition.size(), example.tokens);
    }
    const SeqModel& view = model;
    auto losses = run_training(model.parameters(), dataset.size(), config,
                               [&](std::size_t index, int, Eigen::VectorXd& grad) {
                                   const auto& example = dataset[index];
                                   return sequence_nll_gradient(view, example.condition,
                                                                std::span<const int>(example.tokens),
                                                                grad);
                               });
    return {std::move(model), std::move(losses)};
}

double finite_difference_check(const Eigen::VectorXd& params,
                               const std::function<long double(const ExtendedVector&)>& loss,
                               const Eigen::VectorXd& analytic, double epsilon, std::size_t samples,
                               std::uint64_t seed) {
    if (epsilon < 1e-7 || epsilon > 1e-3) {
        throw std::invalid_argument("finite-difference epsilon must lie in [1e-7, 1e-3]");
    }
    if (analytic.size() != params.size()) {
        throw std::invalid_argument("analytic gradient size mismatch");
    }
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(params.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    const std::size_t count = std::min(samples, coords.size());
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> dist(i, coords.size() - 1);
        std::swap(coords[i], coords[dist(rng)]);
    }
    ExtendedVector probe = params.cast<long double>();
    const long double step = epsilon;
    double worst = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const auto k = coords[i];
        const long double center = probe[k];
        probe[k] = center + step;
        const long double up = loss(probe);
        probe[k] = center - step;
        const long double down = loss(probe);
        probe[k] = center;
        const double numeric = static_cast<double>((up - down) / (2.0L * step));
        const double a = analytic[k];
        const double denom = std::max({std::abs(a), std::abs(numeric), kGradientFloor});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

double grad_check(const SeqModel& model, const SeqExample& example, double epsilon,
                  std::size_t samples, std::uint64_t seed, GradientFault fault) {
    Eigen::VectorXd analytic = Eigen::VectorXd::Zero(model.parameters().size());
    sequence_nll_gradient(model, example.condition, std::span<const int>(example.tokens), analytic,
                          nullptr, 1.0, fault);
    auto probe = model.cast<long double>();
    const ExtendedVector condition = example.condition.cast<long double>();
    return finite_difference_check(
        model.parameters(),
        [&](const ExtendedVector& p) {
            probe.parameters() = p;
            return sequence_nll(probe, condition, std::span<const int>(example.tokens));
        },
        analytic, epsilon, samples, seed);
}

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& matrix) {
    auto out = nlohmann::ordered_json::array();
    if (matrix.cols() == 1) {
        for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
            out.push_back(matrix(r, 0));
        }
        return out;
    }
    for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
        auto row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
            row.push_back(matrix(r, c));
        }
        out.push_back(std::move(row));
    }
    return out;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& json, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& name) {
    auto fail = [&](const std::string& why) {
        return ModelFormatError("tensor '" + name + "': " + why);
    };
    if (!json.is_array() || static_cast<Eigen::Index>(json.size()) != rows) {
        throw fail("expected " + std::to_string(rows) + " rows");
    }
    Eigen::MatrixXd matrix(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = json[static_cast<std::size_t>(r)];
        if (cols == 1 && row.is_number()) {
            matrix(r, 0) = row.get<double>();
            continue;
        }
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw fail("expected " + std::to_string(cols) + " columns in row " + std::to_string(r));
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& value = row[static_cast<std::size_t>(c)];
            if (!value.is_number()) {
                throw fail("non-numeric entry");
            }
            matrix(r, c) = value.get<double>();
        }
    }
    if (!matrix.allFinite()) {
        throw fail("non-finite entry");
    }
    return matrix;
}

void write_seq_model(const SeqModel& model, nlohmann::ordered_json& bundle) {
    const auto& d = model.dims();
    auto& dims = bundle["dims"];
    dims["vocab_size"] = d.vocab_size;
    dims["embed_dim"] = d.embed_dim;
    dims["hidden_dim"] = d.hidden_dim;
    dims["cond_dim"] = d.cond_dim;
    auto vocabulary = nlohmann::ordered_json::array();
    for (int id = 0; id < model.vocab().size(); ++id) {
        vocabulary.push_back(model.vocab().token(id));
    }
    bundle["vocabulary"] = std::move(vocabulary);
    auto& parameters = bundle["parameters"];
    for (auto tensor : kSeqTensors) {
        parameters[tensor_name(tensor)] = matrix_to_json(model.tensor(tensor));
    }
}

SeqModel read_seq_model(const nlohmann::json& bundle) {
    try {
        if (bundle.at("format_version").get<int>() != kModelFormatVersion) {
            throw ModelFormatError("unsupported model format_version");
        }
        const auto& dims_json = bundle.at("dims");
        SeqDims dims{dims_json.at("vocab_size").get<int>(), dims_json.at("embed_dim").get<int>(),
                     dims_json.at("hidden_dim").get<int>(), dims_json.at("cond_dim").get<int>()};
        const auto tokens = bundle.at("vocabulary").get<std::vector<std::string>>();
        if (tokens.size() < kSpecialCount || tokens[kBos] != kBosToken || tokens[kEos] != kEosToken ||
            tokens[kUnk] != kUnkToken) {
            throw ModelFormatError("vocabulary must start with <bos>, <eos>, <unk>");
        }
        if (static_cast<int>(tokens.size()) != dims.vocab_size) {
            throw ModelFormatError("vocabulary size does not match dims.vocab_size");
        }
        SeqModel model(Vocabulary(std::vector<std::string>(tokens.begin() + kSpecialCount, tokens.end())),
                       dims);
        const auto& parameters = bundle.at("parameters");
        for (auto tensor : kSeqTensors) {
            const auto& shape = model.layout()[tensor];
            model.tensor(tensor) = matrix_from_json(parameters.at(tensor_name(tensor)), shape.rows,
                                                    shape.cols, tensor_name(tensor));
        }
        return model;
    } catch (const nlohmann::json::exception& error) {
        throw ModelFormatError(std::string("malformed model bundle: ") + error.what());
    } catch (const std::invalid_argument& error) {
        throw ModelFormatError(std::string("invalid model bundle: ") + error.what());
    }
}

}  // namespace refground
