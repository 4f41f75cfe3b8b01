#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "refground/vocab.hpp"

namespace refground {

struct SeqDims {
    int vocab_size = 0;
    int embed_dim = 32;
    int hidden_dim = 64;
    int cond_dim = 64;

    bool valid() const { return vocab_size > 0 && embed_dim > 0 && hidden_dim > 0 && cond_dim > 0; }
    friend bool operator==(const SeqDims&, const SeqDims&) = default;
};

enum class SeqTensor { embedding, cond_projection, gate_weights, gate_bias, output_weights, output_bias };

inline constexpr std::array<SeqTensor, 6> kSeqTensors{
    SeqTensor::embedding,      SeqTensor::cond_projection, SeqTensor::gate_weights,
    SeqTensor::gate_bias,      SeqTensor::output_weights,  SeqTensor::output_bias};

const char* tensor_name(SeqTensor tensor);

struct TensorShape {
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    Eigen::Index size() const { return rows * cols; }
};

/// Position of every tensor inside the flat parameter vector. Gate rows are
/// stacked input, forget, output, candidate; gate columns are [embedding; hidden].
class SeqLayout {
public:
    SeqLayout() = default;
    explicit SeqLayout(const SeqDims& dims);

    const TensorShape& operator[](SeqTensor tensor) const {
        return shapes_[static_cast<std::size_t>(tensor)];
    }
    Eigen::Index size() const { return size_; }

private:
    std::array<TensorShape, 6> shapes_{};
    Eigen::Index size_ = 0;
};

inline SeqLayout::SeqLayout(const SeqDims& dims) {
    const Eigen::Index v = dims.vocab_size;
    const Eigen::Index e = dims.embed_dim;
    const Eigen::Index h = dims.hidden_dim;
    const Eigen::Index c = dims.cond_dim;
    const std::array<std::pair<Eigen::Index, Eigen::Index>, 6> shapes{{
        {v, e}, {h, c}, {4 * h, e + h}, {4 * h, 1}, {v, h}, {v, 1}}};
    Eigen::Index offset = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        shapes_[i] = {offset, shapes[i].first, shapes[i].second};
        offset += shapes[i].first * shapes[i].second;
    }
    size_ = offset;
}

/// Which gradient path to corrupt; used by the gradient-check mutation tests.
enum class GradientFault { none, forget_gate_derivative };

/// Conditional LSTM language model. The conditioning vector sets the initial
/// hidden state through tanh(cond_projection * condition); the initial cell
/// state is zero. All parameters live in one contiguous vector.
template <typename Scalar>
class BasicSeqModel {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using MatrixView = Eigen::Map<Matrix>;
    using ConstMatrixView = Eigen::Map<const Matrix>;

    BasicSeqModel() = default;

    BasicSeqModel(Vocabulary vocab, SeqDims dims) : vocab_(std::move(vocab)), dims_(dims) {
        if (dims_.vocab_size == 0) {
            dims_.vocab_size = vocab_.size();
        }
        if (!dims_.valid()) {
            throw std::invalid_argument("sequence model dimensions must be positive");
        }
        if (dims_.vocab_size != vocab_.size()) {
            throw std::invalid_argument("vocab_size does not match vocabulary");
        }
        layout_ = SeqLayout(dims_);
        params_ = Vector::Zero(layout_.size());
    }

    static Eigen::Index parameter_count(const SeqDims& dims) { return SeqLayout(dims).size(); }

    const Vocabulary& vocab() const { return vocab_; }
    const SeqDims& dims() const { return dims_; }
    const SeqLayout& layout() const { return layout_; }

    Vector& parameters() { return params_; }
    const Vector& parameters() const { return params_; }

    MatrixView tensor(SeqTensor t) { return view(params_, t); }
    ConstMatrixView tensor(SeqTensor t) const { return view(params_, t); }

    /// View of a tensor inside any vector sharing this model's layout.
    MatrixView view(Vector& flat, SeqTensor t) const {
        const auto& s = layout_[t];
        return MatrixView(flat.data() + s.offset, s.rows, s.cols);
    }
    ConstMatrixView view(const Vector& flat, SeqTensor t) const {
        const auto& s = layout_[t];
        return ConstMatrixView(flat.data() + s.offset, s.rows, s.cols);
    }

    template <typename Other>
    BasicSeqModel<Other> cast() const {
        BasicSeqModel<Other> out(vocab_, dims_);
        out.parameters() = params_.template cast<Other>();
        return out;
    }

private:
    Vocabulary vocab_;
    SeqDims dims_;
    SeqLayout layout_;
    Vector params_;
};

using SeqModel = BasicSeqModel<double>;

template <typename Scalar>
Scalar logistic(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// One gated recurrent step: i,f,o = logistic(affine), g = tanh(affine),
/// cell' = f*cell + i*g, hidden' = o*tanh(cell').
template <typename Scalar>
std::pair<typename BasicSeqModel<Scalar>::Vector, typename BasicSeqModel<Scalar>::Vector> cell_step(
    const BasicSeqModel<Scalar>& model,
    const Eigen::Ref<const typename BasicSeqModel<Scalar>::Vector>& input_embedding,
    const Eigen::Ref<const typename BasicSeqModel<Scalar>::Vector>& hidden,
    const Eigen::Ref<const typename BasicSeqModel<Scalar>::Vector>& cell) {
    using Vector = typename BasicSeqModel<Scalar>::Vector;
    const auto& d = model.dims();
    const Eigen::Index e = d.embed_dim;
    const Eigen::Index h = d.hidden_dim;
    if (input_embedding.size() != e || hidden.size() != h || cell.size() != h) {
        throw std::invalid_argument("cell_step: dimension mismatch");
    }
    const auto weights = model.tensor(SeqTensor::gate_weights);
    const auto bias = model.tensor(SeqTensor::gate_bias);
    Vector z = bias.col(0);
    z.noalias() += weights.leftCols(e) * input_embedding;
    z.noalias() += weights.rightCols(h) * hidden;

    Vector next_cell(h);
    Vector next_hidden(h);
    for (Eigen::Index k = 0; k < h; ++k) {
        const Scalar i = logistic(z[k]);
        const Scalar f = logistic(z[h + k]);
        const Scalar o = logistic(z[2 * h + k]);
        const Scalar g = std::tanh(z[3 * h + k]);
        next_cell[k] = f * cell[k] + i * g;
        next_hidden[k] = o * std::tanh(next_cell[k]);
    }
    return {std::move(next_hidden), std::move(next_cell)};
}

namespace detail {

template <typename Scalar>
void check_sequence_inputs(const BasicSeqModel<Scalar>& model, Eigen::Index cond_size,
                           std::span<const int> tokens) {
    if (cond_size != model.dims().cond_dim) {
        throw std::invalid_argument("condition dimension " + std::to_string(cond_size) +
                                    " does not match cond_dim " +
                                    std::to_string(model.dims().cond_dim));
    }
    if (tokens.empty()) {
        throw std::invalid_argument("token sequence must be non-empty");
    }
    for (int id : tokens) {
        if (id < 0 || id >= model.dims().vocab_size) {
            throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                                    std::to_string(model.dims().vocab_size));
        }
    }
}

/// Log-softmax entry without materializing the distribution.
template <typename Derived>
typename Derived::Scalar log_softmax_at(const Eigen::MatrixBase<Derived>& logits, Eigen::Index index) {
    const auto peak = logits.maxCoeff();
    const auto norm = (logits.array() - peak).exp().sum();
    return logits[index] - peak - std::log(norm);
}

// Forward caches for backpropagation through time over T = tokens + 1 steps.
template <typename Scalar>
struct SequenceTrace {
    using Vector = typename BasicSeqModel<Scalar>::Vector;
    using Matrix = typename BasicSeqModel<Scalar>::Matrix;

    Vector initial_hidden;
    Matrix inputs;   // (e + h) x T, column t = [embedding(x_t); hidden_{t-1}]
    Matrix gates;    // 4h x T, activated i, f, o, g
    Matrix cells;    // h x (T + 1), column 0 = initial cell
    Matrix hiddens;  // h x T, hidden after each step
    Matrix probs;    // V x T softmax distributions
    std::vector<int> inputs_ids;
    std::vector<int> targets;
    Scalar loss = Scalar(0);
};

template <typename Scalar>
SequenceTrace<Scalar> trace_sequence(const BasicSeqModel<Scalar>& model,
                                     const Eigen::Ref<const typename BasicSeqModel<Scalar>::Vector>& condition,
                                     std::span<const int> tokens) {
    using Vector = typename BasicSeqModel<Scalar>::Vector;
    check_sequence_inputs(model, condition.size(), tokens);
    const auto& d = model.dims();
    const Eigen::Index e = d.embed_dim;
    const Eigen::Index h = d.hidden_dim;
    const Eigen::Index steps = static_cast<Eigen::Index>(tokens.size()) + 1;

    SequenceTrace<Scalar> trace;
    trace.inputs_ids.reserve(static_cast<std::size_t>(steps));
    trace.inputs_ids.push_back(kBos);
    trace.inputs_ids.insert(trace.inputs_ids.end(), tokens.begin(), tokens.end());
    trace.targets.assign(tokens.begin(), tokens.end());
    trace.targets.push_back(kEos);

    const auto embedding = model.tensor(SeqTensor::embedding);
    const auto weights = model.tensor(SeqTensor::gate_weights);
    const auto bias = model.tensor(SeqTensor::gate_bias);
    const auto out_w = model.tensor(SeqTensor::output_weights);
    const auto out_b = model.tensor(SeqTensor::output_bias);

    trace.initial_hidden = (model.tensor(SeqTensor::cond_projection) * condition).array().tanh();
    trace.inputs.resize(e + h, steps);
    trace.gates.resize(4 * h, steps);
    trace.cells.resize(h, steps + 1);
    trace.hiddens.resize(h, steps);
    trace.probs.resize(d.vocab_size, steps);
    trace.cells.col(0).setZero();

    Vector z(4 * h);
    Vector logits(d.vocab_size);
    for (Eigen::Index t = 0; t < steps; ++t) {
        trace.inputs.col(t).head(e) = embedding.row(trace.inputs_ids[static_cast<std::size_t>(t)]).transpose();
        trace.inputs.col(t).tail(h) = t == 0 ? trace.initial_hidden : Vector(trace.hiddens.col(t - 1));
        z = bias.col(0);
        z.noalias() += weights * trace.inputs.col(t);
        auto gate = trace.gates.col(t);
        for (Eigen::Index k = 0; k < 3 * h; ++k) {
            gate[k] = logistic(z[k]);
        }
        gate.tail(h) = z.tail(h).array().tanh();
        trace.cells.col(t + 1) = gate.segment(h, h).cwiseProduct(trace.cells.col(t)) +
                                 gate.head(h).cwiseProduct(gate.tail(h));
        trace.hiddens.col(t) =
            gate.segment(2 * h, h).cwiseProduct(Vector(trace.cells.col(t + 1).array().tanh()));

        logits = out_b.col(0);
        logits.noalias() += out_w * trace.hiddens.col(t);
        const Scalar peak = logits.maxCoeff();
        auto p = trace.probs.col(t);
        p = (logits.array() - peak).exp();
        const Scalar norm = p.sum();
        p /= norm;
        const auto target = trace.targets[static_cast<std::size_t>(t)];
        trace.loss -= logits[target] - peak - std::log(norm);
    }
    return trace;
}

}  // namespace detail

/// Teacher-forced negative log-likelihood of [tokens, EOS] starting from BOS.
template <typename Scalar>
Scalar sequence_nll(const BasicSeqModel<Scalar>& model,
                    const Eigen::Ref<const typename BasicSeqModel<Scalar>::Vector>& condition,
                    std::span<const int> tokens) {
    using Vector = typename BasicSeqModel<Scalar>::Vector;
    detail::check_sequence_inputs(model, condition.size(), tokens);
    const auto& d = model.dims();
    const Eigen::Index e = d.embed_dim;
    const Eigen::Index h = d.hidden_dim;
    const auto embedding = model.tensor(SeqTensor::embedding);
    const auto weights = model.tensor(SeqTensor::gate_weights);
    const auto bias = model.tensor(SeqTensor::gate_bias);
    const auto out_w = model.tensor(SeqTensor::output_weights);
    const auto out_b = model.tensor(SeqTensor::output_bias);

    Vector hidden = (model.tensor(SeqTensor::cond_projection) * condition).array().tanh();
    Vector cell = Vector::Zero(h);
    Vector z(4 * h);
    Vector logits(d.vocab_size);
    Scalar loss(0);
    const std::size_t steps = tokens.size() + 1;
    for (std::size_t t = 0; t < steps; ++t) {
        const int input = t == 0 ? kBos : tokens[t - 1];
        const int target = t < tokens.size() ? tokens[t] : kEos;
        z = bias.col(0);
        z.noalias() += weights.leftCols(e) * embedding.row(input).transpose();
        z.noalias() += weights.rightCols(h) * hidden;
        for (Eigen::Index k = 0; k < h; ++k) {
            const Scalar i = logistic(z[k]);
            const Scalar f = logistic(z[h + k]);
            const Scalar o = logistic(z[2 * h + k]);
            const Scalar g = std::tanh(z[3 * h + k]);
            cell[k] = f * cell[k] + i * g;
            hidden[k] = o * std::tanh(cell[k]);
        }
        logits = out_b.col(0);
        logits.noalias() += out_w * hidden;
        loss -= detail::log_softmax_at(logits, target);
    }
    return loss;
}

/// Loss plus analytic gradient. The parameter gradient (scaled by `scale`)
/// is accumulated into `grad`; the condition gradient, when requested, is
/// accumulated into `condition_grad`.
template <typename Scalar>
Scalar sequence_nll_gradient(const BasicSeqModel<Scalar>& model,
                             const Eigen::Ref<const typename BasicSeqModel<Scalar>::Vector>& condition,
                             std::span<const int> tokens, typename BasicSeqModel<Scalar>::Vector& grad,
                             typename BasicSeqModel<Scalar>::Vector* condition_grad = nullptr,
                             Scalar scale = Scalar(1), GradientFault fault = GradientFault::none) {
    using Vector = typename BasicSeqModel<Scalar>::Vector;
    using Matrix = typename BasicSeqModel<Scalar>::Matrix;
    auto trace = detail::trace_sequence(model, condition, tokens);
    if (grad.size() != model.layout().size()) {
        throw std::invalid_argument("gradient buffer does not match parameter layout");
    }
    const auto& d = model.dims();
    const Eigen::Index e = d.embed_dim;
    const Eigen::Index h = d.hidden_dim;
    const Eigen::Index steps = trace.gates.cols();

    const auto weights = model.tensor(SeqTensor::gate_weights);
    const auto out_w = model.tensor(SeqTensor::output_weights);

    // dlogits = scale * (softmax - onehot(target)), one column per step
    Matrix dlogits = trace.probs * scale;
    for (Eigen::Index t = 0; t < steps; ++t) {
        dlogits(trace.targets[static_cast<std::size_t>(t)], t) -= scale;
    }
    model.view(grad, SeqTensor::output_weights).noalias() += dlogits * trace.hiddens.transpose();
    model.view(grad, SeqTensor::output_bias).col(0) += dlogits.rowwise().sum();
    const Matrix dhidden_out = out_w.transpose() * dlogits;

    Matrix dz(4 * h, steps);
    Vector dh_next = Vector::Zero(h);
    Vector dc_next = Vector::Zero(h);
    for (Eigen::Index t = steps - 1; t >= 0; --t) {
        const auto gate = trace.gates.col(t);
        const auto i = gate.head(h).array();
        const auto f = gate.segment(h, h).array();
        const auto o = gate.segment(2 * h, h).array();
        const auto g = gate.tail(h).array();
        const Eigen::Array<Scalar, Eigen::Dynamic, 1> tanh_c = trace.cells.col(t + 1).array().tanh();

        const Eigen::Array<Scalar, Eigen::Dynamic, 1> dh = dhidden_out.col(t).array() + dh_next.array();
        const Eigen::Array<Scalar, Eigen::Dynamic, 1> dc =
            dc_next.array() + dh * o * (Scalar(1) - tanh_c.square());

        auto dzt = dz.col(t);
        dzt.head(h) = dc * g * i * (Scalar(1) - i);
        if (fault == GradientFault::forget_gate_derivative) {
            dzt.segment(h, h) = dc * trace.cells.col(t).array();
        } else {
            dzt.segment(h, h) = dc * trace.cells.col(t).array() * f * (Scalar(1) - f);
        }
        dzt.segment(2 * h, h) = dh * tanh_c * o * (Scalar(1) - o);
        dzt.tail(h) = dc * i * (Scalar(1) - g.square());

        dc_next = dc * f;
        dh_next.noalias() = weights.rightCols(h).transpose() * dzt;
    }
    model.view(grad, SeqTensor::gate_weights).noalias() += dz * trace.inputs.transpose();
    model.view(grad, SeqTensor::gate_bias).col(0) += dz.rowwise().sum();

    const Matrix dinputs = weights.leftCols(e).transpose() * dz;
    auto dembedding = model.view(grad, SeqTensor::embedding);
    for (Eigen::Index t = 0; t < steps; ++t) {
        dembedding.row(trace.inputs_ids[static_cast<std::size_t>(t)]) += dinputs.col(t).transpose();
    }

    const Vector dpre = dh_next.array() * (Scalar(1) - trace.initial_hidden.array().square());
    model.view(grad, SeqTensor::cond_projection).noalias() += dpre * condition.transpose();
    if (condition_grad != nullptr) {
        condition_grad->noalias() += model.tensor(SeqTensor::cond_projection).transpose() * dpre;
    }
    return trace.loss;
}

/// Greedy decoding. BOS and UNK are never emitted; the best regular token
/// (lowest id on ties) is emitted unless EOS scores strictly higher.
template <typename Scalar>
std::vector<int> generate_caption(const BasicSeqModel<Scalar>& model,
                                  const Eigen::Ref<const typename BasicSeqModel<Scalar>::Vector>& condition,
                                  int max_len) {
    using Vector = typename BasicSeqModel<Scalar>::Vector;
    if (max_len < 1) {
        throw std::invalid_argument("generate_caption: max_len must be >= 1");
    }
    if (condition.size() != model.dims().cond_dim) {
        throw std::invalid_argument("generate_caption: condition dimension mismatch");
    }
    const auto& d = model.dims();
    const auto embedding = model.tensor(SeqTensor::embedding);
    const auto out_w = model.tensor(SeqTensor::output_weights);
    const auto out_b = model.tensor(SeqTensor::output_bias);
    Vector hidden = (model.tensor(SeqTensor::cond_projection) * condition).array().tanh();
    Vector cell = Vector::Zero(d.hidden_dim);
    std::vector<int> caption;
    int input = kBos;
    while (static_cast<int>(caption.size()) < max_len) {
        auto [next_hidden, next_cell] =
            cell_step(model, Vector(embedding.row(input).transpose()), hidden, cell);
        hidden = std::move(next_hidden);
        cell = std::move(next_cell);
        const Vector logits = out_w * hidden + out_b.col(0);
        if (d.vocab_size <= kSpecialCount) {
            break;
        }
        int best = kSpecialCount;
        for (int k = kSpecialCount + 1; k < d.vocab_size; ++k) {
            if (logits[k] > logits[best]) {
                best = k;
            }
        }
        if (logits[kEos] > logits[best]) {
            break;
        }
        caption.push_back(best);
        input = best;
    }
    return caption;
}

// ---------------------------------------------------------------------------
// Initialization, training, verification, persistence (double precision)

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per tensor, forget-gate bias 1.
SeqModel init_model(Vocabulary vocab, SeqDims dims, std::uint64_t seed);

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 1;
    /// Global gradient-norm cap; <= 0 disables clipping.
    double grad_clip = 5.0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// Progress callback per finished epoch (epoch index, mean loss).
    std::function<void(int, double)> on_epoch;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SeqExample {
    Eigen::VectorXd condition;
    std::vector<int> tokens;
};

struct TrainResult {
    SeqModel model;
    std::vector<double> epoch_losses;
};

TrainResult train(SeqModel model, std::span<const SeqExample> dataset, const TrainConfig& config);

/// Per-example loss + gradient accumulation used by the generic loop; the
/// returned loss is also the value averaged into the epoch trajectory.
using ExampleGradientFn =
    std::function<double(std::size_t example, int epoch, Eigen::VectorXd& grad)>;

/// Shuffled minibatch loop with clipping and the configured optimizer. The
/// batch gradient is reduced over a fixed number of shards so the result
/// does not depend on the number of worker threads.
std::vector<double> run_training(Eigen::VectorXd& params, std::size_t example_count,
                                 const TrainConfig& config, const ExampleGradientFn& example_gradient,
                                 const std::function<void()>& on_update = {});

using ExtendedVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

/// Gradients below this magnitude are compared in absolute terms; the
/// O(epsilon^2) truncation of the central difference is of that order.
inline constexpr double kGradientFloor = 1e-8;

/// max |a - n| / max(|a|, |n|, kGradientFloor) over sampled coordinates, n
/// being the central finite difference of `loss` at `params`. The loss is
/// evaluated in extended precision; in double its roundoff alone exceeds the
/// tolerance on coordinates with gradients below about 1e-6.
double finite_difference_check(const Eigen::VectorXd& params,
                               const std::function<long double(const ExtendedVector&)>& loss,
                               const Eigen::VectorXd& analytic, double epsilon, std::size_t samples,
                               std::uint64_t seed);

double grad_check(const SeqModel& model, const SeqExample& example, double epsilon,
                  std::size_t samples = 200, std::uint64_t seed = 0,
                  GradientFault fault = GradientFault::none);

inline constexpr int kModelFormatVersion = 1;

class ModelFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& matrix);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& json, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& name);

/// Adds dims/vocabulary/parameters of the sequence model to a bundle object.
void write_seq_model(const SeqModel& model, nlohmann::ordered_json& bundle);
SeqModel read_seq_model(const nlohmann::json& bundle);

}  // namespace refground
