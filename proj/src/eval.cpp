#include "refground/eval.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace refground {

double prec_at_1(std::span<const BoxPair> results, double threshold) {
    if (results.empty()) {
        throw std::invalid_argument("prec_at_1: no results");
    }
    std::size_t correct = 0;
    for (const auto& [predicted, truth] : results) {
        if (iou(predicted, truth) > threshold) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(results.size());
}

std::vector<Partition> make_partitions(std::vector<AnnotatedScene> val,
                                       std::vector<AnnotatedScene> test) {
    std::vector<Partition> out(3);
    out[0] = {"val", std::move(val)};
    out[1].name = "test_a";
    out[2].name = "test_b";
    for (auto& scene : test) {
        auto& target = max_same_category(scene.scene) >= 3 ? out[1] : out[2];
        target.scenes.push_back(std::move(scene));
    }
    return out;
}

std::vector<BoundingBox> EnginePredictor::predict(const Scene& scene, const ProposalSet& proposals,
                                                  const Expression& query,
                                                  std::span<const Aggregation> aggregations) const {
    std::vector<BoundingBox> out;
    if (aggregations.empty()) {
        return out;
    }
    const auto result = engine_.ground(scene, proposals, query.raw(), aggregations.front());
    out.push_back(result.ranked.front().box);
    for (std::size_t i = 1; i < aggregations.size(); ++i) {
        out.push_back(reaggregate(result, aggregations[i]).ranked.front().box);
    }
    return out;
}

const BenchmarkCell* BenchmarkReport::find(std::string_view partition, ProposalMode mode,
                                           Aggregation aggregation) const {
    for (const auto& cell : cells) {
        if (cell.partition == partition && cell.mode == mode && cell.aggregation == aggregation) {
            return &cell;
        }
    }
    return nullptr;
}

std::uint64_t proposal_seed(std::uint64_t base, std::string_view scene_id) {
    std::uint64_t hash = 1469598103934665603ULL;
    for (unsigned char c : scene_id) {
        hash = (hash ^ c) * 1099511628211ULL;
    }
    return mix_seed(base, hash);
}

BenchmarkReport run_benchmark(const GroundingPredictor& predictor,
                              std::span<const Partition> partitions,
                              const BenchmarkConfig& config) {
    if (partitions.empty()) {
        throw std::invalid_argument("run_benchmark: no partitions");
    }
    const NounLexicon& lexicon = config.lexicon ? *config.lexicon : default_noun_lexicon();
    BenchmarkReport report;
    double total_ms = 0.0;
    for (const auto& partition : partitions) {
        if (partition.scenes.empty()) {
            throw std::invalid_argument("run_benchmark: partition '" + partition.name + "' is empty");
        }
        PartitionSummary summary{partition.name, partition.scenes.size(), 0, 0};
        const std::size_t first_cell = report.cells.size();
        for (auto mode : config.modes) {
            for (auto aggregation : config.aggregations) {
                report.cells.push_back({partition.name, mode, aggregation, {}, {}, {}, 0});
            }
        }
        for (const auto& annotated : partition.scenes) {
            for (std::size_t m = 0; m < config.modes.size(); ++m) {
                const auto proposals = make_proposals(
                    annotated.scene, config.modes[m], proposal_seed(config.proposal_seed, annotated.scene.id));
                for (const auto& grounded : annotated.expressions) {
                    if (!contains_noun(grounded.expression.tokens(), lexicon)) {
                        if (m == 0) {
                            ++summary.pruned;
                        }
                        continue;
                    }
                    if (m == 0) {
                        ++summary.expressions;
                    }
                    const SceneObject* target = annotated.scene.find(grounded.target_object_id);
                    if (target == nullptr) {
                        throw std::invalid_argument("expression target missing from scene " +
                                                    annotated.scene.id);
                    }
                    std::vector<BoundingBox> predicted;
                    bool failed = false;
                    const auto start = std::chrono::steady_clock::now();
                    try {
                        predicted = predictor.predict(annotated.scene, proposals, grounded.expression,
                                                      config.aggregations);
                        failed = predicted.size() != config.aggregations.size();
                    } catch (const std::exception&) {
                        failed = true;
                    }
                    const double ms = std::chrono::duration<double, std::milli>(
                                          std::chrono::steady_clock::now() - start)
                                          .count();
                    ++report.runtime.queries;
                    total_ms += ms;
                    report.runtime.max_ms = std::max(report.runtime.max_ms, ms);
                    for (std::size_t a = 0; a < config.aggregations.size(); ++a) {
                        auto& cell = report.cells[first_cell + m * config.aggregations.size() + a];
                        const bool correct =
                            !failed && iou(predicted[a], target->bbox) > config.threshold;
                        auto& kind = grounded.kind == ExpressionKind::semantic_only
                                         ? cell.semantic_only
                                         : cell.spatio_semantic;
                        for (KindTally* tally : {&cell.all, &kind}) {
                            ++tally->evaluated;
                            tally->correct += correct ? 1 : 0;
                        }
                        cell.failures += failed ? 1 : 0;
                    }
                }
            }
        }
        report.partitions.push_back(summary);
    }
    report.runtime.total_seconds = total_ms / 1000.0;
    report.runtime.mean_ms =
        report.runtime.queries == 0 ? 0.0 : total_ms / static_cast<double>(report.runtime.queries);
    return report;
}

nlohmann::ordered_json to_json(const BenchmarkReport& report, bool include_runtime) {
    nlohmann::ordered_json out;
    auto partitions = nlohmann::ordered_json::array();
    for (const auto& p : report.partitions) {
        partitions.push_back({{"name", p.name},
                              {"scenes", p.scenes},
                              {"expressions", p.expressions},
                              {"pruned", p.pruned}});
    }
    out["partitions"] = std::move(partitions);
    auto tally = [](const KindTally& t) {
        return nlohmann::ordered_json{
            {"evaluated", t.evaluated}, {"correct", t.correct}, {"prec_at_1", t.prec_at_1()}};
    };
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : report.cells) {
        nlohmann::ordered_json cell;
        cell["partition"] = c.partition;
        cell["proposals"] = to_string(c.mode);
        cell["aggregation"] = to_string(c.aggregation);
        cell["prec_at_1"] = c.all.prec_at_1();
        cell["evaluated"] = c.all.evaluated;
        cell["failures"] = c.failures;
        cell["semantic_only"] = tally(c.semantic_only);
        cell["spatio_semantic"] = tally(c.spatio_semantic);
        cells.push_back(std::move(cell));
    }
    out["cells"] = std::move(cells);
    if (include_runtime) {
        out["runtime"] = {{"queries", report.runtime.queries},
                          {"total_seconds", report.runtime.total_seconds},
                          {"mean_ms", report.runtime.mean_ms},
                          {"max_ms", report.runtime.max_ms}};
    }
    return out;
}

std::string format_table(const BenchmarkReport& report) {
    std::vector<std::string> columns;
    for (const auto& p : report.partitions) {
        columns.push_back(p.name);
    }
    std::vector<std::pair<Aggregation, ProposalMode>> rows;
    for (const auto& c : report.cells) {
        const std::pair key{c.aggregation, c.mode};
        if (std::find(rows.begin(), rows.end(), key) == rows.end()) {
            rows.push_back(key);
        }
    }
    std::ostringstream out;
    out << std::left << std::setw(28) << "Method";
    for (const auto& name : columns) {
        out << std::right << std::setw(10) << name;
    }
    out << '\n';
    for (const auto& [aggregation, mode] : rows) {
        const std::string label =
            std::string(to_string(aggregation)) + " (" + std::string(to_string(mode)) + ")";
        out << std::left << std::setw(28) << label;
        for (const auto& name : columns) {
            const auto* cell = report.find(name, mode, aggregation);
            out << std::right << std::setw(10);
            if (cell == nullptr) {
                out << "-";
            } else {
                out << std::fixed << std::setprecision(1) << 100.0 * cell->all.prec_at_1();
            }
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace refground
