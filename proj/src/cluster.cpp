#include "refground/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace refground {

void SynonymTable::add_pair(const std::string& a, const std::string& b) {
    if (a == b) {
        return;
    }
    pairs_.emplace(a, b);
    pairs_.emplace(b, a);
}

void SynonymTable::add_group(std::span<const std::string> group) {
    for (std::size_t i = 0; i < group.size(); ++i) {
        for (std::size_t j = i + 1; j < group.size(); ++j) {
            add_pair(group[i], group[j]);
        }
    }
}

bool SynonymTable::synonyms(const std::string& a, const std::string& b) const {
    return pairs_.contains({a, b});
}

const SynonymTable& default_synonyms() {
    static const SynonymTable table = [] {
        SynonymTable t;
        auto add_words = [&](std::span<const std::string_view> words) {
            std::vector<std::string> group(words.begin(), words.end());
            t.add_group(group);
        };
        for (int c = 0; c < kCategoryCount; ++c) {
            add_words(category_words(static_cast<Category>(c)));
        }
        for (int s = 0; s < kSizeClassCount; ++s) {
            add_words(size_words(static_cast<SizeClass>(s)));
        }
        return t;
    }();
    return table;
}

SynonymTable load_synonyms(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open synonym file: " + path.string());
    }
    SynonymTable table;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        std::vector<std::string> group;
        std::size_t start = 0;
        while (start <= line.size()) {
            auto stop = line.find(',', start);
            if (stop == std::string::npos) {
                stop = line.size();
            }
            const auto tokens = tokenize(line.substr(start, stop - start));
            if (tokens.size() == 1 && tokens[0] != kUnkToken) {
                group.push_back(tokens[0]);
            }
            start = stop + 1;
        }
        table.add_group(group);
    }
    return table;
}

double meteor_lite(const Expression& candidate, const Expression& reference,
                   const SynonymTable& synonyms) {
    const auto& cand = candidate.tokens();
    const auto& ref = reference.tokens();
    if (cand.empty() || ref.empty()) {
        return 0.0;
    }
    std::vector<bool> matched(cand.size(), false);
    std::vector<bool> used(ref.size(), false);
    auto align = [&](auto&& equal) {
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (matched[i]) {
                continue;
            }
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (!used[j] && equal(cand[i], ref[j])) {
                    matched[i] = true;
                    used[j] = true;
                    break;
                }
            }
        }
    };
    align([](const std::string& a, const std::string& b) { return a == b; });
    align([&](const std::string& a, const std::string& b) { return synonyms.synonyms(a, b); });

    const auto m = static_cast<double>(std::count(matched.begin(), matched.end(), true));
    if (m == 0.0) {
        return 0.0;
    }
    int chunks = 0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (matched[i] && (i == 0 || !matched[i - 1])) {
            ++chunks;
        }
    }
    const double p = m / static_cast<double>(cand.size());
    const double r = m / static_cast<double>(ref.size());
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double penalty = 0.5 * std::pow(chunks / m, 3.0);
    return f * (1.0 - penalty);
}

namespace {

std::vector<double> min_max(const std::vector<double>& values) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    std::vector<double> out(values.size(), 1.0);
    if (*hi > *lo) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            out[i] = (values[i] - *lo) / (*hi - *lo);
        }
    }
    return out;
}

}  // namespace

std::vector<RelevancePoint> normalize_metrics(std::span<const ScoredRegion> scored,
                                              const Expression& query,
                                              const SynonymTable& synonyms) {
    if (scored.empty()) {
        throw std::invalid_argument("normalize_metrics: no scored regions");
    }
    std::vector<double> losses;
    std::vector<double> meteor;
    for (const auto& region : scored) {
        losses.push_back(region.loss);
        meteor.push_back(meteor_lite(region.generated_caption, query, synonyms));
    }
    const auto loss_norm = min_max(losses);
    const auto gen_norm = min_max(meteor);
    const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
    std::vector<RelevancePoint> points(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        points[i].region_index = i;
        points[i].m_loss = *hi > *lo ? 1.0 - loss_norm[i] : 1.0;
        points[i].m_gen = gen_norm[i];
    }
    return points;
}

double bipartition_sse(std::span<const RelevancePoint> points, const std::vector<bool>& in_first) {
    double sse = 0.0;
    for (bool side : {true, false}) {
        double sx = 0.0;
        double sy = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (in_first[i] == side) {
                sx += points[i].m_loss;
                sy += points[i].m_gen;
                ++n;
            }
        }
        if (n == 0) {
            continue;
        }
        const double cx = sx / n;
        const double cy = sy / n;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (in_first[i] == side) {
                sse += (points[i].m_loss - cx) * (points[i].m_loss - cx) +
                       (points[i].m_gen - cy) * (points[i].m_gen - cy);
            }
        }
    }
    return sse;
}

std::vector<std::size_t> relevancy_cluster(std::span<const RelevancePoint> points) {
    const std::size_t n = points.size();
    if (n == 0 || n > static_cast<std::size_t>(kDefaultTopK)) {
        throw std::invalid_argument("relevancy_cluster: expected between 1 and 10 points");
    }
    if (n == 1) {
        return {points[0].region_index};
    }
    // The last point always sits in the second group, so each bipartition
    // is visited once.
    std::vector<bool> best;
    double best_sse = std::numeric_limits<double>::infinity();
    std::vector<bool> in_first(n, false);
    const unsigned masks = 1u << (n - 1);
    for (unsigned mask = 1; mask < masks; ++mask) {
        for (std::size_t i = 0; i + 1 < n; ++i) {
            in_first[i] = (mask >> i) & 1u;
        }
        const double sse = bipartition_sse(points, in_first);
        if (sse < best_sse) {
            best_sse = sse;
            best = in_first;
        }
    }

    auto centroid_distance = [&](bool side) {
        double sx = 0.0;
        double sy = 0.0;
        int count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (best[i] == side) {
                sx += points[i].m_loss;
                sy += points[i].m_gen;
                ++count;
            }
        }
        const double dx = 1.0 - sx / count;
        const double dy = 1.0 - sy / count;
        return dx * dx + dy * dy;
    };
    const double d_first = centroid_distance(true);
    const double d_second = centroid_distance(false);
    bool relevant_side = d_first < d_second;
    if (d_first == d_second) {
        std::size_t top = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (points[i].m_loss + points[i].m_gen > points[top].m_loss + points[top].m_gen) {
                top = i;
            }
        }
        relevant_side = best[top];
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (best[i] == relevant_side) {
            out.push_back(points[i].region_index);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace refground
