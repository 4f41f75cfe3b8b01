#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refground/semantic.hpp"
#include "refground/vocab.hpp"

namespace refground {

/// Undirected word pairs; lookups are symmetric.
class SynonymTable {
public:
    void add_pair(const std::string& a, const std::string& b);
    /// Every pair of distinct words in the group becomes a synonym pair.
    void add_group(std::span<const std::string> group);
    bool synonyms(const std::string& a, const std::string& b) const;
    std::size_t pair_count() const { return pairs_.size() / 2; }

private:
    std::set<std::pair<std::string, std::string>> pairs_;
};

/// Surface-word groups of the corpus grammar (cup/mug, small/little, ...).
const SynonymTable& default_synonyms();

/// One comma-separated group per line; blank lines and '#' comments skipped.
SynonymTable load_synonyms(const std::filesystem::path& path);

/// Unigram METEOR variant: exact then synonym alignment, F = 10PR/(R+9P),
/// fragmentation penalty 0.5 * (chunks/m)^3.
double meteor_lite(const Expression& candidate, const Expression& reference,
                   const SynonymTable& synonyms);

struct RelevancePoint {
    std::size_t region_index = 0;
    double m_loss = 0.0;
    double m_gen = 0.0;
};

std::vector<RelevancePoint> normalize_metrics(std::span<const ScoredRegion> scored,
                                              const Expression& query,
                                              const SynonymTable& synonyms);

/// Total within-cluster squared deviation of the two groups selected by `in_first`.
double bipartition_sse(std::span<const RelevancePoint> points, const std::vector<bool>& in_first);

/// Exact minimum-SSE bipartition; returns the region indices of the cluster
/// whose centroid lies nearer to (1, 1), in ascending order.
std::vector<std::size_t> relevancy_cluster(std::span<const RelevancePoint> points);

}  // namespace refground
