#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "refground/box.hpp"
#include "refground/vocab.hpp"

namespace refground {

enum class Category { cup, bottle, glass, can, book, box };
enum class Color { red, green, blue, orange, yellow, white };
enum class SizeClass { small, large };

inline constexpr int kCategoryCount = 6;
inline constexpr int kColorCount = 6;
inline constexpr int kSizeClassCount = 2;

std::string_view to_string(Category value);
std::string_view to_string(Color value);
std::string_view to_string(SizeClass value);
Category parse_category(std::string_view text);
Color parse_color(std::string_view text);
SizeClass parse_size_class(std::string_view text);

/// Surface words for an attribute; the canonical name comes first.
std::span<const std::string_view> category_words(Category value);
std::span<const std::string_view> size_words(SizeClass value);

/// Metric 3D size of a physical object, in meters.
struct ObjectExtent {
    double width = 0.0;
    double height = 0.0;
    double depth = 0.0;

    bool valid() const { return width > 0.0 && height > 0.0 && depth > 0.0; }
    friend bool operator==(const ObjectExtent&, const ObjectExtent&) = default;
};

struct SceneObject {
    std::string id;
    Category category = Category::cup;
    Color color = Color::red;
    SizeClass size_class = SizeClass::small;
    BoundingBox bbox;
    ObjectExtent extent;

    bool same_attributes(const SceneObject& other) const {
        return category == other.category && color == other.color &&
               size_class == other.size_class;
    }
    friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
    std::string id;
    int width = 0;
    int height = 0;
    std::vector<SceneObject> objects;

    const SceneObject* find(std::string_view object_id) const;
    /// Throws std::invalid_argument describing the first violated invariant.
    void validate() const;
    friend bool operator==(const Scene&, const Scene&) = default;
};

enum class ExpressionKind { semantic_only, spatio_semantic };

std::string_view to_string(ExpressionKind kind);
ExpressionKind parse_expression_kind(std::string_view text);

struct GroundedExpression {
    Expression expression;
    std::string target_object_id;
    ExpressionKind kind = ExpressionKind::semantic_only;
};

/// A scene together with its referring expressions, as stored on disk.
struct AnnotatedScene {
    Scene scene;
    std::vector<GroundedExpression> expressions;
};

class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SceneConfig {
    int min_objects = 5;
    int max_objects = 12;
    int width = 640;
    int height = 480;
    std::vector<Category> categories{Category::cup,   Category::bottle, Category::glass,
                                     Category::can,   Category::book,   Category::box};
    std::vector<Color> colors{Color::red,    Color::green,  Color::blue,
                              Color::orange, Color::yellow, Color::white};
    std::vector<SizeClass> sizes{SizeClass::small, SizeClass::large};
    /// Probability that an object copies the attributes of an earlier one.
    double duplicate_probability = 0.3;
    double max_overlap_iou = 0.2;
    int placement_attempts = 400;
};

/// Deterministic in (config, seed). Throws PlacementError when the canvas
/// cannot hold the requested objects under the overlap cap.
Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

struct ExpressionConfig {
    /// Target share of semantic_only expressions per scene.
    double semantic_fraction = 0.6;
    double synonym_probability = 0.3;
    int semantic_per_object = 2;
    int spatial_per_object = 2;
    /// Positional difference (pixels) below which a relation is undecided.
    double relation_margin = 20.0;
    /// Required ratio between second-nearest and nearest distance for "next to".
    double next_to_ratio = 1.5;
};

std::vector<GroundedExpression> generate_expressions(const Scene& scene, std::uint64_t seed,
                                                     const ExpressionConfig& config = {});

// Structured reading of the closed expression grammar:
//   the [left|right|leftmost|rightmost|middle] [size] [color] category
//       [(left of|right of|above|below|next to) the [size] [color] category]

enum class Relation {
    none,
    left,
    right,
    leftmost,
    rightmost,
    middle,
    left_of,
    right_of,
    above,
    below,
    next_to
};

struct Descriptor {
    std::optional<SizeClass> size;
    std::optional<Color> color;
    Category category = Category::cup;

    bool matches(const SceneObject& object) const;
    friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

struct ParsedExpression {
    Descriptor target;
    Relation relation = Relation::none;
    std::optional<Descriptor> context;
};

std::optional<ParsedExpression> parse_expression(std::span<const std::string> tokens);

struct Resolution {
    /// Objects consistent with the expression (undecided relations count as consistent).
    std::vector<std::string> candidates;
    /// The unique context object of a binary relation, if any.
    std::optional<std::string> context_id;
};

/// Exhaustive oracle over scene objects. Unparseable text yields no candidates.
Resolution resolve_expression(const Scene& scene, const Expression& expression,
                              const ExpressionConfig& config = {});

enum class ProposalMode { ground_truth, degraded };

std::string_view to_string(ProposalMode mode);
ProposalMode parse_proposal_mode(std::string_view text);

struct ProposalSet {
    std::string scene_id;
    std::vector<BoundingBox> boxes;
    ProposalMode mode = ProposalMode::ground_truth;
};

ProposalSet make_proposals(const Scene& scene, ProposalMode mode, std::uint64_t seed);

struct DatasetSplit {
    std::vector<AnnotatedScene> train;
    std::vector<AnnotatedScene> val;
    std::vector<AnnotatedScene> test;
};

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

/// Partition sizes from the largest-remainder rule over the ratios.
std::vector<std::size_t> partition_sizes(std::size_t count, std::span<const double> ratios);

DatasetSplit split_dataset(std::vector<AnnotatedScene> corpus, const SplitRatios& ratios,
                           std::uint64_t seed);

/// Scenes with a scene-specific seed mixed from the corpus seed; ids are
/// zero-padded indices so lexical order equals generation order.
std::vector<AnnotatedScene> generate_corpus(std::size_t scene_count, std::uint64_t seed,
                                            const SceneConfig& scene_config = {},
                                            const ExpressionConfig& expression_config = {});

/// Largest number of objects sharing one category.
int max_same_category(const Scene& scene);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Corpus file format.
nlohmann::ordered_json to_json(const AnnotatedScene& scene);
AnnotatedScene annotated_scene_from_json(const nlohmann::json& json);
void save_scene(const AnnotatedScene& scene, const std::filesystem::path& path);
AnnotatedScene load_scene(const std::filesystem::path& path);
/// Scene files (*.json) of a directory, sorted by file name.
std::vector<AnnotatedScene> load_scene_dir(const std::filesystem::path& dir);

}  // namespace refground
