#include "refground/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace refground {

namespace {

constexpr std::array<std::string_view, kCategoryCount> kCategoryNames{
    "cup", "bottle", "glass", "can", "book", "box"};
constexpr std::array<std::string_view, kColorCount> kColorNames{
    "red", "green", "blue", "orange", "yellow", "white"};
constexpr std::array<std::string_view, kSizeClassCount> kSizeNames{"small", "large"};

constexpr std::array<std::array<std::string_view, 2>, kCategoryCount> kCategoryWords{{
    {"cup", "mug"},
    {"bottle", "flask"},
    {"glass", "tumbler"},
    {"can", "tin"},
    {"book", "notebook"},
    {"box", "carton"},
}};
constexpr std::array<std::array<std::string_view, 2>, kSizeClassCount> kSizeWords{{
    {"small", "little"},
    {"large", "big"},
}};

// Small-size footprint in pixels (width, height); large objects scale by 1.35.
constexpr std::array<std::array<double, 2>, kCategoryCount> kPixelSize{{
    {48.0, 52.0},
    {36.0, 100.0},
    {40.0, 60.0},
    {42.0, 64.0},
    {80.0, 104.0},
    {88.0, 72.0},
}};
// Small-size metric extent (width, height, depth) in meters.
constexpr std::array<std::array<double, 3>, kCategoryCount> kMetricExtent{{
    {0.08, 0.10, 0.08},
    {0.07, 0.25, 0.07},
    {0.07, 0.12, 0.07},
    {0.066, 0.12, 0.066},
    {0.15, 0.22, 0.03},
    {0.20, 0.12, 0.15},
}};
constexpr double kLargeScale = 1.35;

template <typename Enum, std::size_t N>
Enum parse_named(std::string_view text, const std::array<std::string_view, N>& names,
                 std::string_view what) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == text) {
            return static_cast<Enum>(i);
        }
    }
    throw std::invalid_argument("unknown " + std::string(what) + ": " + std::string(text));
}

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& pool) {
    std::uniform_int_distribution<std::size_t> dist(0, pool.size() - 1);
    return pool[dist(rng)];
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool chance(std::mt19937_64& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

}  // namespace

std::string_view to_string(Category value) { return kCategoryNames[static_cast<int>(value)]; }
std::string_view to_string(Color value) { return kColorNames[static_cast<int>(value)]; }
std::string_view to_string(SizeClass value) { return kSizeNames[static_cast<int>(value)]; }

Category parse_category(std::string_view text) {
    return parse_named<Category>(text, kCategoryNames, "category");
}
Color parse_color(std::string_view text) { return parse_named<Color>(text, kColorNames, "color"); }
SizeClass parse_size_class(std::string_view text) {
    return parse_named<SizeClass>(text, kSizeNames, "size class");
}

std::span<const std::string_view> category_words(Category value) {
    return kCategoryWords[static_cast<int>(value)];
}

std::span<const std::string_view> size_words(SizeClass value) {
    return kSizeWords[static_cast<int>(value)];
}

std::string_view to_string(ExpressionKind kind) {
    return kind == ExpressionKind::semantic_only ? "semantic_only" : "spatio_semantic";
}

ExpressionKind parse_expression_kind(std::string_view text) {
    if (text == "semantic_only") {
        return ExpressionKind::semantic_only;
    }
    if (text == "spatio_semantic") {
        return ExpressionKind::spatio_semantic;
    }
    throw std::invalid_argument("unknown expression kind: " + std::string(text));
}

std::string_view to_string(ProposalMode mode) {
    return mode == ProposalMode::ground_truth ? "ground_truth" : "degraded";
}

ProposalMode parse_proposal_mode(std::string_view text) {
    if (text == "ground_truth") {
        return ProposalMode::ground_truth;
    }
    if (text == "degraded") {
        return ProposalMode::degraded;
    }
    throw std::invalid_argument("unknown proposal mode: " + std::string(text));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

const SceneObject* Scene::find(std::string_view object_id) const {
    for (const auto& object : objects) {
        if (object.id == object_id) {
            return &object;
        }
    }
    return nullptr;
}

void Scene::validate() const {
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("scene " + id + ": non-positive canvas size");
    }
    if (objects.empty()) {
        throw std::invalid_argument("scene " + id + ": no objects");
    }
    std::set<std::string> ids;
    for (const auto& object : objects) {
        if (!ids.insert(object.id).second) {
            throw std::invalid_argument("scene " + id + ": duplicate object id " + object.id);
        }
        if (!object.bbox.valid()) {
            throw std::invalid_argument("scene " + id + ": degenerate box for " + object.id);
        }
        if (!object.bbox.inside(width, height)) {
            throw std::invalid_argument("scene " + id + ": box outside canvas for " + object.id);
        }
        if (!object.extent.valid()) {
            throw std::invalid_argument("scene " + id + ": non-positive extent for " + object.id);
        }
    }
}

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
    if (config.min_objects < 1 || config.max_objects > 20 ||
        config.min_objects > config.max_objects) {
        throw std::invalid_argument("generate_scene: object count range must lie within [1, 20]");
    }
    if (config.categories.empty() || config.colors.empty() || config.sizes.empty()) {
        throw std::invalid_argument("generate_scene: empty attribute pool");
    }
    std::mt19937_64 rng(seed);
    const int count =
        std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);

    Scene scene;
    scene.id = "scene-" + std::to_string(seed);
    scene.width = config.width;
    scene.height = config.height;

    std::vector<SceneObject> objects(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto& object = objects[static_cast<std::size_t>(i)];
        object.id = "o" + std::to_string(i + 1);
        if (i > 0 && chance(rng, config.duplicate_probability)) {
            const auto source = std::uniform_int_distribution<int>(0, i - 1)(rng);
            const auto& src = objects[static_cast<std::size_t>(source)];
            object.category = src.category;
            object.color = src.color;
            object.size_class = src.size_class;
        } else {
            object.category = pick(rng, config.categories);
            object.color = pick(rng, config.colors);
            object.size_class = pick(rng, config.sizes);
        }
    }
    if (count >= 4) {
        bool has_duplicate = false;
        for (int i = 0; i < count && !has_duplicate; ++i) {
            for (int j = i + 1; j < count; ++j) {
                if (objects[i].same_attributes(objects[j])) {
                    has_duplicate = true;
                    break;
                }
            }
        }
        if (!has_duplicate) {
            const auto target = std::uniform_int_distribution<int>(1, count - 1)(rng);
            objects[target].category = objects[0].category;
            objects[target].color = objects[0].color;
            objects[target].size_class = objects[0].size_class;
        }
    }

    for (auto& object : objects) {
        const auto cat = static_cast<int>(object.category);
        const double scale = object.size_class == SizeClass::large ? kLargeScale : 1.0;
        const double w = kPixelSize[cat][0] * scale * uniform(rng, 0.92, 1.08);
        const double h = kPixelSize[cat][1] * scale * uniform(rng, 0.92, 1.08);
        object.extent = {kMetricExtent[cat][0] * scale * uniform(rng, 0.9, 1.1),
                         kMetricExtent[cat][1] * scale * uniform(rng, 0.9, 1.1),
                         kMetricExtent[cat][2] * scale * uniform(rng, 0.9, 1.1)};
        if (w >= config.width || h >= config.height) {
            throw PlacementError("canvas " + std::to_string(config.width) + "x" +
                                 std::to_string(config.height) + " too small for object " +
                                 object.id);
        }
        bool placed = false;
        for (int attempt = 0; attempt < config.placement_attempts && !placed; ++attempt) {
            const double x = uniform(rng, 0.0, config.width - w);
            const double y = uniform(rng, 0.0, config.height - h);
            const BoundingBox box{x, y, x + w, y + h};
            placed = std::none_of(scene.objects.begin(), scene.objects.end(), [&](const auto& o) {
                return iou(o.bbox, box) > config.max_overlap_iou;
            });
            if (placed) {
                object.bbox = box;
            }
        }
        if (!placed) {
            throw PlacementError("could not place object " + object.id + " of scene " +
                                 scene.id + " within " +
                                 std::to_string(config.placement_attempts) + " attempts");
        }
        scene.objects.push_back(object);
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Expression grammar

bool Descriptor::matches(const SceneObject& object) const {
    return object.category == category && (!size || *size == object.size_class) &&
           (!color || *color == object.color);
}

namespace {

struct ParseCursor {
    std::span<const std::string> tokens;
    std::size_t pos = 0;

    bool done() const { return pos >= tokens.size(); }
    const std::string& peek(std::size_t ahead = 0) const {
        static const std::string empty;
        return pos + ahead < tokens.size() ? tokens[pos + ahead] : empty;
    }
    bool accept(std::string_view word) {
        if (peek() == word) {
            ++pos;
            return true;
        }
        return false;
    }
};

std::optional<Category> category_of(std::string_view word) {
    for (int c = 0; c < kCategoryCount; ++c) {
        for (auto w : kCategoryWords[c]) {
            if (w == word) {
                return static_cast<Category>(c);
            }
        }
    }
    return std::nullopt;
}

std::optional<SizeClass> size_of(std::string_view word) {
    for (int s = 0; s < kSizeClassCount; ++s) {
        for (auto w : kSizeWords[s]) {
            if (w == word) {
                return static_cast<SizeClass>(s);
            }
        }
    }
    return std::nullopt;
}

std::optional<Color> color_of(std::string_view word) {
    for (int c = 0; c < kColorCount; ++c) {
        if (kColorNames[c] == word) {
            return static_cast<Color>(c);
        }
    }
    return std::nullopt;
}

std::optional<Descriptor> parse_descriptor(ParseCursor& cursor) {
    Descriptor descriptor;
    if (auto size = size_of(cursor.peek())) {
        descriptor.size = size;
        ++cursor.pos;
    }
    if (auto color = color_of(cursor.peek())) {
        descriptor.color = color;
        ++cursor.pos;
    }
    auto category = category_of(cursor.peek());
    if (!category) {
        return std::nullopt;
    }
    descriptor.category = *category;
    ++cursor.pos;
    return descriptor;
}

}  // namespace

std::optional<ParsedExpression> parse_expression(std::span<const std::string> tokens) {
    ParseCursor cursor{tokens};
    ParsedExpression parsed;
    cursor.accept("the");

    static const std::map<std::string, Relation, std::less<>> kAdjectives{
        {"left", Relation::left},
        {"right", Relation::right},
        {"leftmost", Relation::leftmost},
        {"rightmost", Relation::rightmost},
        {"middle", Relation::middle},
    };
    if (auto it = kAdjectives.find(cursor.peek()); it != kAdjectives.end()) {
        // "left of" is a binary relation, never an adjective.
        if (cursor.peek(1) != "of") {
            parsed.relation = it->second;
            ++cursor.pos;
        }
    }
    auto target = parse_descriptor(cursor);
    if (!target) {
        return std::nullopt;
    }
    parsed.target = *target;
    if (cursor.done()) {
        return parsed;
    }
    if (parsed.relation != Relation::none) {
        return std::nullopt;
    }
    if (cursor.peek() == "left" && cursor.peek(1) == "of") {
        parsed.relation = Relation::left_of;
        cursor.pos += 2;
    } else if (cursor.peek() == "right" && cursor.peek(1) == "of") {
        parsed.relation = Relation::right_of;
        cursor.pos += 2;
    } else if (cursor.accept("above")) {
        parsed.relation = Relation::above;
    } else if (cursor.accept("below")) {
        parsed.relation = Relation::below;
    } else if (cursor.peek() == "next" && cursor.peek(1) == "to") {
        parsed.relation = Relation::next_to;
        cursor.pos += 2;
    } else {
        return std::nullopt;
    }
    cursor.accept("the");
    auto context = parse_descriptor(cursor);
    if (!context || !cursor.done()) {
        return std::nullopt;
    }
    parsed.context = *context;
    return parsed;
}

namespace {

// -1: false, 0: undecided, +1: true
int compare_axis(double target, double context, double margin) {
    if (target < context - margin) {
        return 1;
    }
    if (target > context + margin) {
        return -1;
    }
    return 0;
}

std::vector<const SceneObject*> matching(const Scene& scene, const Descriptor& descriptor) {
    std::vector<const SceneObject*> out;
    for (const auto& object : scene.objects) {
        if (descriptor.matches(object)) {
            out.push_back(&object);
        }
    }
    return out;
}

std::vector<std::string> ids_of(const std::vector<const SceneObject*>& objects) {
    std::vector<std::string> ids;
    ids.reserve(objects.size());
    for (const auto* object : objects) {
        ids.push_back(object->id);
    }
    return ids;
}

// Extreme element along center x; every object within the margin of the
// extreme remains a candidate.
std::vector<std::string> extreme_x(std::vector<const SceneObject*> group, bool leftmost,
                                   double margin) {
    std::sort(group.begin(), group.end(), [&](const auto* a, const auto* b) {
        return leftmost ? a->bbox.center_x() < b->bbox.center_x()
                        : a->bbox.center_x() > b->bbox.center_x();
    });
    std::vector<std::string> out;
    const double edge = group.front()->bbox.center_x();
    for (const auto* object : group) {
        if (std::abs(object->bbox.center_x() - edge) <= margin) {
            out.push_back(object->id);
        }
    }
    return out;
}

}  // namespace

Resolution resolve_expression(const Scene& scene, const Expression& expression,
                              const ExpressionConfig& config) {
    Resolution resolution;
    const auto parsed = parse_expression(expression.tokens());
    if (!parsed) {
        return resolution;
    }
    const double margin = config.relation_margin;
    auto group = matching(scene, parsed->target);
    if (group.empty()) {
        return resolution;
    }

    switch (parsed->relation) {
    case Relation::none:
        resolution.candidates = ids_of(group);
        break;
    case Relation::left:
    case Relation::right: {
        if (group.size() != 2) {
            resolution.candidates = ids_of(group);
            break;
        }
        const int order = compare_axis(group[0]->bbox.center_x(), group[1]->bbox.center_x(), margin);
        if (order == 0) {
            resolution.candidates = ids_of(group);
        } else {
            const bool first_is_left = order > 0;
            const bool want_left = parsed->relation == Relation::left;
            resolution.candidates = {(first_is_left == want_left) ? group[0]->id : group[1]->id};
        }
        break;
    }
    case Relation::leftmost:
    case Relation::rightmost:
        resolution.candidates = group.size() < 2
                                    ? ids_of(group)
                                    : extreme_x(group, parsed->relation == Relation::leftmost, margin);
        break;
    case Relation::middle: {
        if (group.size() != 3) {
            resolution.candidates = ids_of(group);
            break;
        }
        std::sort(group.begin(), group.end(), [](const auto* a, const auto* b) {
            return a->bbox.center_x() < b->bbox.center_x();
        });
        const double left_gap = group[1]->bbox.center_x() - group[0]->bbox.center_x();
        const double right_gap = group[2]->bbox.center_x() - group[1]->bbox.center_x();
        if (left_gap > margin && right_gap > margin) {
            resolution.candidates = {group[1]->id};
        } else {
            resolution.candidates = ids_of(group);
        }
        break;
    }
    default: {
        const auto contexts = matching(scene, *parsed->context);
        if (contexts.size() != 1) {
            resolution.candidates = ids_of(group);
            break;
        }
        const SceneObject& context = *contexts.front();
        resolution.context_id = context.id;
        if (parsed->relation == Relation::next_to) {
            double nearest = std::numeric_limits<double>::infinity();
            for (const auto* object : group) {
                if (object->id != context.id) {
                    nearest = std::min(nearest, std::hypot(object->bbox.center_x() - context.bbox.center_x(),
                                                           object->bbox.center_y() - context.bbox.center_y()));
                }
            }
            for (const auto* object : group) {
                if (object->id == context.id) {
                    continue;
                }
                const double d = std::hypot(object->bbox.center_x() - context.bbox.center_x(),
                                            object->bbox.center_y() - context.bbox.center_y());
                if (d < config.next_to_ratio * nearest) {
                    resolution.candidates.push_back(object->id);
                }
            }
            break;
        }
        for (const auto* object : group) {
            if (object->id == context.id) {
                continue;
            }
            int verdict = 0;
            switch (parsed->relation) {
            case Relation::left_of:
                verdict = compare_axis(object->bbox.center_x(), context.bbox.center_x(), margin);
                break;
            case Relation::right_of:
                verdict = compare_axis(context.bbox.center_x(), object->bbox.center_x(), margin);
                break;
            case Relation::above:
                verdict = compare_axis(object->bbox.center_y(), context.bbox.center_y(), margin);
                break;
            case Relation::below:
                verdict = compare_axis(context.bbox.center_y(), object->bbox.center_y(), margin);
                break;
            default:
                break;
            }
            if (verdict >= 0) {
                resolution.candidates.push_back(object->id);
            }
        }
        break;
    }
    }
    return resolution;
}

// ---------------------------------------------------------------------------
// Expression generation

namespace {

std::string render_descriptor(const Descriptor& descriptor, std::mt19937_64& rng,
                              double synonym_probability) {
    std::string out;
    if (descriptor.size) {
        const auto words = size_words(*descriptor.size);
        out += chance(rng, synonym_probability) ? words[1] : words[0];
        out += ' ';
    }
    if (descriptor.color) {
        out += to_string(*descriptor.color);
        out += ' ';
    }
    const auto words = category_words(descriptor.category);
    out += chance(rng, synonym_probability) ? words[1] : words[0];
    return out;
}

std::string_view relation_phrase(Relation relation) {
    switch (relation) {
    case Relation::left: return "left";
    case Relation::right: return "right";
    case Relation::leftmost: return "leftmost";
    case Relation::rightmost: return "rightmost";
    case Relation::middle: return "middle";
    case Relation::left_of: return "left of";
    case Relation::right_of: return "right of";
    case Relation::above: return "above";
    case Relation::below: return "below";
    case Relation::next_to: return "next to";
    case Relation::none: break;
    }
    return "";
}

// Color first: "the red cup" is how people name a lone object.
std::vector<Descriptor> descriptors_for(const SceneObject& object) {
    return {
        Descriptor{std::nullopt, object.color, object.category},
        Descriptor{std::nullopt, std::nullopt, object.category},
        Descriptor{object.size_class, std::nullopt, object.category},
        Descriptor{object.size_class, object.color, object.category},
    };
}


std::size_t count_matching(const Scene& scene, const Descriptor& descriptor) {
    return static_cast<std::size_t>(std::count_if(
        scene.objects.begin(), scene.objects.end(),
        [&](const auto& o) { return descriptor.matches(o); }));
}

// First descriptor with a single match, if any.
std::optional<Descriptor> minimal_unique(const Scene& scene, const SceneObject& object) {
    for (const auto& d : descriptors_for(object)) {
        if (count_matching(scene, d) == 1) {
            return d;
        }
    }
    return std::nullopt;
}

enum class RelationFamily { sibling, extreme, middle, horizontal, vertical, next_to };

struct SpatialCandidate {
    RelationFamily family;
    Descriptor target;
    Relation relation;
    std::optional<Descriptor> context;
};

}  // namespace

std::vector<GroundedExpression> generate_expressions(const Scene& scene, std::uint64_t seed,
                                                     const ExpressionConfig& config) {
    scene.validate();
    std::mt19937_64 rng(seed);
    std::vector<GroundedExpression> semantic;
    std::vector<GroundedExpression> spatial;

    auto emit = [&](std::vector<GroundedExpression>& out, const std::string& text,
                    const SceneObject& target, ExpressionKind kind) {
        GroundedExpression grounded{Expression(text), target.id, kind};
        const auto resolution = resolve_expression(scene, grounded.expression, config);
        if (resolution.candidates.size() == 1 && resolution.candidates.front() == target.id) {
            out.push_back(std::move(grounded));
            return true;
        }
        return false;
    };

    for (const auto& object : scene.objects) {
        const auto all = descriptors_for(object);
        const Descriptor full = all.back();
        const auto group_size = count_matching(scene, full);

        if (group_size == 1) {
            std::vector<Descriptor> unique;
            for (const auto& d : all) {
                if (count_matching(scene, d) == 1) {
                    unique.push_back(d);
                }
            }
            // minimal description first, then random extra unique ones
            std::vector<Descriptor> chosen{unique.front()};
            std::vector<Descriptor> rest(unique.begin() + 1, unique.end());
            std::shuffle(rest.begin(), rest.end(), rng);
            for (const auto& d : rest) {
                if (static_cast<int>(chosen.size()) >= config.semantic_per_object) {
                    break;
                }
                chosen.push_back(d);
            }
            // canonical words first, synonyms only in the extra forms
            for (std::size_t i = 0; i < chosen.size(); ++i) {
                const double p = i == 0 ? 0.0 : config.synonym_probability;
                emit(semantic, "the " + render_descriptor(chosen[i], rng, p), object,
                     ExpressionKind::semantic_only);
            }
            continue;
        }

        // Attribute-ambiguous: the shortest descriptor naming exactly the
        // duplicate group, plus the bare category when it is broader.
        std::vector<Descriptor> target_descriptors;
        for (const auto& d : all) {
            if (count_matching(scene, d) == group_size) {
                target_descriptors.push_back(d);
                break;
            }
        }
        if (count_matching(scene, all.front()) > group_size) {
            target_descriptors.push_back(all.front());
        }

        std::vector<SpatialCandidate> candidates;
        for (const auto& d : target_descriptors) {
            const auto n = count_matching(scene, d);
            if (n == 2) {
                candidates.push_back({RelationFamily::sibling, d, Relation::left, {}});
                candidates.push_back({RelationFamily::sibling, d, Relation::right, {}});
            }
            candidates.push_back({RelationFamily::extreme, d, Relation::leftmost, {}});
            candidates.push_back({RelationFamily::extreme, d, Relation::rightmost, {}});
            if (n == 3) {
                candidates.push_back({RelationFamily::middle, d, Relation::middle, {}});
            }
            for (const auto& other : scene.objects) {
                if (d.matches(other)) {
                    continue;
                }
                const auto context = minimal_unique(scene, other);
                if (!context) {
                    continue;
                }
                candidates.push_back({RelationFamily::horizontal, d, Relation::left_of, context});
                candidates.push_back({RelationFamily::horizontal, d, Relation::right_of, context});
                candidates.push_back({RelationFamily::vertical, d, Relation::above, context});
                candidates.push_back({RelationFamily::vertical, d, Relation::below, context});
                candidates.push_back({RelationFamily::next_to, d, Relation::next_to, context});
            }
        }

        // Keep only the forms that single out this object, then draw with a
        // uniform choice over relation families.
        std::map<RelationFamily, std::vector<std::string>> by_family;
        for (const auto& candidate : candidates) {
            const double p = candidate.family == RelationFamily::sibling ? 0.0 : config.synonym_probability;
            std::string text = "the ";
            const auto body = render_descriptor(candidate.target, rng, p);
            if (candidate.context) {
                text += body + " " + std::string(relation_phrase(candidate.relation)) + " the " +
                        render_descriptor(*candidate.context, rng, p);
            } else {
                text += std::string(relation_phrase(candidate.relation)) + " " + body;
            }
            const auto resolution = resolve_expression(scene, Expression(text), config);
            if (resolution.candidates.size() == 1 && resolution.candidates.front() == object.id) {
                by_family[candidate.family].push_back(std::move(text));
            }
        }
        for (int taken = 0; taken < config.spatial_per_object && !by_family.empty(); ++taken) {
            // a left/right sibling form always comes first when it exists
            auto it = by_family.find(RelationFamily::sibling);
            if (it == by_family.end()) {
                it = by_family.begin();
                std::advance(it, std::uniform_int_distribution<std::size_t>(0, by_family.size() - 1)(rng));
            }
            auto& texts = it->second;
            const auto index = std::uniform_int_distribution<std::size_t>(0, texts.size() - 1)(rng);
            emit(spatial, texts[index], object, ExpressionKind::spatio_semantic);
            by_family.erase(it);
        }
    }

    // Rebalance toward the configured semantic share.
    const double frac = std::clamp(config.semantic_fraction, 0.0, 1.0);
    if (!semantic.empty() && !spatial.empty()) {
        const double total = static_cast<double>(semantic.size() + spatial.size());
        if (static_cast<double>(semantic.size()) / total > frac && frac < 1.0) {
            auto keep = static_cast<std::size_t>(
                std::lround(frac / (1.0 - frac) * static_cast<double>(spatial.size())));
            keep = std::clamp<std::size_t>(keep, 1, semantic.size());
            std::shuffle(semantic.begin(), semantic.end(), rng);
            semantic.resize(keep);
        } else if (frac > 0.0) {
            auto keep = static_cast<std::size_t>(
                std::lround((1.0 - frac) / frac * static_cast<double>(semantic.size())));
            keep = std::clamp<std::size_t>(keep, 1, spatial.size());
            std::shuffle(spatial.begin(), spatial.end(), rng);
            spatial.resize(keep);
        }
    }

    std::vector<GroundedExpression> out;
    out.reserve(semantic.size() + spatial.size());
    // object order is the stable output order
    for (const auto& object : scene.objects) {
        for (auto* pool : {&semantic, &spatial}) {
            for (auto& e : *pool) {
                if (e.target_object_id == object.id) {
                    out.push_back(e);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Proposals and partitions

ProposalSet make_proposals(const Scene& scene, ProposalMode mode, std::uint64_t seed) {
    ProposalSet proposals{scene.id, {}, mode};
    proposals.boxes.reserve(scene.objects.size() + scene.objects.size() / 3);
    if (mode == ProposalMode::ground_truth) {
        for (const auto& object : scene.objects) {
            proposals.boxes.push_back(object.bbox);
        }
        return proposals;
    }
    std::mt19937_64 rng(seed);
    const double width = scene.width;
    const double height = scene.height;
    for (const auto& object : scene.objects) {
        const double w = object.bbox.width();
        const double h = object.bbox.height();
        BoundingBox box{object.bbox.x_min + w * uniform(rng, -0.1, 0.1),
                        object.bbox.y_min + h * uniform(rng, -0.1, 0.1),
                        object.bbox.x_max + w * uniform(rng, -0.1, 0.1),
                        object.bbox.y_max + h * uniform(rng, -0.1, 0.1)};
        box.x_min = std::clamp(box.x_min, 0.0, width);
        box.x_max = std::clamp(box.x_max, 0.0, width);
        box.y_min = std::clamp(box.y_min, 0.0, height);
        box.y_max = std::clamp(box.y_max, 0.0, height);
        proposals.boxes.push_back(box);
    }
    const std::size_t spurious = scene.objects.size() / 3;
    for (std::size_t i = 0; i < spurious; ++i) {
        const double w = uniform(rng, 30.0, std::min(150.0, width));
        const double h = uniform(rng, 30.0, std::min(150.0, height));
        const double x = uniform(rng, 0.0, width - w);
        const double y = uniform(rng, 0.0, height - h);
        proposals.boxes.push_back({x, y, x + w, y + h});
    }
    return proposals;
}

std::vector<std::size_t> partition_sizes(std::size_t count, std::span<const double> ratios) {
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) {
            throw std::invalid_argument("split ratios must be positive");
        }
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must sum to 1");
    }
    if (count < ratios.size()) {
        throw std::invalid_argument("fewer scenes (" + std::to_string(count) + ") than partitions (" +
                                    std::to_string(ratios.size()) + ")");
    }
    std::vector<std::size_t> sizes(ratios.size());
    std::vector<double> remainders(ratios.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double exact = ratios[i] * static_cast<double>(count);
        sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainders[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::vector<std::size_t> order(ratios.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t i = 0; assigned < count; ++i, ++assigned) {
        ++sizes[order[i % order.size()]];
    }
    return sizes;
}

DatasetSplit split_dataset(std::vector<AnnotatedScene> corpus, const SplitRatios& ratios,
                           std::uint64_t seed) {
    const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
    const auto sizes = partition_sizes(corpus.size(), r);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::array<std::vector<std::size_t>, 3> members;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < 3; ++p) {
        members[p].assign(order.begin() + static_cast<std::ptrdiff_t>(offset),
                          order.begin() + static_cast<std::ptrdiff_t>(offset + sizes[p]));
        std::sort(members[p].begin(), members[p].end());
        offset += sizes[p];
    }
    DatasetSplit split;
    std::array<std::vector<AnnotatedScene>*, 3> outputs{&split.train, &split.val, &split.test};
    for (std::size_t p = 0; p < 3; ++p) {
        outputs[p]->reserve(members[p].size());
        for (auto index : members[p]) {
            outputs[p]->push_back(std::move(corpus[index]));
        }
    }
    return split;
}

std::vector<AnnotatedScene> generate_corpus(std::size_t scene_count, std::uint64_t seed,
                                            const SceneConfig& scene_config,
                                            const ExpressionConfig& expression_config) {
    std::vector<AnnotatedScene> corpus;
    corpus.reserve(scene_count);
    for (std::size_t i = 0; i < scene_count; ++i) {
        const auto scene_seed = mix_seed(seed, i);
        AnnotatedScene annotated;
        annotated.scene = generate_scene(scene_config, scene_seed);
        std::ostringstream id;
        id << "scene-" << std::setw(5) << std::setfill('0') << i;
        annotated.scene.id = id.str();
        annotated.expressions =
            generate_expressions(annotated.scene, mix_seed(scene_seed, 1), expression_config);
        corpus.push_back(std::move(annotated));
    }
    return corpus;
}

int max_same_category(const Scene& scene) {
    std::array<int, kCategoryCount> counts{};
    for (const auto& object : scene.objects) {
        ++counts[static_cast<int>(object.category)];
    }
    return *std::max_element(counts.begin(), counts.end());
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::ordered_json to_json(const AnnotatedScene& annotated) {
    const auto& scene = annotated.scene;
    nlohmann::ordered_json json;
    json["id"] = scene.id;
    json["width"] = scene.width;
    json["height"] = scene.height;
    auto objects = nlohmann::ordered_json::array();
    for (const auto& object : scene.objects) {
        nlohmann::ordered_json o;
        o["id"] = object.id;
        o["category"] = to_string(object.category);
        o["color"] = to_string(object.color);
        o["size_class"] = to_string(object.size_class);
        o["bbox"] = {object.bbox.x_min, object.bbox.y_min, object.bbox.x_max, object.bbox.y_max};
        o["extent"] = {object.extent.width, object.extent.height, object.extent.depth};
        objects.push_back(std::move(o));
    }
    json["objects"] = std::move(objects);
    auto expressions = nlohmann::ordered_json::array();
    for (const auto& e : annotated.expressions) {
        nlohmann::ordered_json item;
        item["text"] = e.expression.raw();
        item["target"] = e.target_object_id;
        item["kind"] = to_string(e.kind);
        expressions.push_back(std::move(item));
    }
    json["expressions"] = std::move(expressions);
    return json;
}

AnnotatedScene annotated_scene_from_json(const nlohmann::json& json) {
    AnnotatedScene annotated;
    auto& scene = annotated.scene;
    scene.id = json.at("id").get<std::string>();
    scene.width = json.at("width").get<int>();
    scene.height = json.at("height").get<int>();
    for (const auto& o : json.at("objects")) {
        SceneObject object;
        object.id = o.at("id").get<std::string>();
        object.category = parse_category(o.at("category").get<std::string>());
        object.color = parse_color(o.at("color").get<std::string>());
        object.size_class = parse_size_class(o.at("size_class").get<std::string>());
        const auto& b = o.at("bbox");
        object.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                       b.at(3).get<double>()};
        const auto& e = o.at("extent");
        object.extent = {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()};
        scene.objects.push_back(std::move(object));
    }
    scene.validate();
    if (json.contains("expressions")) {
        for (const auto& e : json.at("expressions")) {
            GroundedExpression grounded{Expression(e.at("text").get<std::string>()),
                                        e.at("target").get<std::string>(),
                                        parse_expression_kind(e.at("kind").get<std::string>())};
            if (scene.find(grounded.target_object_id) == nullptr) {
                throw std::invalid_argument("scene " + scene.id + ": expression target " +
                                            grounded.target_object_id + " does not exist");
            }
            annotated.expressions.push_back(std::move(grounded));
        }
    }
    return annotated;
}

void save_scene(const AnnotatedScene& scene, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write scene file: " + path.string());
    }
    out << to_json(scene).dump(2) << '\n';
}

AnnotatedScene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open scene file: " + path.string());
    }
    try {
        return annotated_scene_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& error) {
        throw std::runtime_error("malformed scene file " + path.string() + ": " + error.what());
    }
}

std::vector<AnnotatedScene> load_scene_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw std::runtime_error("not a scene directory: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<AnnotatedScene> scenes;
    scenes.reserve(files.size());
    for (const auto& file : files) {
        scenes.push_back(load_scene(file));
    }
    return scenes;
}

}  // namespace refground
