#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace refground {

inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kUnk = 2;
inline constexpr int kSpecialCount = 3;

inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Lowercases, treats ASCII punctuation as a separator and splits on
/// whitespace. Input without any ASCII letter yields {"<unk>"}.
std::vector<std::string> tokenize(std::string_view text);

/// A referring expression together with its cached tokenization.
class Expression {
public:
    Expression() : Expression(std::string{}) {}
    explicit Expression(std::string raw);

    const std::string& raw() const { return raw_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// True when the raw text carried at least one letter.
    bool has_content() const;

    std::string joined() const;

private:
    std::string raw_;
    std::vector<std::string> tokens_;
};

class Vocabulary {
public:
    Vocabulary();

    /// Builds from an ordered token list (non-special tokens only).
    explicit Vocabulary(std::vector<std::string> tokens);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id(std::string_view token) const;
    const std::string& token(int id) const;

    std::vector<int> encode(std::span<const std::string> tokens) const;
    std::vector<std::string> decode(std::span<const int> ids) const;

    /// Non-special tokens in id order.
    std::vector<std::string> regular_tokens() const;

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.id_to_token_ == b.id_to_token_;
    }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

/// Tokens with frequency >= min_count, ordered by descending frequency then
/// ascending lexicographic order. Throws std::invalid_argument on an empty
/// corpus or min_count < 1.
Vocabulary build_vocab(std::span<const Expression> corpus, int min_count);

using NounLexicon = std::unordered_set<std::string>;

bool contains_noun(std::span<const std::string> tokens, const NounLexicon& lexicon);

/// Corpus category words, their synonyms, and common household object nouns.
const NounLexicon& default_noun_lexicon();

/// One token per line; blank lines and lines starting with '#' are skipped.
NounLexicon load_noun_lexicon(const std::filesystem::path& path);

}  // namespace refground
