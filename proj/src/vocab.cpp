#include "refground/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace refground {

namespace {

bool is_special(std::string_view word) {
    return word == kBosToken || word == kEosToken || word == kUnkToken;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    const bool has_letter = std::any_of(text.begin(), text.end(), [](char ch) {
        return std::isalpha(static_cast<unsigned char>(ch)) != 0;
    });
    if (!has_letter) {
        return {std::string(kUnkToken)};
    }

    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(std::move(word));
            word.clear();
        }
    };

    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto ch = static_cast<unsigned char>(text[pos]);
        // Special markers survive as atomic words so tokenize stays idempotent.
        if (ch == '<') {
            bool matched = false;
            for (auto special : {kBosToken, kEosToken, kUnkToken}) {
                if (text.substr(pos, special.size()) == special) {
                    flush();
                    tokens.emplace_back(special);
                    pos += special.size();
                    matched = true;
                    break;
                }
            }
            if (matched) {
                continue;
            }
        }
        if (std::isspace(ch) != 0 || std::ispunct(ch) != 0) {
            flush();
        } else {
            word.push_back(static_cast<char>(std::tolower(ch)));
        }
        ++pos;
    }
    flush();
    if (tokens.empty()) {
        tokens.emplace_back(kUnkToken);
    }
    return tokens;
}

Expression::Expression(std::string raw) : raw_(std::move(raw)), tokens_(tokenize(raw_)) {}

bool Expression::has_content() const {
    return std::any_of(raw_.begin(), raw_.end(), [](char ch) {
        return std::isalpha(static_cast<unsigned char>(ch)) != 0;
    });
}

std::string Expression::joined() const {
    std::string out;
    for (const auto& token : tokens_) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += token;
    }
    return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
    id_to_token_ = {std::string(kBosToken), std::string(kEosToken), std::string(kUnkToken)};
    for (auto& token : tokens) {
        if (is_special(token)) {
            throw std::invalid_argument("special token in regular vocabulary: " + token);
        }
        if (token_to_id_.count(token) != 0) {
            throw std::invalid_argument("duplicate vocabulary token: " + token);
        }
        token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
        id_to_token_.push_back(std::move(token));
    }
    for (int i = 0; i < kSpecialCount; ++i) {
        token_to_id_.emplace(id_to_token_[i], i);
    }
}

int Vocabulary::id(std::string_view token) const {
    const auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw std::out_of_range("token id out of vocabulary range: " + std::to_string(id));
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& token : tokens) {
        ids.push_back(id(token));
    }
    return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) {
        out.push_back(token(i));
    }
    return out;
}

std::vector<std::string> Vocabulary::regular_tokens() const {
    return {id_to_token_.begin() + kSpecialCount, id_to_token_.end()};
}

Vocabulary build_vocab(std::span<const Expression> corpus, int min_count) {
    if (corpus.empty()) {
        throw std::invalid_argument("build_vocab: empty corpus");
    }
    if (min_count < 1) {
        throw std::invalid_argument("build_vocab: min_count must be >= 1");
    }
    std::map<std::string, int> counts;
    for (const auto& expression : corpus) {
        for (const auto& token : expression.tokens()) {
            if (!is_special(token)) {
                ++counts[token];
            }
        }
    }
    std::vector<std::pair<std::string, int>> kept;
    for (const auto& [token, count] : counts) {
        if (count >= min_count) {
            kept.emplace_back(token, count);
        }
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second > b.second;
    });
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (auto& [token, count] : kept) {
        tokens.push_back(std::move(token));
    }
    return Vocabulary(std::move(tokens));
}

bool contains_noun(std::span<const std::string> tokens, const NounLexicon& lexicon) {
    return std::any_of(tokens.begin(), tokens.end(),
                       [&](const std::string& token) { return lexicon.count(token) != 0; });
}

const NounLexicon& default_noun_lexicon() {
    static const NounLexicon lexicon = {
        "cup",   "mug",    "bottle",   "flask",  "glass",  "tumbler", "can",    "tin",
        "book",  "novel",  "box",      "carton", "bowl",   "plate",   "jar",    "spoon",
        "fork",  "knife",  "pen",      "phone",  "remote", "toy",     "ball",   "apple",
        "table", "object", "thing",    "item",   "lid",    "pot",     "kettle", "vase",
        "chair", "sponge", "notebook", "case",   "bag",    "dish",    "tray",   "container",
    };
    return lexicon;
}

NounLexicon load_noun_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open noun lexicon: " + path.string());
    }
    NounLexicon lexicon;
    std::string line;
    while (std::getline(in, line)) {
        const auto tokens = tokenize(line);
        if (line.empty() || line.front() == '#' || tokens.front() == kUnkToken) {
            continue;
        }
        for (const auto& token : tokens) {
            lexicon.insert(token);
        }
    }
    if (lexicon.empty()) {
        throw std::runtime_error("noun lexicon is empty: " + path.string());
    }
    return lexicon;
}

}  // namespace refground
