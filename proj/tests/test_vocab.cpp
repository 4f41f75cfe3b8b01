#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "refground/vocab.hpp"

using namespace refground;

TEST_CASE("tokenize lowercases and splits on punctuation") {
    CHECK(tokenize("The Red Cup.") == std::vector<std::string>{"the", "red", "cup"});
    CHECK(tokenize("pick-up the  LEFT  bottle!") ==
          std::vector<std::string>{"pick", "up", "the", "left", "bottle"});
}

TEST_CASE("tokenize maps letterless input to a single unknown token") {
    CHECK(tokenize("") == std::vector<std::string>{"<unk>"});
    CHECK(tokenize("  42 !? ") == std::vector<std::string>{"<unk>"});
}

TEST_CASE("tokenize is idempotent on its joined output") {
    for (const char* text : {"The Red Cup.", "pick-up the  LEFT  bottle!", "", "a <eos> b", "x,y;z"}) {
        const Expression once(text);
        CHECK(tokenize(once.joined()) == once.tokens());
    }
}

TEST_CASE("expression caches its tokenization") {
    const Expression e("The Left Mug");
    CHECK(e.raw() == "The Left Mug");
    CHECK(e.tokens() == tokenize("The Left Mug"));
    CHECK(e.has_content());
    CHECK_FALSE(Expression("...").has_content());
    CHECK_FALSE(Expression("...").tokens().empty());
}

TEST_CASE("build_vocab orders by frequency then lexicographically") {
    const std::vector<Expression> corpus{Expression("a b"), Expression("a")};
    const auto vocab = build_vocab(corpus, 1);
    REQUIRE(vocab.size() == 5);
    CHECK(vocab.token(0) == "<bos>");
    CHECK(vocab.token(1) == "<eos>");
    CHECK(vocab.token(2) == "<unk>");
    CHECK(vocab.id("a") == 3);
    CHECK(vocab.id("b") == 4);

    const std::vector<Expression> ties{Expression("zeta alpha mid")};
    CHECK(build_vocab(ties, 1).regular_tokens() == std::vector<std::string>{"alpha", "mid", "zeta"});
}

TEST_CASE("build_vocab threshold maps rare tokens to unknown") {
    const std::vector<Expression> corpus{Expression("a b"), Expression("a")};
    const auto vocab = build_vocab(corpus, 2);
    CHECK(vocab.size() == 4);
    CHECK(vocab.id("a") == 3);
    CHECK(vocab.id("b") == kUnk);
    const std::vector<std::string> words{"a", "b"};
    CHECK(vocab.encode(words) == std::vector<int>{3, kUnk});
}

TEST_CASE("build_vocab rejects bad input") {
    CHECK_THROWS_AS(build_vocab(std::vector<Expression>{}, 1), std::invalid_argument);
    const std::vector<Expression> corpus{Expression("a")};
    CHECK_THROWS_AS(build_vocab(corpus, 0), std::invalid_argument);
}

TEST_CASE("encode and decode are inverse over every id") {
    const std::vector<Expression> corpus{Expression("the red cup"), Expression("the blue mug left")};
    const auto vocab = build_vocab(corpus, 1);
    for (int id = 0; id < vocab.size(); ++id) {
        const std::vector<int> ids{id};
        const auto words = vocab.decode(ids);
        CHECK(vocab.encode(words) == ids);
    }
    CHECK_THROWS_AS(vocab.token(vocab.size()), std::out_of_range);
}

TEST_CASE("vocabulary ids are deterministic") {
    const std::vector<Expression> corpus{Expression("b c a"), Expression("c a"), Expression("c")};
    CHECK(build_vocab(corpus, 1) == build_vocab(corpus, 1));
    CHECK(build_vocab(corpus, 1).regular_tokens() == std::vector<std::string>{"c", "a", "b"});
}

TEST_CASE("contains_noun against the default lexicon") {
    const auto& lexicon = default_noun_lexicon();
    CHECK(contains_noun(std::vector<std::string>{"the", "left", "cup"}, lexicon));
    CHECK_FALSE(contains_noun(std::vector<std::string>{"top", "left"}, lexicon));
    CHECK(contains_noun(std::vector<std::string>{"leftmost", "bottle", "behind"}, lexicon));
    for (const char* synonym : {"mug", "flask", "tumbler", "tin", "notebook", "carton"}) {
        CHECK(lexicon.contains(synonym));
    }
}

TEST_CASE("noun lexicon file skips blanks and comments") {
    const auto path = std::filesystem::temp_directory_path() / "refground_nouns_test.txt";
    {
        std::ofstream out(path);
        out << "# nouns\ncup\n\n  Plate \n";
    }
    const auto lexicon = load_noun_lexicon(path);
    std::filesystem::remove(path);
    CHECK(lexicon.size() == 2);
    CHECK(lexicon.contains("cup"));
    CHECK(lexicon.contains("plate"));
    CHECK_THROWS(load_noun_lexicon(path));
}
