#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "seat/errors.hpp"
#include "seat/tokenizer.hpp"

using namespace seat;

TEST_CASE("vocab layout: specials first, words sorted and deduplicated") {
    const Vocab v = Vocab::from_words({"zeta", "alpha", "zeta", "mid"});
    REQUIRE(v.size() == 7);
    CHECK(v.tokens[0] == "<pad>");
    CHECK(v.tokens[1] == "<bos>");
    CHECK(v.tokens[2] == "<eos>");
    CHECK(v.tokens[3] == "<unk>");
    CHECK(v.tokens[4] == "alpha");
    CHECK(v.tokens[5] == "mid");
    CHECK(v.tokens[6] == "zeta");

    // Insertion order must not matter.
    const Vocab v2 = Vocab::from_words({"mid", "zeta", "alpha"});
    CHECK(v.tokens == v2.tokens);
}

TEST_CASE("id_of and token_of agree; unknown words map to unk") {
    const Vocab v = Vocab::from_words({"one", "two"});
    CHECK(v.id_of("one") == 4);
    CHECK(v.token_of(4) == "one");
    CHECK(v.id_of("three") == Vocab::unk_id);
    CHECK(!v.contains("three"));
    CHECK_THROWS_AS(v.token_of(99), ValidationError);
    CHECK_THROWS_AS(v.token_of(-1), ValidationError);
}

TEST_CASE("split_words handles repeated and mixed whitespace") {
    CHECK(split_words("a b") == std::vector<std::string>{"a", "b"});
    CHECK(split_words("  a\t\nb  ") == std::vector<std::string>{"a", "b"});
    CHECK(split_words("") == std::vector<std::string>{});
    CHECK(split_words(" \t ") == std::vector<std::string>{});
}

TEST_CASE("normalize_text collapses to single spaces") {
    CHECK(normalize_text("  Who  is\tit ?") == "Who is it ?");
    CHECK(normalize_text("") == "");
}

TEST_CASE("tokenize round-trips in-vocabulary text") {
    const Vocab v = Vocab::from_words({"Who", "is", "Vexpal", "?"});
    const auto ids = tokenize("Who  is Vexpal ?", v);
    CHECK(ids == std::vector<int>{v.id_of("Who"), v.id_of("is"), v.id_of("Vexpal"), v.id_of("?")});
    CHECK(detokenize(ids, v) == "Who is Vexpal ?");
}

TEST_CASE("unknown words become unk tokens, not errors") {
    const Vocab v = Vocab::from_words({"known"});
    const auto ids = tokenize("known mystery", v);
    REQUIRE(ids.size() == 2);
    CHECK(ids[1] == Vocab::unk_id);
    CHECK(detokenize(ids, v) == "known <unk>");
    CHECK(tokenize("", v).empty());
}
