#include <algorithm>
#include <set>
#include <string>

#include "doctest.h"

#include "rlfr/corpus.hpp"
#include "rlfr/errors.hpp"

#include "testers.hpp"

using namespace rlfr;

namespace {

SyntheticTaskSpec abc_cipher() {
    SyntheticTaskSpec spec;
    spec.kind = TaskKind::substitution_cipher;
    spec.alphabet_size = 3;
    spec.explicit_mapping = {{"a", "b"}, {"b", "c"}, {"c", "a"}};
    spec.len_min = 2;
    spec.len_max = 4;
    spec.entity_prob = 0.0;
    return spec;
}

}  // namespace

TEST_CASE("vocab building, lookup, and round trip") {
    Vocab v = Vocab::build({"x", "y", "z"});
    CHECK(v.size() == 7);  // 4 specials + 3 symbols
    CHECK(v.symbol(Vocab::kBos) == "<bos>");
    CHECK(v.symbol(Vocab::kEos) == "<eos>");
    CHECK(v.id("x") == 4);
    CHECK(v.contains("z"));
    CHECK(!v.contains("w"));
    CHECK_THROWS_AS(v.id("w"), ConfigError);
    CHECK(v.id_or_unk("w") == Vocab::kUnk);

    const std::vector<int> ids = v.encode({"x", "z"});
    CHECK(v.decode(ids) == Tokens{"x", "z"});
    CHECK_THROWS_AS(v.encode({"nope"}), ConfigError);
    CHECK_THROWS_AS(v.symbol(99), ContractError);

    CHECK_THROWS_AS(Vocab::build({"x", "x"}), ConfigError);
    CHECK_THROWS_AS(Vocab::build({"<eos>"}), ConfigError);

    testers::TmpDir tmp("vocab");
    save_vocab(tmp.sub("v.txt"), v);
    const Vocab back = load_vocab(tmp.sub("v.txt"));
    CHECK(back == v);

    CHECK_THROWS_AS(load_vocab(tmp.sub("missing.txt")), IoError);
}

TEST_CASE("explicit cipher mapping transduces symbol by symbol") {
    const SyntheticTaskSpec spec = abc_cipher();
    validate(spec);
    CHECK(transduce(spec, {"a", "b", "c"}) == Tokens{"b", "c", "a"});
    CHECK(transduce(spec, {"c", "c"}) == Tokens{"a", "a"});
}

TEST_CASE("entities render as their target names inside the cipher") {
    SyntheticTaskSpec spec = abc_cipher();
    spec.entity_table = default_entity_table(2);
    REQUIRE(spec.entity_table[0].source_name == Tokens{"@e0", "@n0"});
    REQUIRE(spec.entity_table[0].target_name == Tokens{"@E0", "@N0"});
    CHECK(transduce(spec, {"a", "@e0", "@n0", "b"}) == Tokens{"b", "@E0", "@N0", "c"});
    CHECK(transduce(spec, {"@e1", "@n1"}) == Tokens{"@E1", "@N1"});
}

TEST_CASE("reorder task reverses unit order with entities as atomic units") {
    SyntheticTaskSpec spec = abc_cipher();
    spec.kind = TaskKind::word_mapping_with_reorder;
    spec.entity_table = default_entity_table(1);
    CHECK(transduce(spec, {"a", "b"}) == Tokens{"c", "b"});
    CHECK(transduce(spec, {"a", "@e0", "@n0"}) == Tokens{"@E0", "@N0", "b"});
    CHECK(transduce(spec, {"@e0", "@n0", "c"}) == Tokens{"a", "@E0", "@N0"});
}

TEST_CASE("identity mapping sentinel keeps ordinary tokens fixed") {
    SyntheticTaskSpec spec;
    spec.alphabet_size = 4;
    spec.mapping_seed = kIdentityMappingSeed;
    spec.entity_prob = 0.0;
    const auto mapping = task_mapping(spec);
    for (const auto& [from, to] : mapping) CHECK(from == to);
    CHECK(transduce(spec, {"a", "d"}) == Tokens{"a", "d"});
}

TEST_CASE("seeded mapping is a bijection and deterministic") {
    SyntheticTaskSpec spec;
    spec.alphabet_size = 10;
    spec.mapping_seed = 7;
    const auto mapping = task_mapping(spec);
    CHECK(mapping.size() == 10);
    std::set<std::string> targets;
    for (const auto& [from, to] : mapping) targets.insert(to);
    CHECK(targets.size() == 10);  // injective over the alphabet
    CHECK(task_mapping(spec) == mapping);
    spec.mapping_seed = 8;
    CHECK(task_mapping(spec) != mapping);
}

TEST_CASE("task spec validation rejects malformed settings") {
    SyntheticTaskSpec spec;
    spec.alphabet_size = 0;
    CHECK_THROWS_AS(validate(spec), ConfigError);
    spec = SyntheticTaskSpec{};
    spec.len_min = 5;
    spec.len_max = 3;
    CHECK_THROWS_AS(validate(spec), ConfigError);
    spec = SyntheticTaskSpec{};
    spec.entity_prob = 1.5;
    CHECK_THROWS_AS(validate(spec), ConfigError);
    spec = SyntheticTaskSpec{};
    spec.explicit_mapping = {{"a", "a"}, {"b", "a"}};  // not a bijection
    spec.alphabet_size = 2;
    CHECK_THROWS_AS(validate(spec), ConfigError);
}

TEST_CASE("ordinary alphabet naming") {
    CHECK(ordinary_alphabet(3) == Tokens{"a", "b", "c"});
    CHECK(ordinary_alphabet(26).back() == "z");
    const Tokens big = ordinary_alphabet(28);
    CHECK(big.size() == 28);
    CHECK(big[0] != big[27]);
}

TEST_CASE("generated corpora are deterministic and self-consistent") {
    SyntheticTaskSpec spec;
    spec.alphabet_size = 6;
    spec.mapping_seed = 3;
    spec.entity_table = default_entity_table(3);
    spec.len_min = 2;
    spec.len_max = 5;
    spec.entity_prob = 0.75;
    const Corpus corpus = generate_corpus(spec, 200, 42);
    REQUIRE(corpus.size() == 200);

    const Corpus again = generate_corpus(spec, 200, 42);
    std::set<std::string> ids;
    std::size_t with_entities = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& ex = corpus[i];
        ids.insert(ex.id);
        REQUIRE(ex.gold.has_value());
        CHECK(*ex.gold == transduce(spec, ex.source));
        CHECK(ex.direction == spec.direction);
        CHECK(again[i].source == ex.source);
        CHECK(again[i].id == ex.id);
        std::size_t ordinary = ex.source.size();
        for (const auto& ent : ex.entities) {
            REQUIRE(ent.start + ent.len <= ex.source.size());
            REQUIRE(!ent.target.empty());
            // The annotated span must render as the target somewhere in gold.
            CHECK(contains_span(*ex.gold, ent.target));
            ordinary -= ent.len;
        }
        CHECK(ordinary >= static_cast<std::size_t>(spec.len_min));
        CHECK(ordinary <= static_cast<std::size_t>(spec.len_max));
        if (!ex.entities.empty()) ++with_entities;
    }
    CHECK(ids.size() == corpus.size());
    // entity_prob 0.75 over 200 draws: expect roughly 150 annotated examples.
    CHECK(with_entities > 100);
    CHECK(with_entities < 190);

    const Corpus other_seed = generate_corpus(spec, 200, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (other_seed[i].source != corpus[i].source) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("corpus corruption replaces tokens from the pool") {
    SyntheticTaskSpec spec = abc_cipher();
    const Corpus clean = generate_corpus(spec, 120, 9);
    const Tokens pool = {"a", "b", "c"};

    const Corpus untouched = corrupt_corpus(clean, 0.0, pool, 5);
    for (std::size_t i = 0; i < clean.size(); ++i) CHECK(*untouched[i].gold == *clean[i].gold);

    // Rates live in [0, 1); near the top almost every token flips, every
    // replacement differs from the original and comes from the pool.
    const Corpus wrecked = corrupt_corpus(clean, 0.95, pool, 5);
    std::size_t flipped = 0, total = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        REQUIRE(wrecked[i].gold->size() == clean[i].gold->size());
        CHECK(wrecked[i].source == clean[i].source);  // sources never corrupt
        for (std::size_t t = 0; t < clean[i].gold->size(); ++t) {
            ++total;
            if ((*wrecked[i].gold)[t] != (*clean[i].gold)[t]) ++flipped;
            if ((*clean[i].gold)[t] == (*wrecked[i].gold)[t]) continue;
            CHECK(std::find(pool.begin(), pool.end(), (*wrecked[i].gold)[t]) != pool.end());
        }
    }
    CHECK(flipped > total * 9 / 10);
    CHECK(flipped < total);

    const Corpus some = corrupt_corpus(clean, 0.2, pool, 5);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < clean.size(); ++i)
        for (std::size_t t = 0; t < clean[i].gold->size(); ++t)
            if ((*some[i].gold)[t] != (*clean[i].gold)[t]) ++changed;
    // Binomial(total, 0.2): loose 5-sigma style band.
    CHECK(changed > total / 10);
    CHECK(changed < total * 3 / 10);

    const Corpus replay = corrupt_corpus(clean, 0.2, pool, 5);
    for (std::size_t i = 0; i < clean.size(); ++i) CHECK(*replay[i].gold == *some[i].gold);

    CHECK_THROWS_AS(corrupt_corpus(clean, 0.5, {"only"}, 1), ConfigError);
    CHECK_THROWS_AS(corrupt_corpus(clean, -0.1, pool, 1), ConfigError);
    CHECK_THROWS_AS(corrupt_corpus(clean, 1.0, pool, 1), ConfigError);
}

TEST_CASE("corpus files round trip") {
    SyntheticTaskSpec spec = abc_cipher();
    spec.entity_table = default_entity_table(2);
    spec.entity_prob = 0.9;
    const Corpus corpus = generate_corpus(spec, 40, 4);
    testers::TmpDir tmp("corpus");
    save_corpus(tmp.sub("c.jsonl"), corpus);
    const Corpus back = load_corpus(tmp.sub("c.jsonl"));
    REQUIRE(back.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(back[i].id == corpus[i].id);
        CHECK(back[i].source == corpus[i].source);
        CHECK(*back[i].gold == *corpus[i].gold);
        CHECK(back[i].direction == corpus[i].direction);
        REQUIRE(back[i].entities.size() == corpus[i].entities.size());
        for (std::size_t j = 0; j < corpus[i].entities.size(); ++j) {
            CHECK(back[i].entities[j].start == corpus[i].entities[j].start);
            CHECK(back[i].entities[j].len == corpus[i].entities[j].len);
            CHECK(back[i].entities[j].target == corpus[i].entities[j].target);
        }
    }
}

TEST_CASE("corpus loader reports the offending line") {
    testers::TmpDir tmp("corpus-err");

    SUBCASE("invalid json") {
        testers::write_file(tmp.sub("bad.jsonl"),
                            R"({"id":"x1","source":"a","direction":"en-xx"})"
                            "\nnot json\n");
        try {
            load_corpus(tmp.sub("bad.jsonl"));
            FAIL("expected a corpus error");
        } catch (const CorpusError& e) {
            CHECK(std::string(e.what()).find(":2:") != std::string::npos);
        }
    }

    SUBCASE("duplicate ids") {
        testers::write_file(tmp.sub("dup.jsonl"),
                            R"({"id":"x1","source":"a","direction":"en-xx"})"
                            "\n"
                            R"({"id":"x1","source":"b","direction":"en-xx"})"
                            "\n");
        try {
            load_corpus(tmp.sub("dup.jsonl"));
            FAIL("expected a corpus error");
        } catch (const CorpusError& e) {
            CHECK(std::string(e.what()).find(":2:") != std::string::npos);
            CHECK(std::string(e.what()).find("x1") != std::string::npos);
        }
    }

    SUBCASE("empty source") {
        testers::write_file(tmp.sub("empty.jsonl"),
                            R"({"id":"x1","source":"","direction":"en-xx"})"
                            "\n");
        CHECK_THROWS_AS(load_corpus(tmp.sub("empty.jsonl")), CorpusError);
    }

    SUBCASE("entity span out of bounds") {
        testers::write_file(
            tmp.sub("oob.jsonl"),
            R"({"id":"x1","source":"a b","direction":"en-xx","entities":[{"start":1,"len":3,"target":"T"}]})"
            "\n");
        CHECK_THROWS_AS(load_corpus(tmp.sub("oob.jsonl")), CorpusError);
    }

    SUBCASE("overlapping entity spans") {
        testers::write_file(
            tmp.sub("overlap.jsonl"),
            R"({"id":"x1","source":"a b c","direction":"en-xx","entities":[{"start":0,"len":2,"target":"T"},{"start":1,"len":1,"target":"U"}]})"
            "\n");
        CHECK_THROWS_AS(load_corpus(tmp.sub("overlap.jsonl")), CorpusError);
    }

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_corpus(tmp.sub("absent.jsonl")), CorpusError);
    }
}

TEST_CASE("task vocabulary covers everything a task can emit") {
    SyntheticTaskSpec spec;
    spec.alphabet_size = 5;
    spec.mapping_seed = 2;
    spec.entity_table = default_entity_table(2);
    const Vocab v = vocab_for_task(spec);
    CHECK(v.contains("<sep>"));
    CHECK(v.contains("<" + spec.direction + ">"));  // prompt form of the direction tag
    for (const auto& s : ordinary_alphabet(5)) CHECK(v.contains(s));
    for (const auto& e : spec.entity_table) {
        for (const auto& t : e.source_name) CHECK(v.contains(t));
        for (const auto& t : e.target_name) CHECK(v.contains(t));
    }
    const Corpus corpus = generate_corpus(spec, 50, 1);
    for (const auto& ex : corpus) {
        for (const auto& t : ex.source) CHECK(v.contains(t));
        for (const auto& t : *ex.gold) CHECK(v.contains(t));
    }
    // Stable ordering: same spec, same vocabulary.
    CHECK(vocab_for_task(spec) == v);
}
