#include <cmath>

#include "doctest.h"

#include "rlfr/errors.hpp"
#include "rlfr/eval.hpp"
#include "rlfr/sft.hpp"

using namespace rlfr;

namespace {

SyntheticTaskSpec plain_task() {
    SyntheticTaskSpec spec;
    spec.alphabet_size = 4;
    spec.mapping_seed = 2;
    spec.len_min = 2;
    spec.len_max = 3;
    spec.entity_prob = 0.0;
    return spec;
}

const Corpus& shared_corpus() {
    static const Corpus corpus = generate_corpus(plain_task(), 30, 5);
    return corpus;
}

// One policy trained to exact memorization of shared_corpus(), reused
// read-only across the cases below (training is deterministic).
const PolicyParams& memorized() {
    static const PolicyParams params = [] {
        PolicyDims dims;
        dims.d = 16;
        dims.context_len = 32;
        PolicyParams p = PolicyParams::init(vocab_for_task(plain_task()), dims, 3);
        SftConfig config;
        config.epochs = 120;
        config.batch_size = 8;
        config.lr = 1.0;
        config.holdout_fraction = 0.0;
        config.patience = 0;
        train_sft(p, shared_corpus(), config);
        return p;
    }();
    return params;
}

}  // namespace

TEST_CASE("a memorized policy scores perfectly on its training data") {
    const Corpus& corpus = shared_corpus();
    const PolicyParams& params = memorized();
    ChrfScorer scorer;

    const EvalResult r = evaluate(params, corpus, scorer);
    CHECK(r.n_examples == 30);
    CHECK(r.exact_match == 1.0);
    CHECK(r.adequacy == 1.0);
    CHECK(r.n_entities == 0);
    CHECK(std::isnan(r.entity_acc));  // no annotations: not applicable, not zero

    SUBCASE("evaluation is pure") {
        const EvalResult again = evaluate(params, corpus, scorer);
        CHECK(again.exact_match == r.exact_match);
        CHECK(again.adequacy == r.adequacy);
    }

    SUBCASE("one corrupted gold costs exactly one exact match") {
        Corpus edited = corpus;
        auto& gold = *edited[0].gold;
        gold[0] = gold[0] == "a" ? "b" : "a";  // stay inside the vocabulary
        const EvalResult worse = evaluate(params, edited, scorer);
        CHECK(worse.exact_match == doctest::Approx(29.0 / 30.0));
        CHECK(worse.adequacy < 1.0);
        CHECK(worse.adequacy > 0.9);
    }
}

TEST_CASE("entity accuracy counts annotated renderings in the decode") {
    // The decode equals the gold here, so annotating a gold span must hit and
    // annotating a token that never occurs must miss; unannotated examples
    // contribute nothing.
    Corpus corpus = shared_corpus();
    const PolicyParams& params = memorized();
    ChrfScorer scorer;
    REQUIRE(evaluate(params, corpus, scorer).exact_match == 1.0);

    for (std::size_t i = 0; i + 1 < corpus.size(); ++i) {
        EntityAnnotation hit;
        hit.start = 0;
        hit.len = 1;
        hit.target = {(*corpus[i].gold)[0]};
        corpus[i].entities.push_back(hit);
    }
    EntityAnnotation miss;
    miss.start = 0;
    miss.len = 1;
    miss.target = {"zz"};  // never a task symbol
    corpus[4].entities.push_back(miss);

    const EvalResult r = evaluate(params, corpus, scorer);
    CHECK(r.n_entities == 30);  // 29 hits + 1 planted miss
    CHECK(r.entity_acc == doctest::Approx(29.0 / 30.0));
    CHECK(r.exact_match == 1.0);
}

TEST_CASE("evaluation rejects incompatible inputs") {
    const SyntheticTaskSpec spec = plain_task();
    const Corpus corpus = generate_corpus(spec, 4, 5);
    PolicyDims dims;
    dims.d = 8;
    const PolicyParams params = PolicyParams::init(vocab_for_task(spec), dims, 1);
    ChrfScorer scorer;

    SUBCASE("empty corpus") {
        CHECK_THROWS_AS(evaluate(params, Corpus{}, scorer), ConfigError);
    }
    SUBCASE("missing gold") {
        Corpus bad = corpus;
        bad[1].gold.reset();
        CHECK_THROWS_AS(evaluate(params, bad, scorer), ConfigError);
    }
    SUBCASE("source token outside the checkpoint vocabulary") {
        Corpus bad = corpus;
        bad[0].source[0] = "zzz";
        CHECK_THROWS_AS(evaluate(params, bad, scorer), ConfigError);
    }
    SUBCASE("gold token outside the checkpoint vocabulary") {
        Corpus bad = corpus;
        (*bad[0].gold)[0] = "zzz";
        CHECK_THROWS_AS(evaluate(params, bad, scorer), ConfigError);
    }
    SUBCASE("unknown direction") {
        Corpus bad = corpus;
        bad[2].direction = "xx-en";
        CHECK_THROWS_AS(evaluate(params, bad, scorer), ConfigError);
    }
}

TEST_CASE("side-by-side comparison keeps input order and needs two entrants") {
    const Corpus& corpus = shared_corpus();
    ChrfScorer scorer;

    PolicyDims dims;
    dims.d = 16;
    dims.context_len = 32;
    PolicyParams fresh = PolicyParams::init(vocab_for_task(plain_task()), dims, 3);
    const PolicyParams& trained = memorized();

    CHECK_THROWS_AS(compare({{"only", fresh}}, corpus, scorer), ConfigError);

    const auto rows = compare({{"fresh", fresh}, {"trained", trained}}, corpus, scorer);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].name == "fresh");
    CHECK(rows[1].name == "trained");
    CHECK(rows[0].result.exact_match < rows[1].result.exact_match);
    CHECK(rows[1].result.exact_match == 1.0);

    const std::string table = comparison_table(rows);
    CHECK(table.find("checkpoint") != std::string::npos);
    CHECK(table.find("fresh") != std::string::npos);
    CHECK(table.find("trained") != std::string::npos);
    CHECK(table.find("exact_match") != std::string::npos);
}

TEST_CASE("comparison csv renders a fixed schema with na for missing entities") {
    std::vector<CompareRow> rows;
    CompareRow a;
    a.name = "sft";
    a.result.adequacy = 0.5;
    a.result.exact_match = 0.25;
    a.result.entity_acc = std::nan("");
    a.result.n_examples = 12;
    a.result.n_entities = 0;
    CompareRow b;
    b.name = "rlfr";
    b.result.adequacy = 0.875;
    b.result.exact_match = 1.0;
    b.result.entity_acc = 0.6875;
    b.result.n_examples = 12;
    b.result.n_entities = 16;
    rows.push_back(a);
    rows.push_back(b);

    CHECK(comparison_csv(rows) ==
          "checkpoint,adequacy,exact_match,entity_acc,n_examples\n"
          "sft,0.5,0.25,na,12\n"
          "rlfr,0.875,1,0.6875,12\n");
}
