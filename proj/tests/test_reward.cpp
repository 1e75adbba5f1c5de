#include <cmath>
#include <cstdlib>

#include "doctest.h"

#include "rlfr/errors.hpp"
#include "rlfr/reward.hpp"
#include "rlfr/rng.hpp"

#include "fake_endpoints.hpp"
#include "testers.hpp"

using namespace rlfr;

namespace {

Tokens toks(const std::string& s) { return split_ws(s); }

}  // namespace

TEST_CASE("levenshtein matches hand-worked distances") {
    CHECK(levenshtein(toks("kitten"), toks("sitting")) == 1);  // whole-token substitution
    CHECK(levenshtein({"k", "i", "t", "t", "e", "n"}, {"s", "i", "t", "t", "i", "n", "g"}) == 3);
    CHECK(levenshtein(toks("a b c"), toks("a b c")) == 0);
    CHECK(levenshtein({}, toks("a b")) == 2);
    CHECK(levenshtein(toks("a b c d"), toks("b c")) == 2);
    CHECK(levenshtein(toks("a b"), toks("b a")) == 2);
    CHECK(levenshtein_ids({1, 2, 3}, {1, 3}) == 1);
    CHECK(levenshtein_ids({}, {}) == 0);
}

TEST_CASE("levenshtein equals the exhaustive edit-script oracle on small pairs") {
    const Tokens alphabet = {"x", "y", "z"};
    std::vector<Tokens> pool;
    pool.push_back({});
    // All sequences of length <= 3 over 3 symbols (40 of them).
    std::vector<Tokens> frontier = {{}};
    for (int len = 1; len <= 3; ++len) {
        std::vector<Tokens> next;
        for (const auto& prefix : frontier) {
            for (const auto& s : alphabet) {
                Tokens t = prefix;
                t.push_back(s);
                next.push_back(t);
                pool.push_back(t);
            }
        }
        frontier = std::move(next);
    }
    for (const auto& a : pool) {
        for (const auto& b : pool) {
            CAPTURE(join(a));
            CAPTURE(join(b));
            REQUIRE(levenshtein(a, b) == testers::edit_distance_oracle(a, b));
        }
    }
}

TEST_CASE("levenshtein respects metric properties on random pairs") {
    Rng rng(7);
    for (int it = 0; it < 300; ++it) {
        auto draw = [&rng] {
            Tokens t;
            const auto len = rng.below(7);
            for (std::uint64_t i = 0; i < len; ++i)
                t.push_back(std::string(1, static_cast<char>('a' + rng.below(4))));
            return t;
        };
        const Tokens a = draw(), b = draw(), c = draw();
        const auto dab = levenshtein(a, b);
        CHECK(dab == levenshtein(b, a));
        CHECK(dab <= std::max(a.size(), b.size()));
        CHECK(dab + levenshtein(b, c) >= levenshtein(a, c));
        CHECK((dab == 0) == (a == b));
    }
}

TEST_CASE("lexical similarity normalizes by the longer side") {
    // Distance 4 against max length 8.
    CHECK(lexical_similarity(toks("a b c d"), toks("a b c d e f g h")) == doctest::Approx(0.5));
    CHECK(lexical_similarity(toks("a b"), toks("a b")) == 1.0);
    CHECK(lexical_similarity(toks("a"), toks("b")) == 0.0);
    CHECK(lexical_similarity({}, {}) == 1.0);  // logged corner
    CHECK(lexical_similarity({}, toks("a b")) == 0.0);
}

TEST_CASE("batch scale statistics: mean and interpolated 90th percentile") {
    const auto two = fit_scale_stats({0.0, 1.0});
    CHECK(two.mean == doctest::Approx(0.5));
    CHECK(two.q90 == doctest::Approx(0.9));
    CHECK(two.n == 2);

    const auto ten = fit_scale_stats({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    CHECK(ten.mean == doctest::Approx(5.5));
    CHECK(ten.q90 == doctest::Approx(9.1));  // rank 8.1 between 9 and 10

    // Order-free: statistics depend on the multiset only.
    const auto shuffled = fit_scale_stats({10, 1, 9, 2, 8, 3, 7, 4, 6, 5});
    CHECK(shuffled.q90 == doctest::Approx(ten.q90));
    CHECK(shuffled.mean == doctest::Approx(ten.mean));

    CHECK_THROWS_AS(fit_scale_stats({0.5}), ConfigError);
    CHECK_THROWS_AS(fit_scale_stats({0.5, NAN}), ContractError);
}

TEST_CASE("scale_z maps the mean..q90 window onto [-1, 1]") {
    BatchScaleStats stats;
    stats.mean = 0.6;
    stats.q90 = 0.9;
    stats.n = 8;
    CHECK(scale_z(0.75, stats) == doctest::Approx(0.5));
    CHECK(scale_z(0.6, stats) == 0.0);    // lower boundary
    CHECK(scale_z(0.9, stats) == 1.0);    // upper boundary
    CHECK(scale_z(0.1, stats) == -1.0);   // below mean
    CHECK(scale_z(0.95, stats) == 1.0);   // above q90

    BatchScaleStats degenerate;
    degenerate.mean = 0.5;
    degenerate.q90 = 0.5;
    degenerate.n = 4;
    CHECK(scale_z(0.4, degenerate) == -1.0);
    CHECK(scale_z(0.5, degenerate) == 1.0);
    CHECK(scale_z(0.6, degenerate) == 1.0);

    BatchScaleStats unfit;
    CHECK_THROWS_AS(scale_z(0.5, unfit), ContractError);
}

TEST_CASE("scale_z is monotone and bounded on random triples") {
    Rng rng(11);
    for (int it = 0; it < 2000; ++it) {
        BatchScaleStats stats;
        stats.mean = rng.uniform();
        stats.q90 = stats.mean + rng.uniform();  // may be ~0 wide
        stats.n = 2;
        const double z1 = 2.0 * rng.uniform() - 0.5;
        const double z2 = 2.0 * rng.uniform() - 0.5;
        const double s1 = scale_z(z1, stats);
        const double s2 = scale_z(z2, stats);
        CHECK(s1 >= -1.0);
        CHECK(s1 <= 1.0);
        if (z1 <= z2) CHECK(s1 <= s2);
        else CHECK(s2 <= s1);
    }
}

TEST_CASE("chrf scorer: frozen value, endpoints, and bounds") {
    ChrfScorer scorer;
    const Tokens src = toks("s");
    // hyp "ab c" vs ref "ab d": per-order F-scores 3/4, 2/3, 1/2, 0 -> 23/48.
    CHECK(scorer.score(src, toks("ab c"), toks("ab d")) == doctest::Approx(23.0 / 48.0));
    CHECK(scorer.score(src, toks("a b c"), toks("a b c")) == doctest::Approx(1.0));
    CHECK(scorer.score(src, toks("xxxx"), toks("yyyy")) == doctest::Approx(0.0));
    CHECK(scorer.score(src, {}, {}) == 1.0);
    CHECK(scorer.score(src, {}, toks("a")) == 0.0);
    CHECK(scorer.score(src, toks("a"), {}) == 0.0);

    Rng rng(3);
    for (int it = 0; it < 200; ++it) {
        Tokens a, b;
        for (std::uint64_t i = 0, n = rng.below(6); i < n; ++i)
            a.push_back(std::string(1, static_cast<char>('a' + rng.below(5))));
        for (std::uint64_t i = 0, n = rng.below(6); i < n; ++i)
            b.push_back(std::string(1, static_cast<char>('a' + rng.below(5))));
        const double s = scorer.score(src, a, b);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        CHECK(scorer.score(src, a, a) == doctest::Approx(1.0));
    }
}

TEST_CASE("semantic score maps [0,1] onto [-1,1]") {
    ChrfScorer scorer;
    const Tokens src = toks("s");
    CHECK(semantic_score(scorer, src, toks("a b"), toks("a b")) == doctest::Approx(1.0));
    CHECK(semantic_score(scorer, src, toks("xxxx"), toks("yyyy")) == doctest::Approx(-1.0));
    const double mid = semantic_score(scorer, src, toks("ab c"), toks("ab d"));
    CHECK(mid == doctest::Approx(2.0 * 23.0 / 48.0 - 1.0));
}

TEST_CASE("alpha presets") {
    CHECK(alpha_from_preset("lexical") == 1.0);
    CHECK(alpha_from_preset("semantic") == 0.0);
    CHECK(alpha_from_preset("balanced") == 0.5);
    CHECK_THROWS_AS(alpha_from_preset("other"), ConfigError);
}

TEST_CASE("composite reward blends the two channels") {
    const auto all_edit = composite_reward(0.7, 0.4, -0.2, 1.0);
    CHECK(all_edit.r == doctest::Approx(0.4));
    CHECK(all_edit.z == 0.7);
    CHECK(all_edit.r_edit == 0.4);
    CHECK(all_edit.r_sem == -0.2);

    const auto all_sem = composite_reward(0.7, 0.4, -0.2, 0.0);
    CHECK(all_sem.r == doctest::Approx(-0.2));

    const auto balanced = composite_reward(0.7, 0.4, -0.2, 0.5);
    CHECK(balanced.r == doctest::Approx(0.1));
    CHECK(balanced.alpha == 0.5);

    CHECK_THROWS_AS(composite_reward(0.7, 0.4, -0.2, 1.5), ConfigError);
    CHECK_THROWS_AS(composite_reward(NAN, 0.4, -0.2, 0.5), ContractError);
}

TEST_CASE("remote scorer round trip and validation") {
    testers::FakeScoreServer server([](const nlohmann::json& req) {
        // Score is high iff hypothesis equals reference.
        return req.at("hypothesis") == req.at("reference") ? 0.9 : 0.25;
    });
    RemoteScorerConfig config;
    config.endpoint = server.endpoint();
    RemoteScorer scorer(config);
    CHECK(scorer.score(toks("s"), toks("a b"), toks("a b")) == doctest::Approx(0.9));
    CHECK(scorer.score(toks("s"), toks("a b"), toks("a c")) == doctest::Approx(0.25));
    CHECK(server.calls() == 2);

    SUBCASE("reference-free requests omit the reference field") {
        testers::FakeScoreServer free_server([](const nlohmann::json& req) {
            return req.contains("reference") ? -1.0 : 0.5;  // -1 would be rejected
        });
        RemoteScorerConfig free_config;
        free_config.endpoint = free_server.endpoint();
        free_config.reference_free = true;
        RemoteScorer free_scorer(free_config);
        CHECK(free_scorer.score(toks("s"), toks("a"), toks("b")) == doctest::Approx(0.5));
        const auto bodies = free_server.bodies();
        REQUIRE(bodies.size() == 1);
        const auto body = nlohmann::json::parse(bodies[0]);
        CHECK(!body.contains("reference"));
        CHECK(body.contains("source"));
        CHECK(body.contains("hypothesis"));
    }

    SUBCASE("out-of-range scores are rejected at the mapping boundary") {
        testers::FakeScoreServer bad_server([](const nlohmann::json&) { return 1.5; });
        RemoteScorerConfig bad_config;
        bad_config.endpoint = bad_server.endpoint();
        RemoteScorer bad_scorer(bad_config);
        CHECK_THROWS_AS(semantic_score(bad_scorer, toks("s"), toks("a"), toks("b")), RewardError);
    }

    SUBCASE("unreachable endpoint fails with a reward error") {
        RemoteScorerConfig dead;
        dead.endpoint = "http://127.0.0.1:1/score";
        dead.timeout_s = 0.2;
        RemoteScorer dead_scorer(dead);
        CHECK_THROWS_AS(dead_scorer.score(toks("s"), toks("a"), toks("b")), RewardError);
    }
}
