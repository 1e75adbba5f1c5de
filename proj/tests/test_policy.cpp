#include <cmath>
#include <set>

#include "doctest.h"

#include "rlfr/corpus.hpp"
#include "rlfr/errors.hpp"
#include "rlfr/policy.hpp"
#include "rlfr/rng.hpp"

#include "testers.hpp"

using namespace rlfr;

namespace {

Vocab tiny_vocab() { return Vocab::build({"a", "b", "c", "<sep>", "<en-xx>"}); }

PolicyParams tiny_params(std::uint64_t seed = 3) {
    PolicyDims dims;
    dims.d = 6;
    dims.context_len = 32;
    return PolicyParams::init(tiny_vocab(), dims, seed);
}

}  // namespace

TEST_CASE("prompt template is direction tag, source, separator") {
    CHECK(prompt_tokens("en-xx", {"a", "b"}) == Tokens{"<en-xx>", "a", "b", "<sep>"});
    const Vocab v = tiny_vocab();
    const auto ids = encode_prompt(v, "en-xx", {"a"});
    REQUIRE(ids.size() == 3);
    CHECK(v.symbol(ids[0]) == "<en-xx>");
    CHECK(v.symbol(ids[2]) == "<sep>");
}

TEST_CASE("generation cap grows with the source") {
    CHECK(default_t_max(3) == 14);
    CHECK(default_t_max(0) == 8);
    for (std::size_t n = 1; n < 30; ++n) {
        CHECK(default_t_max(n) > 2 * static_cast<std::int64_t>(n));
        CHECK(default_t_max(n) > default_t_max(n - 1));
    }
}

TEST_CASE("all-zero parameters give the uniform distribution") {
    PolicyDims dims;
    dims.d = 4;
    const Vocab v = tiny_vocab();
    PolicyParams params = PolicyParams::zeros(v, dims);
    const auto prompt = encode_prompt(v, "en-xx", {"a", "b"});
    const auto target = v.encode({"b", "c"});
    const auto lps = logprob_seq(params, prompt, target);
    REQUIRE(lps.size() == 2);
    for (double lp : lps) CHECK(lp == doctest::Approx(-std::log(v.size())).epsilon(1e-12));
}

TEST_CASE("next-token probabilities sum to one") {
    PolicyParams params = tiny_params();
    const Vocab& v = params.vocab;
    const auto prompt = encode_prompt(v, "en-xx", {"b", "a"});
    double total = 0.0;
    for (int id = 0; id < v.size(); ++id) {
        const auto lps = logprob_seq(params, prompt, {id});
        total += std::exp(lps.at(0));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    // Whole-sequence version: all two-token continuations cover probability 1.
    double total2 = 0.0;
    for (int first = 0; first < v.size(); ++first) {
        for (int second = 0; second < v.size(); ++second) {
            const auto lps = logprob_seq(params, prompt, {first, second});
            total2 += std::exp(lps[0] + lps[1]);
        }
    }
    CHECK(total2 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sampling is deterministic in the seed and records exact log-probs") {
    PolicyParams params = tiny_params();
    const auto prompt = encode_prompt(params.vocab, "en-xx", {"a", "b", "c"});
    const PolicySnapshot snap = make_snapshot(params, 1);

    const auto hyps = sample_k(snap, prompt, 4, 1.0, 99, 12, "p0");
    REQUIRE(hyps.size() == 4);
    const auto again = sample_k(snap, prompt, 4, 1.0, 99, 12, "p0");
    std::set<std::vector<int>> distinct;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        CHECK(hyps[i].tokens == again[i].tokens);
        CHECK(hyps[i].old_logprobs == again[i].old_logprobs);
        CHECK(hyps[i].prompt_id == "p0");
        CHECK(hyps[i].sample_index == static_cast<int>(i));
        REQUIRE(!hyps[i].tokens.empty());
        CHECK(hyps[i].tokens.size() <= 12);
        distinct.insert(hyps[i].tokens);

        // Recorded log-probs must equal a fresh temperature-1 evaluation.
        const auto lps = logprob_seq(snap.params, prompt, hyps[i].tokens);
        REQUIRE(lps.size() == hyps[i].old_logprobs.size());
        for (std::size_t t = 0; t < lps.size(); ++t)
            CHECK(std::abs(lps[t] - hyps[i].old_logprobs[t]) < 1e-9);
    }
    const auto other = sample_k(snap, prompt, 4, 1.0, 100, 12, "p0");
    bool any_diff = false;
    for (std::size_t i = 0; i < hyps.size(); ++i)
        if (other[i].tokens != hyps[i].tokens) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("temperature zero sampling is greedy decoding") {
    PolicyParams params = tiny_params(8);
    const auto prompt = encode_prompt(params.vocab, "en-xx", {"c", "a"});
    const PolicySnapshot snap = make_snapshot(params, 1);
    const auto greedy = greedy_decode(params, prompt, 10);
    const auto sampled = sample_k(snap, prompt, 3, 0.0, 5, 10);
    for (const auto& h : sampled) CHECK(h.tokens == greedy);
}

TEST_CASE("generation caps mark truncated hypotheses") {
    PolicyParams params = tiny_params();
    const auto prompt = encode_prompt(params.vocab, "en-xx", {"a"});
    const PolicySnapshot snap = make_snapshot(params, 1);
    const auto hyps = sample_k(snap, prompt, 2, 1.0, 7, 1);
    for (const auto& h : hyps) {
        REQUIRE(h.tokens.size() == 1);
        if (h.tokens[0] != Vocab::kEos) {
            CHECK(h.hit_cap);
            CHECK(h.content_len() == 1);
        } else {
            CHECK(h.content_len() == 0);
        }
    }
}

TEST_CASE("hypothesis content strips exactly one trailing eos") {
    Hypothesis h;
    h.tokens = {5, Vocab::kEos};
    CHECK(h.content_len() == 1);
    CHECK(h.content_ids() == std::vector<int>{5});
    h.tokens = {5, 6};
    CHECK(h.content_len() == 2);
    h.tokens = {Vocab::kEos};
    CHECK(h.content_len() == 0);
    CHECK(h.content_ids().empty());
}

TEST_CASE("differentiable log-probs equal the plain evaluation") {
    PolicyParams params = tiny_params(4);
    const auto prompt = encode_prompt(params.vocab, "en-xx", {"b", "c"});
    const auto target = params.vocab.encode({"a", "b", "c"});
    const auto plain = logprob_seq(params, prompt, target);
    Tape tape;
    const auto nodes = logprob_seq_nodes(tape, params, prompt, target);
    REQUIRE(nodes.size() == plain.size());
    for (std::size_t t = 0; t < plain.size(); ++t)
        CHECK(tape.value(nodes[t]).values[0] == doctest::Approx(plain[t]).epsilon(1e-14));
}

TEST_CASE("kl between the policy and an anchor") {
    SUBCASE("categorical kl on a frozen distribution pair") {
        // KL((0.9, 0.1) || (0.5, 0.5)) = 0.9 ln 1.8 + 0.1 ln 0.2
        const std::vector<double> logp = {std::log(0.9), std::log(0.1)};
        const std::vector<double> logq = {std::log(0.5), std::log(0.5)};
        CHECK(categorical_kl(logp, logq) == doctest::Approx(0.3680642071).epsilon(1e-9));
        CHECK(categorical_kl(logp, logp) == doctest::Approx(0.0));
    }

    SUBCASE("positional kl vanishes at the anchor and is positive away from it") {
        PolicyParams params = tiny_params(6);
        const auto prompt = encode_prompt(params.vocab, "en-xx", {"a", "c"});
        const auto target = params.vocab.encode({"b", "a"});
        const auto self_kl = kl_per_position(params, params, prompt, target);
        REQUIRE(self_kl.size() == 2);
        for (double kl : self_kl) CHECK(kl == 0.0);

        PolicyParams anchor = PolicyParams::zeros(params.vocab, params.dims);
        const auto kl = kl_per_position(params, anchor, prompt, target);
        double total = 0.0;
        for (double k : kl) {
            CHECK(k >= 0.0);
            total += k;
        }
        CHECK(total > 0.0);
    }
}

TEST_CASE("snapshots freeze and restore parameters") {
    PolicyParams params = tiny_params(9);
    const PolicySnapshot snap = make_snapshot(params, 5);
    CHECK(snap.version == 5);
    const double before = params.out_b.values[0];
    params.out_b.values[0] = before + 1.0;
    restore(params, snap);
    CHECK(params.out_b.values[0] == before);
}

TEST_CASE("checkpoints round trip exactly") {
    testers::TmpDir tmp("ckpt");
    PolicyParams params = tiny_params(11);
    params.embed.values[3] = 1.0 / 3.0;  // a value that needs full precision
    save_checkpoint(tmp.sub("p.txt"), params);
    const PolicyParams back = load_checkpoint(tmp.sub("p.txt"));
    CHECK(back.vocab == params.vocab);
    CHECK(back.dims.d == params.dims.d);
    CHECK(back.dims.context_len == params.dims.context_len);
    const auto mine = params.tensors();
    const auto loaded = back.tensors();
    REQUIRE(mine.size() == loaded.size());
    for (std::size_t i = 0; i < mine.size(); ++i) {
        REQUIRE(loaded[i]->values.size() == mine[i]->values.size());
        for (std::size_t j = 0; j < mine[i]->values.size(); ++j)
            CHECK(loaded[i]->values[j] == mine[i]->values[j]);  // bit-exact
    }

    SUBCASE("greedy behavior survives the round trip") {
        const auto prompt = encode_prompt(params.vocab, "en-xx", {"a", "b"});
        CHECK(greedy_decode(back, prompt, 10) == greedy_decode(params, prompt, 10));
    }

    SUBCASE("corrupt checkpoints are rejected") {
        testers::write_file(tmp.sub("bad.txt"), "not a checkpoint\n");
        CHECK_THROWS_AS(load_checkpoint(tmp.sub("bad.txt")), IoError);
        CHECK_THROWS_AS(load_checkpoint(tmp.sub("missing.txt")), IoError);
        // Truncated file: drop the tail of a valid checkpoint.
        const std::string full = testers::read_file(tmp.sub("p.txt"));
        testers::write_file(tmp.sub("trunc.txt"), full.substr(0, full.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(tmp.sub("trunc.txt")), IoError);
    }
}

TEST_CASE("parameter validation catches shape drift") {
    PolicyParams params = tiny_params();
    params.validate();
    params.gru_wx = Tensor(2, 2);
    CHECK_THROWS_AS(params.validate(), ContractError);
}

TEST_CASE("prompts beyond the context window are rejected") {
    PolicyParams params = tiny_params();
    std::vector<int> prompt(static_cast<std::size_t>(params.dims.context_len) + 1,
                            params.vocab.id("a"));
    CHECK_THROWS_AS(logprob_seq(params, prompt, {0}), ContractError);
}
