#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlfr/corpus.hpp"
#include "rlfr/grad.hpp"

namespace rlfr {

// Tiny autoregressive LM: token embedding (d) -> one gated recurrent cell
// (GRU-style, fused gate projections) -> untied output projection to the
// vocabulary. All math in doubles.
struct PolicyDims {
    std::int64_t d = 32;
    std::int64_t context_len = 64;  // max prompt length accepted
};

struct PolicyParams {
    Vocab vocab;
    PolicyDims dims;
    Tensor embed;    // V x d
    Tensor gru_wx;   // d x 3d   (input projections: update | reset | candidate)
    Tensor gru_bx;   // 1 x 3d
    Tensor gru_uh;   // d x 3d   (state projections, same layout)
    Tensor out_w;    // d x V
    Tensor out_b;    // 1 x V

    // Gaussian(0, 0.08) weights, zero biases.
    static PolicyParams init(const Vocab& vocab, PolicyDims dims, std::uint64_t seed);
    // All-zero parameters; the model is exactly uniform over the vocabulary.
    static PolicyParams zeros(const Vocab& vocab, PolicyDims dims);

    std::vector<Tensor*> trainable();  // enables requires_grad on first use
    std::vector<const Tensor*> tensors() const;
    void validate() const;
};

// Frozen copy of the actor used for rollouts and as the KL anchor. The
// version counter increases once per rollout iteration.
struct PolicySnapshot {
    PolicyParams params;
    std::uint64_t version = 0;
};

PolicySnapshot make_snapshot(const PolicyParams& params, std::uint64_t version);
void restore(PolicyParams& params, const PolicySnapshot& snapshot);

// One sampled draft. `tokens` includes the terminal <eos> when one was
// emitted before the length cap; `old_logprobs` are the temperature-1
// log-probs of each sampled token under the snapshot that produced it.
struct Hypothesis {
    std::string prompt_id;
    std::vector<int> tokens;
    std::vector<double> old_logprobs;
    int sample_index = 0;
    bool hit_cap = false;

    std::size_t content_len() const;        // |tokens| minus a trailing <eos>
    std::vector<int> content_ids() const;   // tokens minus a trailing <eos>
};

// Prompt template: "<direction> source tokens <sep>".
Tokens prompt_tokens(const std::string& direction, const Tokens& source);
std::vector<int> encode_prompt(const Vocab& vocab, const std::string& direction, const Tokens& source);

// Generation cap: twice the source length plus a small slack.
std::int64_t default_t_max(std::size_t source_len);

// k i.i.d. draws from the snapshot at the given sampling temperature
// (temperature 0 is the greedy limit). Deterministic in (snapshot, prompt,
// k, temperature, seed). Recorded log-probs are always temperature-1.
std::vector<Hypothesis> sample_k(const PolicySnapshot& snapshot, const std::vector<int>& prompt,
                                 int k, double temperature, std::uint64_t seed,
                                 std::int64_t t_max, const std::string& prompt_id = {});

std::vector<int> greedy_decode(const PolicyParams& params, const std::vector<int>& prompt,
                               std::int64_t t_max);

// Per-token log-probs of `target` given `prompt`, chain-rule order. Plain
// (non-differentiable) evaluation.
std::vector<double> logprob_seq(const PolicyParams& params, const std::vector<int>& prompt,
                                const std::vector<int>& target);

// Differentiable version: one 1x1 node per target position on the given
// tape. Values match logprob_seq exactly.
std::vector<Var> logprob_seq_nodes(Tape& tape, PolicyParams& params, const std::vector<int>& prompt,
                                   const std::vector<int>& target);

// Full-vocabulary KL(params || anchor) at every position of `target`
// (entries clamped at 0 against tiny negative round-off).
std::vector<double> kl_per_position(const PolicyParams& params, const PolicyParams& anchor,
                                    const std::vector<int>& prompt, const std::vector<int>& target);

// KL(p || q) for two log-distributions over the same support.
double categorical_kl(const std::vector<double>& logp, const std::vector<double>& logq);

// Shape-tagged versioned text container; includes the vocabulary so a
// checkpoint is self-describing.
void save_checkpoint(const std::string& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace rlfr
