#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rlfr/corpus.hpp"
#include "rlfr/policy.hpp"
#include "rlfr/refine.hpp"
#include "rlfr/reward.hpp"

namespace rlfr {

// Critic-free policy-gradient trainer: per-token advantages from a sequence
// reward with a tail-summed KL penalty, batch normalization, clipped
// importance weighting, gradient ascent. The reward, the KL term, the batch
// statistics, and the old log-probs are constants for the update; gradient
// flows only through the current policy's log-likelihood.

enum class TrainMode { rlfr, fixed_ref };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
    int k = 4;                    // hypotheses per prompt
    int rollout_batch = 32;      // prompts per iteration
    double alpha = 0.5;          // composite-reward blend (presets via alpha_from_preset)
    double beta = 0.02;          // KL penalty weight
    double eps_clip = 0.2;       // importance-ratio clip width
    double eps_stat = 1e-6;      // variance stabilizer (inside the sqrt)
    double lr = 0.05;
    double clip_norm = 1.0;      // gradient clip; <= 0 disables
    int inner_epochs = 1;        // optimization passes per rollout
    int iterations = 300;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::rlfr;
    double temperature = 1.0;    // rollout sampling temperature
    double max_drop_rate = 0.5;  // abort when more hypotheses than this are dropped
    int checkpoint_every = 0;    // 0 disables periodic checkpoints
};

void validate_config(const TrainConfig& config);

// One prompt's surviving hypotheses with their refinements and rewards
// (parallel vectors; entries whose refinement or score failed are gone).
struct RolloutGroup {
    ParallelExample example;
    std::vector<Hypothesis> hyps;
    std::vector<RefinedPair> refined;
    std::vector<RewardBreakdown> rewards;
};

struct RolloutBatch {
    std::vector<RolloutGroup> groups;
    std::uint64_t snapshot_version = 0;  // snapshot every hypothesis was sampled from
    BatchScaleStats stats;               // fit on this batch's surviving z values

    void validate() const;               // alignment + non-emptiness
    std::size_t total_hyps() const;
    std::size_t total_tokens() const;    // sampled tokens incl. terminal <eos>
};

// -------------------------------------------------------------- kernel steps

// A_t = R - beta * sum_{j>=t} kl[j].
std::vector<double> tail_sum_advantage(double reward, const std::vector<double>& kl, double beta);

struct RawAdvantages {
    std::vector<std::vector<double>> a;  // [group x hyp flattened][token]
    double mean_kl = 0.0;                // over all tokens
};

// Raw per-token advantages for every hypothesis in the batch; KL is measured
// from the current params against the batch's sampling snapshot.
RawAdvantages compute_raw_advantages(const RolloutBatch& batch, const PolicyParams& params,
                                     const PolicySnapshot& snapshot, double beta);

struct NormalizedAdvantages {
    std::vector<std::vector<double>> ahat;
    double mean = 0.0;
    double sigma = 0.0;  // sqrt(population variance + eps_stat)
};

// Batch-normalizes over the flattened token population (N >= 2).
NormalizedAdvantages normalize_advantages(const std::vector<std::vector<double>>& a,
                                          double eps_stat);

struct ClippedTerms {
    std::vector<std::vector<double>> rho;  // current/old per-token ratio
    std::vector<std::vector<double>> z;    // clip(rho) * ahat; empty row = dropped
    double clip_fraction = 0.0;            // tokens whose ratio hit a clip bound
    double mean_rho = 0.0;
    std::size_t n_dropped = 0;             // hypotheses with non-finite ratios
};

ClippedTerms clipped_terms(const PolicyParams& params, const RolloutBatch& batch,
                           const std::vector<std::vector<double>>& ahat, double eps_clip);

struct StepDiagnostics {
    double grad_norm = 0.0;   // pre-clip global norm
    double objective = 0.0;   // (1/N) sum z * logprob
    std::size_t n_tokens = 0;
    bool applied = false;     // false when a non-finite gradient aborted the step
};

// Ascends (1/N) * sum_{i,t} z_{i,t} * log pi_theta(token | prefix). Rows of
// `z` align with the batch's flattened hypotheses; an empty row is skipped.
StepDiagnostics policy_gradient_step(PolicyParams& params, const RolloutBatch& batch,
                                     const std::vector<std::vector<double>>& z, double lr,
                                     double clip_norm);

// ------------------------------------------------------------------ training

struct MetricsRecord {
    int iteration = 0;
    double mean_reward = 0.0;
    double mean_resp_len = 0.0;  // draft content tokens (no <eos>)
    double adequacy = 0.0;       // mean scorer value, draft vs refinement, [0,1]
    double entity_acc = 0.0;     // NaN when the batch had no entities
    double clip_fraction = 0.0;  // last inner epoch
    double mean_kl = 0.0;        // last inner epoch
    std::size_t n_hyps = 0;      // survivors scored this iteration
    std::size_t n_dropped = 0;   // refinement/scoring failures this iteration
};

struct TrainHooks {
    std::function<void(const MetricsRecord&)> on_metrics;
    std::function<void(int, const PolicyParams&)> on_checkpoint;  // (iteration, params)
    std::function<void(const std::string&)> on_log;               // default: stderr
};

struct TrainResult {
    std::vector<MetricsRecord> metrics;
};

// Runs the generate-refine-reinforce loop in place. Every surviving
// hypothesis is scored by `scorer` (the semantic half of the reward and the
// adequacy metric); scorer failures drop the hypothesis like refinement
// failures do. Mode fixed_ref requires the fixed teacher and vice versa.
// Deterministic in (params, corpus, teacher, scorer, config).
TrainResult train_rl(PolicyParams& params, const Corpus& corpus, Teacher& teacher,
                     SemanticScorer& scorer, const TrainConfig& config,
                     const TrainHooks& hooks = {});

}  // namespace rlfr
