#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rlfr/corpus.hpp"
#include "rlfr/policy.hpp"

namespace rlfr {

// Teacher-forced cross-entropy warm start. The objective is the mean
// negative log-likelihood per target token over each mini-batch (targets
// include the terminal <eos>), minimized by clipped SGD.
struct SftConfig {
    int epochs = 30;
    int batch_size = 16;
    double lr = 0.5;
    double clip_norm = 1.0;            // <= 0 disables clipping
    double holdout_fraction = 0.1;     // split carved off for early stopping
    int patience = 5;                  // epochs without improvement; <= 0 disables
    std::uint64_t seed = 0;
};

struct SftReport {
    std::vector<double> epoch_loss;    // mean nats per target token, train split
    std::vector<double> holdout_exact; // greedy exact match on the holdout split
    int best_epoch = -1;               // epoch whose weights were kept (0-based)
    std::size_t n_train = 0;
    std::size_t n_holdout = 0;
};

struct SftHooks {
    // (epoch, train loss, holdout exact match; NaN when there is no holdout)
    std::function<void(int, double, double)> on_epoch;
};

// Target token ids for teacher forcing: encoded gold plus terminal <eos>.
std::vector<int> sft_target_ids(const Vocab& vocab, const ParallelExample& ex);

// Fraction of examples whose greedy decode reproduces the gold exactly.
double greedy_exact_match(const PolicyParams& params, const Corpus& corpus);

// Trains in place. Keeps the weights of the epoch with the best holdout
// exact match (final weights when there is no holdout split).
SftReport train_sft(PolicyParams& params, const Corpus& corpus, const SftConfig& config,
                    const SftHooks& hooks = {});

}  // namespace rlfr
