#include "rlfr/sft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rlfr/errors.hpp"
#include "rlfr/rng.hpp"

namespace rlfr {

std::vector<int> sft_target_ids(const Vocab& vocab, const ParallelExample& ex) {
    if (!ex.gold) throw ContractError("example '" + ex.id + "' has no gold target");
    std::vector<int> ids = vocab.encode(*ex.gold);
    ids.push_back(Vocab::kEos);
    return ids;
}

double greedy_exact_match(const PolicyParams& params, const Corpus& corpus) {
    if (corpus.empty()) throw ContractError("exact match over an empty corpus");
    std::size_t hits = 0;
    for (const auto& ex : corpus) {
        if (!ex.gold) throw ContractError("example '" + ex.id + "' has no gold target");
        const std::vector<int> prompt = encode_prompt(params.vocab, ex.direction, ex.source);
        std::vector<int> decoded =
            greedy_decode(params, prompt, default_t_max(ex.source.size()));
        if (!decoded.empty() && decoded.back() == Vocab::kEos) decoded.pop_back();
        if (decoded == params.vocab.encode(*ex.gold)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

namespace {

void validate_config(const SftConfig& c) {
    if (c.epochs < 0) throw ConfigError("sft epochs must be >= 0");
    if (c.batch_size < 1) throw ConfigError("sft batch_size must be >= 1");
    if (!(c.lr > 0.0)) throw ConfigError("sft lr must be > 0");
    if (c.holdout_fraction < 0.0 || c.holdout_fraction >= 1.0)
        throw ConfigError("sft holdout_fraction must be in [0, 1)");
}

}  // namespace

SftReport train_sft(PolicyParams& params, const Corpus& corpus, const SftConfig& config,
                    const SftHooks& hooks) {
    validate_config(config);
    params.validate();
    if (corpus.empty()) throw ConfigError("sft corpus is empty");
    for (const auto& ex : corpus) {
        if (!ex.gold) throw ConfigError("sft needs gold for every example (missing for '" + ex.id + "')");
    }

    // Deterministic holdout split (at least one train example survives).
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(mix_seed(0x73667421u, config.seed));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[split_rng.below(i)]);
    }
    std::size_t n_holdout = static_cast<std::size_t>(
        std::floor(config.holdout_fraction * static_cast<double>(corpus.size())));
    if (n_holdout >= corpus.size()) n_holdout = corpus.size() - 1;
    Corpus holdout, train;
    for (std::size_t i = 0; i < n_holdout; ++i) holdout.push_back(corpus[order[i]]);
    for (std::size_t i = n_holdout; i < order.size(); ++i) train.push_back(corpus[order[i]]);

    SftReport report;
    report.n_train = train.size();
    report.n_holdout = holdout.size();

    const std::vector<Tensor*> trainable = params.trainable();
    PolicySnapshot best = make_snapshot(params, 0);
    double best_em = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int since_best = 0;
    Tape tape;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fresh example order every epoch.
        std::vector<std::size_t> perm(train.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng shuffle_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch) + 1));
        for (std::size_t i = perm.size(); i > 1; --i) {
            std::swap(perm[i - 1], perm[shuffle_rng.below(i)]);
        }

        double epoch_nll = 0.0;
        std::size_t epoch_tokens = 0;
        for (std::size_t begin = 0; begin < perm.size();
             begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(begin + static_cast<std::size_t>(config.batch_size), perm.size());
            zero_grads(trainable);
            double batch_nll = 0.0;
            std::size_t batch_tokens = 0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto& ex = train[perm[i]];
                const std::vector<int> prompt =
                    encode_prompt(params.vocab, ex.direction, ex.source);
                const std::vector<int> target = sft_target_ids(params.vocab, ex);
                tape.clear();
                const std::vector<Var> lps = logprob_seq_nodes(tape, params, prompt, target);
                Var loss = tape.constant(Tensor::scalar(0.0));
                for (Var lp : lps) loss = tape.scale_add(loss, -1.0, lp);
                tape.backward(loss);
                batch_nll += tape.value(loss).values[0];
                batch_tokens += target.size();
            }
            scale_grads(trainable, 1.0 / static_cast<double>(batch_tokens));
            clip_grad_norm(trainable, config.clip_norm);
            sgd_step(trainable, config.lr, /*ascend=*/false);
            epoch_nll += batch_nll;
            epoch_tokens += batch_tokens;
        }
        const double mean_loss = epoch_nll / static_cast<double>(epoch_tokens);
        report.epoch_loss.push_back(mean_loss);

        double em = std::numeric_limits<double>::quiet_NaN();
        if (!holdout.empty()) {
            em = greedy_exact_match(params, holdout);
            report.holdout_exact.push_back(em);
            // Strict exact-match improvement wins; while no decode has ever
            // matched, falling train loss stands in so early epochs are not
            // frozen as "best".
            const bool improved =
                em > best_em || (best_em <= 0.0 && em == best_em && mean_loss < best_loss);
            if (improved) {
                best_em = em;
                best_loss = mean_loss;
                best_epoch = epoch;
                best = make_snapshot(params, 0);
                since_best = 0;
            } else {
                ++since_best;
            }
        }
        if (hooks.on_epoch) hooks.on_epoch(epoch, mean_loss, em);
        if (!holdout.empty() && config.patience > 0 && since_best >= config.patience) break;
        if (!holdout.empty() && best_em == 1.0) break;  // cannot improve further
    }

    if (!holdout.empty() && best_epoch >= 0) {
        restore(params, best);
        report.best_epoch = best_epoch;
    } else {
        report.best_epoch = static_cast<int>(report.epoch_loss.size()) - 1;
    }
    return report;
}

}  // namespace rlfr
