#include "rlfr/rl.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "rlfr/errors.hpp"
#include "rlfr/rng.hpp"

namespace rlfr {

std::string to_string(TrainMode mode) {
    return mode == TrainMode::rlfr ? "rlfr" : "fixed-ref";
}

TrainMode train_mode_from_string(const std::string& name) {
    if (name == "rlfr") return TrainMode::rlfr;
    if (name == "fixed-ref" || name == "fixed_ref") return TrainMode::fixed_ref;
    throw ConfigError("unknown training mode '" + name + "' (expected rlfr or fixed-ref)");
}

void validate_config(const TrainConfig& c) {
    if (c.k < 1) throw ConfigError("k must be >= 1");
    if (c.rollout_batch < 1) throw ConfigError("rollout_batch must be >= 1");
    if (c.alpha < 0.0 || c.alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
    if (c.beta < 0.0) throw ConfigError("beta must be >= 0");
    if (!(c.eps_clip > 0.0 && c.eps_clip < 1.0)) throw ConfigError("eps_clip must be in (0, 1)");
    if (!(c.eps_stat > 0.0)) throw ConfigError("eps_stat must be > 0");
    if (!(c.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (c.inner_epochs < 1) throw ConfigError("inner_epochs must be >= 1");
    if (c.iterations < 0) throw ConfigError("iterations must be >= 0");
    if (c.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (c.max_drop_rate < 0.0 || c.max_drop_rate > 1.0)
        throw ConfigError("max_drop_rate must be in [0, 1]");
    if (c.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

void RolloutBatch::validate() const {
    if (groups.empty()) throw ContractError("rollout batch has no groups");
    for (const auto& g : groups) {
        if (g.hyps.empty()) throw ContractError("rollout group has no hypotheses");
        if (g.hyps.size() != g.refined.size() || g.hyps.size() != g.rewards.size())
            throw ContractError("rollout group lists are misaligned");
        for (const auto& h : g.hyps) {
            if (h.tokens.empty()) throw ContractError("hypothesis with no sampled tokens");
            if (h.tokens.size() != h.old_logprobs.size())
                throw ContractError("hypothesis tokens/logprobs misaligned");
        }
    }
}

std::size_t RolloutBatch::total_hyps() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.hyps.size();
    return n;
}

std::size_t RolloutBatch::total_tokens() const {
    std::size_t n = 0;
    for (const auto& g : groups) {
        for (const auto& h : g.hyps) n += h.tokens.size();
    }
    return n;
}

// -------------------------------------------------------------- kernel steps

std::vector<double> tail_sum_advantage(double reward, const std::vector<double>& kl, double beta) {
    std::vector<double> a(kl.size());
    double tail = 0.0;
    for (std::size_t t = kl.size(); t > 0; --t) {
        tail += kl[t - 1];
        a[t - 1] = reward - beta * tail;
    }
    return a;
}

RawAdvantages compute_raw_advantages(const RolloutBatch& batch, const PolicyParams& params,
                                     const PolicySnapshot& snapshot, double beta) {
    batch.validate();
    if (snapshot.version != batch.snapshot_version)
        throw ContractError("advantages for snapshot v" + std::to_string(batch.snapshot_version) +
                            " requested against snapshot v" + std::to_string(snapshot.version));
    RawAdvantages out;
    double kl_sum = 0.0;
    std::size_t n_tokens = 0;
    for (const auto& g : batch.groups) {
        const std::vector<int> prompt =
            encode_prompt(params.vocab, g.example.direction, g.example.source);
        for (std::size_t j = 0; j < g.hyps.size(); ++j) {
            const std::vector<double> kl =
                kl_per_position(params, snapshot.params, prompt, g.hyps[j].tokens);
            for (double v : kl) kl_sum += v;
            n_tokens += kl.size();
            out.a.push_back(tail_sum_advantage(g.rewards[j].r, kl, beta));
        }
    }
    out.mean_kl = n_tokens > 0 ? kl_sum / static_cast<double>(n_tokens) : 0.0;
    return out;
}

NormalizedAdvantages normalize_advantages(const std::vector<std::vector<double>>& a,
                                          double eps_stat) {
    std::size_t n = 0;
    double sum = 0.0;
    for (const auto& row : a) {
        n += row.size();
        for (double v : row) sum += v;
    }
    if (n < 2) throw ContractError("advantage normalization needs at least 2 tokens");
    NormalizedAdvantages out;
    out.mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (const auto& row : a) {
        for (double v : row) var += (v - out.mean) * (v - out.mean);
    }
    var /= static_cast<double>(n);
    out.sigma = std::sqrt(var + eps_stat);
    out.ahat.reserve(a.size());
    for (const auto& row : a) {
        std::vector<double> r(row.size());
        for (std::size_t t = 0; t < row.size(); ++t) r[t] = (row[t] - out.mean) / out.sigma;
        out.ahat.push_back(std::move(r));
    }
    return out;
}

ClippedTerms clipped_terms(const PolicyParams& params, const RolloutBatch& batch,
                           const std::vector<std::vector<double>>& ahat, double eps_clip) {
    batch.validate();
    if (ahat.size() != batch.total_hyps())
        throw ContractError("advantage rows do not match the batch's hypotheses");
    ClippedTerms out;
    out.rho.reserve(ahat.size());
    out.z.reserve(ahat.size());
    const double lo = 1.0 - eps_clip, hi = 1.0 + eps_clip;
    std::size_t row = 0, clipped = 0, included_tokens = 0;
    double rho_sum = 0.0;
    for (const auto& g : batch.groups) {
        const std::vector<int> prompt =
            encode_prompt(params.vocab, g.example.direction, g.example.source);
        for (const auto& h : g.hyps) {
            if (ahat[row].size() != h.tokens.size())
                throw ContractError("advantage row length does not match hypothesis length");
            const std::vector<double> cur = logprob_seq(params, prompt, h.tokens);
            std::vector<double> rho(cur.size());
            bool finite = true;
            for (std::size_t t = 0; t < cur.size(); ++t) {
                rho[t] = std::exp(cur[t] - h.old_logprobs[t]);
                if (!std::isfinite(rho[t])) finite = false;
            }
            if (!finite) {
                ++out.n_dropped;
                out.rho.emplace_back();
                out.z.emplace_back();
                ++row;
                continue;
            }
            std::vector<double> z(cur.size());
            for (std::size_t t = 0; t < cur.size(); ++t) {
                if (rho[t] < lo || rho[t] > hi) ++clipped;
                z[t] = std::clamp(rho[t], lo, hi) * ahat[row][t];
                rho_sum += rho[t];
            }
            included_tokens += cur.size();
            out.rho.push_back(std::move(rho));
            out.z.push_back(std::move(z));
            ++row;
        }
    }
    if (included_tokens > 0) {
        out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(included_tokens);
        out.mean_rho = rho_sum / static_cast<double>(included_tokens);
    }
    return out;
}

StepDiagnostics policy_gradient_step(PolicyParams& params, const RolloutBatch& batch,
                                     const std::vector<std::vector<double>>& z, double lr,
                                     double clip_norm) {
    batch.validate();
    if (z.size() != batch.total_hyps())
        throw ContractError("weight rows do not match the batch's hypotheses");
    StepDiagnostics diag;
    for (const auto& row : z) diag.n_tokens += row.size();
    if (diag.n_tokens == 0) return diag;  // everything was dropped; keep params

    const std::vector<Tensor*> trainable = params.trainable();
    zero_grads(trainable);
    Tape tape;
    double objective = 0.0;
    std::size_t row = 0;
    for (const auto& g : batch.groups) {
        const std::vector<int> prompt =
            encode_prompt(params.vocab, g.example.direction, g.example.source);
        for (const auto& h : g.hyps) {
            if (z[row].empty()) {
                ++row;
                continue;
            }
            tape.clear();
            const std::vector<Var> lps = logprob_seq_nodes(tape, params, prompt, h.tokens);
            Var acc = tape.constant(Tensor::scalar(0.0));
            for (std::size_t t = 0; t < lps.size(); ++t) acc = tape.scale_add(acc, z[row][t], lps[t]);
            tape.backward(acc);
            objective += tape.value(acc).values[0];
            ++row;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(diag.n_tokens);
    scale_grads(trainable, inv_n);
    diag.objective = objective * inv_n;
    diag.grad_norm = clip_grad_norm(trainable, clip_norm);
    if (!std::isfinite(diag.grad_norm)) {
        zero_grads(trainable);
        return diag;  // applied stays false; params untouched
    }
    sgd_step(trainable, lr, /*ascend=*/true);
    diag.applied = true;
    return diag;
}

// ------------------------------------------------------------------ training

TrainResult train_rl(PolicyParams& params, const Corpus& corpus, Teacher& teacher,
                     SemanticScorer& scorer, const TrainConfig& config, const TrainHooks& hooks) {
    validate_config(config);
    params.validate();
    if (corpus.empty()) throw ConfigError("rl corpus is empty");
    if ((config.mode == TrainMode::fixed_ref) != (teacher.kind() == TeacherKind::fixed))
        throw ConfigError("mode " + to_string(config.mode) + " does not match teacher '" +
                          to_string(teacher.kind()) + "' (fixed-ref pairs with the fixed teacher)");

    const auto log = [&](const std::string& msg) {
        if (hooks.on_log) {
            hooks.on_log(msg);
        } else {
            std::cerr << "[rlfr] " << msg << '\n';
        }
    };

    TrainResult result;
    for (int iter = 0; iter < config.iterations; ++iter) {
        const PolicySnapshot snapshot =
            make_snapshot(params, static_cast<std::uint64_t>(iter) + 1);

        // Deterministic prompt subsample, ascending corpus order.
        std::vector<std::size_t> indices(corpus.size());
        for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
        const std::size_t take =
            std::min(indices.size(), static_cast<std::size_t>(config.rollout_batch));
        if (take < indices.size()) {
            Rng pick(mix_seed(0x726f6c6cu, config.seed, static_cast<std::uint64_t>(iter)));
            for (std::size_t i = 0; i < take; ++i) {
                std::swap(indices[i], indices[i + pick.below(indices.size() - i)]);
            }
            indices.resize(take);
            std::sort(indices.begin(), indices.end());
        }

        // Rollout: k hypotheses per prompt from the frozen snapshot.
        struct Pending {
            std::size_t corpus_index;
            Hypothesis hyp;
            Tokens draft;
        };
        std::vector<Pending> pending;
        std::vector<std::pair<Tokens, Tokens>> to_refine;
        for (std::size_t idx : indices) {
            const auto& ex = corpus[idx];
            const std::vector<int> prompt = encode_prompt(params.vocab, ex.direction, ex.source);
            std::vector<Hypothesis> hyps = sample_k(
                snapshot, prompt, config.k, config.temperature,
                mix_seed(config.seed, static_cast<std::uint64_t>(iter), static_cast<std::uint64_t>(idx)),
                default_t_max(ex.source.size()), ex.id);
            for (auto& h : hyps) {
                Pending p;
                p.corpus_index = idx;
                p.draft = params.vocab.decode(h.content_ids());
                p.hyp = std::move(h);
                to_refine.emplace_back(ex.source, p.draft);
                pending.push_back(std::move(p));
            }
        }

        const std::vector<RefineOutcome> outcomes = teacher.refine_batch(to_refine);

        // Score survivors; drop refinement and scorer failures alike.
        RolloutBatch batch;
        batch.snapshot_version = snapshot.version;
        std::vector<double> zs;
        std::vector<double> sem_scores;            // scorer values in [0, 1]
        std::vector<std::size_t> batch_index;      // pending index per survivor
        std::size_t dropped = 0;
        std::string last_error;
        for (std::size_t i = 0; i < pending.size(); ++i) {
            if (!outcomes[i].ok()) {
                ++dropped;
                last_error = outcomes[i].error;
                continue;
            }
            const auto& ex = corpus[pending[i].corpus_index];
            double s = 0.0;
            try {
                s = scorer.score(ex.source, pending[i].draft, outcomes[i].pair->refined);
            } catch (const std::exception& e) {
                ++dropped;
                last_error = e.what();
                continue;
            }
            if (!(s >= 0.0 && s <= 1.0)) {
                ++dropped;
                last_error = "scorer '" + scorer.name() + "' returned " + std::to_string(s);
                continue;
            }
            zs.push_back(lexical_similarity(pending[i].draft, outcomes[i].pair->refined));
            sem_scores.push_back(s);
            batch_index.push_back(i);
        }
        if (dropped > 0) {
            log("iteration " + std::to_string(iter) + ": dropped " + std::to_string(dropped) +
                "/" + std::to_string(pending.size()) + " hypotheses (" + last_error + ")");
        }
        const double drop_rate =
            static_cast<double>(dropped) / static_cast<double>(pending.size());
        if (drop_rate > config.max_drop_rate || zs.size() < 2) {
            throw RefineError("iteration " + std::to_string(iter) + ": " + std::to_string(dropped) +
                              " of " + std::to_string(pending.size()) +
                              " hypotheses failed (last: " + last_error + "); aborting");
        }

        batch.stats = fit_scale_stats(zs);
        for (std::size_t s = 0; s < batch_index.size(); ++s) {
            const std::size_t i = batch_index[s];
            const std::size_t ci = pending[i].corpus_index;
            if (batch.groups.empty() || batch.groups.back().example.id != corpus[ci].id) {
                RolloutGroup g;
                g.example = corpus[ci];
                batch.groups.push_back(std::move(g));
            }
            RolloutGroup& g = batch.groups.back();
            const double r_edit = scale_z(zs[s], batch.stats);
            const double r_sem = 2.0 * sem_scores[s] - 1.0;
            g.rewards.push_back(composite_reward(zs[s], r_edit, r_sem, config.alpha));
            g.refined.push_back(*outcomes[i].pair);
            g.hyps.push_back(std::move(pending[i].hyp));
        }
        batch.validate();

        // Optimization: KL and ratios against the rollout snapshot, advantage
        // statistics refit every inner epoch from the current policy.
        double clip_fraction = 0.0, mean_kl = 0.0;
        for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
            const RawAdvantages raw =
                compute_raw_advantages(batch, params, snapshot, config.beta);
            const NormalizedAdvantages norm = normalize_advantages(raw.a, config.eps_stat);
            const ClippedTerms ct = clipped_terms(params, batch, norm.ahat, config.eps_clip);
            const StepDiagnostics diag =
                policy_gradient_step(params, batch, ct.z, config.lr, config.clip_norm);
            if (!diag.applied) {
                log("iteration " + std::to_string(iter) + " epoch " + std::to_string(epoch) +
                    ": non-finite gradient (norm " + std::to_string(diag.grad_norm) +
                    "), step skipped");
            }
            clip_fraction = ct.clip_fraction;
            mean_kl = raw.mean_kl;
        }

        // Metrics over the surviving hypotheses.
        MetricsRecord rec;
        rec.iteration = iter;
        rec.n_hyps = batch.total_hyps();
        rec.n_dropped = dropped;
        rec.clip_fraction = clip_fraction;
        rec.mean_kl = mean_kl;
        double reward_sum = 0.0, len_sum = 0.0, adequacy_sum = 0.0;
        std::size_t entity_hits = 0, entity_total = 0;
        for (const auto& g : batch.groups) {
            for (std::size_t j = 0; j < g.hyps.size(); ++j) {
                reward_sum += g.rewards[j].r;
                len_sum += static_cast<double>(g.hyps[j].content_len());
                adequacy_sum += 0.5 * (g.rewards[j].r_sem + 1.0);
                const Tokens draft = params.vocab.decode(g.hyps[j].content_ids());
                for (const auto& ent : g.example.entities) {
                    ++entity_total;
                    if (contains_span(draft, ent.target)) ++entity_hits;
                }
            }
        }
        const double n = static_cast<double>(rec.n_hyps);
        rec.mean_reward = reward_sum / n;
        rec.mean_resp_len = len_sum / n;
        rec.adequacy = adequacy_sum / n;
        rec.entity_acc = entity_total > 0
                             ? static_cast<double>(entity_hits) / static_cast<double>(entity_total)
                             : std::numeric_limits<double>::quiet_NaN();
        result.metrics.push_back(rec);
        if (hooks.on_metrics) hooks.on_metrics(rec);
        if (config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0 &&
            hooks.on_checkpoint) {
            hooks.on_checkpoint(iter, params);
        }
    }
    return result;
}

}  // namespace rlfr
