#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlfr/strings.hpp"

namespace rlfr {

// Unit-cost Levenshtein distance over token sequences (insert, delete,
// substitute), single-row DP.
std::size_t levenshtein(const Tokens& a, const Tokens& b);
std::size_t levenshtein_ids(const std::vector<int>& a, const std::vector<int>& b);

// z = 1 - dist / max(|draft|, |refined|); two empty sequences score 1 (the
// corner is logged once per process).
double lexical_similarity(const Tokens& draft, const Tokens& refined);

// Batch statistics the edit reward is scaled by: mean and 90th percentile
// (linear interpolation between closest ranks) of the rollout's z values.
// Refit every rollout batch; never reused across batches.
struct BatchScaleStats {
    double mean = 0.0;
    double q90 = 0.0;
    std::size_t n = 0;
};

BatchScaleStats fit_scale_stats(const std::vector<double>& zs);  // needs >= 2 values

// Piecewise-linear scaling of a raw similarity into [-1, 1]:
//   z < mean        -> -1
//   mean <= z < q90 -> (z - mean) / (q90 - mean)
//   z >= q90        -> 1
// Degenerate window (q90 - mean < 1e-9): -1 below the mean, else 1.
double scale_z(double z, const BatchScaleStats& stats);

// Adequacy scorer interface; returns a quality score in [0, 1]. The default
// implementation is a character n-gram F-score (n = 1..4, uniform weights)
// of the draft against the refined reference, computed on the space-joined
// token strings. A remote scorer can stand in where a learned metric is
// available; `reference_free` only applies there (the reference field is
// omitted from the request).
class SemanticScorer {
public:
    virtual ~SemanticScorer() = default;
    virtual double score(const Tokens& source, const Tokens& draft, const Tokens& refined) = 0;
    virtual std::string name() const = 0;
};

class ChrfScorer final : public SemanticScorer {
public:
    double score(const Tokens& source, const Tokens& draft, const Tokens& refined) override;
    std::string name() const override { return "chrf"; }
};

struct RemoteScorerConfig {
    std::string endpoint;       // e.g. http://127.0.0.1:8900/score
    double timeout_s = 30.0;
    bool reference_free = false;
};

class RemoteScorer final : public SemanticScorer {
public:
    explicit RemoteScorer(RemoteScorerConfig config) : config_(std::move(config)) {}
    double score(const Tokens& source, const Tokens& draft, const Tokens& refined) override;
    std::string name() const override { return "remote"; }

private:
    RemoteScorerConfig config_;
};

// Underlying [0,1] score mapped onto [-1, 1].
double semantic_score(SemanticScorer& scorer, const Tokens& source, const Tokens& draft,
                      const Tokens& refined);

// Blend weight presets for the composite reward.
double alpha_from_preset(const std::string& preset);  // lexical=1, semantic=0, balanced=0.5

struct RewardBreakdown {
    double z = 0.0;       // raw lexical similarity
    double r_edit = 0.0;  // scaled edit reward
    double r_sem = 0.0;   // semantic reward in [-1, 1]
    double alpha = 0.0;
    double r = 0.0;       // (1 - alpha) * r_sem + alpha * r_edit
};

RewardBreakdown composite_reward(double z, double r_edit, double r_sem, double alpha);

}  // namespace rlfr
