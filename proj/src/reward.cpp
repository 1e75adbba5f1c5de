#include "rlfr/reward.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"

#include "net_util.hpp"
#include "rlfr/errors.hpp"

namespace rlfr {

// ------------------------------------------------------------ edit distance

namespace {

template <typename Seq>
std::size_t levenshtein_impl(const Seq& a, const Seq& b) {
    const std::size_t la = a.size(), lb = b.size();
    if (la == 0) return lb;
    if (lb == 0) return la;
    std::vector<std::size_t> row(lb + 1);
    std::iota(row.begin(), row.end(), std::size_t{0});
    for (std::size_t i = 1; i <= la; ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= lb; ++j) {
            const std::size_t up = row[j];
            const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
            row[j] = std::min({sub, up + 1, row[j - 1] + 1});
            diag = up;
        }
    }
    return row[lb];
}

}  // namespace

std::size_t levenshtein(const Tokens& a, const Tokens& b) { return levenshtein_impl(a, b); }

std::size_t levenshtein_ids(const std::vector<int>& a, const std::vector<int>& b) {
    return levenshtein_impl(a, b);
}

double lexical_similarity(const Tokens& draft, const Tokens& refined) {
    const std::size_t denom = std::max(draft.size(), refined.size());
    if (denom == 0) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "[rlfr] lexical_similarity: both sequences empty, scoring 1\n";
            warned = true;
        }
        return 1.0;
    }
    const double dist = static_cast<double>(levenshtein(draft, refined));
    return 1.0 - dist / static_cast<double>(denom);
}

// ------------------------------------------------------------ batch scaling

BatchScaleStats fit_scale_stats(const std::vector<double>& zs) {
    if (zs.size() < 2) throw ConfigError("fit_scale_stats: need at least 2 values");
    BatchScaleStats stats;
    stats.n = zs.size();
    double sum = 0.0;
    for (double z : zs) {
        if (!std::isfinite(z)) throw ContractError("fit_scale_stats: non-finite z value");
        sum += z;
    }
    stats.mean = sum / static_cast<double>(zs.size());
    std::vector<double> sorted = zs;
    std::sort(sorted.begin(), sorted.end());
    const double h = 0.9 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    stats.q90 = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
    return stats;
}

double scale_z(double z, const BatchScaleStats& stats) {
    if (stats.n < 2) throw ContractError("scale_z: stats were not fit");
    const double window = stats.q90 - stats.mean;
    if (window < 1e-9) return z < stats.mean ? -1.0 : 1.0;
    if (z < stats.mean) return -1.0;
    if (z >= stats.q90) return 1.0;
    return (z - stats.mean) / window;
}

// ------------------------------------------------------------- adequacy

namespace {

std::unordered_map<std::string, int> char_ngrams(const std::string& s, std::size_t n) {
    std::unordered_map<std::string, int> counts;
    if (s.size() >= n) {
        for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[s.substr(i, n)];
    }
    return counts;
}

}  // namespace

double ChrfScorer::score(const Tokens& /*source*/, const Tokens& draft, const Tokens& refined) {
    const std::string hyp = join(draft);
    const std::string ref = join(refined);
    if (hyp.empty() && ref.empty()) return 1.0;
    if (hyp.empty() || ref.empty()) return 0.0;
    double total = 0.0;
    int used = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto hgrams = char_ngrams(hyp, n);
        const auto rgrams = char_ngrams(ref, n);
        std::size_t htotal = hyp.size() >= n ? hyp.size() - n + 1 : 0;
        std::size_t rtotal = ref.size() >= n ? ref.size() - n + 1 : 0;
        if (htotal == 0 && rtotal == 0) continue;  // too short on both sides
        ++used;
        if (htotal == 0 || rtotal == 0) continue;  // F = 0 for this order
        std::size_t matched = 0;
        for (const auto& [gram, count] : hgrams) {
            const auto it = rgrams.find(gram);
            if (it != rgrams.end()) matched += static_cast<std::size_t>(std::min(count, it->second));
        }
        if (matched == 0) continue;
        const double p = static_cast<double>(matched) / static_cast<double>(htotal);
        const double r = static_cast<double>(matched) / static_cast<double>(rtotal);
        total += 2.0 * p * r / (p + r);
    }
    return used == 0 ? 0.0 : total / static_cast<double>(used);
}

double RemoteScorer::score(const Tokens& source, const Tokens& draft, const Tokens& refined) {
    const auto [base, path] = split_url(config_.endpoint);
    const auto [sec, usec] = timeout_parts(config_.timeout_s);
    httplib::Client client(base);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    nlohmann::json payload;
    payload["source"] = join(source);
    payload["hypothesis"] = join(draft);
    if (!config_.reference_free) payload["reference"] = join(refined);
    auto res = client.Post(path, payload.dump(), "application/json");
    if (!res) throw RewardError("remote scorer unreachable: " + config_.endpoint);
    if (res->status != 200)
        throw RewardError("remote scorer returned HTTP " + std::to_string(res->status));
    try {
        const auto body = nlohmann::json::parse(res->body);
        return body.at("score").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw RewardError(std::string("remote scorer sent malformed JSON: ") + e.what());
    }
}

double semantic_score(SemanticScorer& scorer, const Tokens& source, const Tokens& draft,
                      const Tokens& refined) {
    const double s = scorer.score(source, draft, refined);
    if (!std::isfinite(s) || s < 0.0 || s > 1.0)
        throw RewardError("scorer '" + scorer.name() + "' returned a score outside [0, 1]");
    return 2.0 * s - 1.0;
}

// ------------------------------------------------------------ composite

double alpha_from_preset(const std::string& preset) {
    if (preset == "lexical") return 1.0;
    if (preset == "semantic") return 0.0;
    if (preset == "balanced") return 0.5;
    throw ConfigError("unknown alpha preset: '" + preset + "' (want lexical|semantic|balanced)");
}

RewardBreakdown composite_reward(double z, double r_edit, double r_sem, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
    if (!std::isfinite(z) || !std::isfinite(r_edit) || !std::isfinite(r_sem))
        throw ContractError("composite_reward: non-finite input");
    RewardBreakdown b;
    b.z = z;
    b.r_edit = r_edit;
    b.r_sem = r_sem;
    b.alpha = alpha;
    b.r = (1.0 - alpha) * r_sem + alpha * r_edit;
    return b;
}

}  // namespace rlfr
