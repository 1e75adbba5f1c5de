#include "rlfr/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "rlfr/errors.hpp"
#include "rlfr/strings.hpp"

namespace rlfr {

namespace {

void check_compatible(const PolicyParams& params, const ParallelExample& ex) {
    if (!ex.gold) throw ConfigError("evaluation needs gold for every example (missing for '" + ex.id + "')");
    for (const auto& t : ex.source) {
        if (!params.vocab.contains(t))
            throw ConfigError("source token '" + t + "' of example '" + ex.id +
                              "' is not in the checkpoint vocabulary");
    }
    for (const auto& t : *ex.gold) {
        if (!params.vocab.contains(t))
            throw ConfigError("gold token '" + t + "' of example '" + ex.id +
                              "' is not in the checkpoint vocabulary");
    }
    if (!params.vocab.contains("<" + ex.direction + ">"))
        throw ConfigError("direction '" + ex.direction + "' of example '" + ex.id +
                          "' is not in the checkpoint vocabulary");
}

}  // namespace

EvalResult evaluate(const PolicyParams& params, const Corpus& corpus, SemanticScorer& scorer) {
    params.validate();
    if (corpus.empty()) throw ConfigError("evaluation corpus is empty");
    EvalResult out;
    out.n_examples = corpus.size();
    double adequacy_sum = 0.0;
    std::size_t exact = 0, entity_hits = 0;
    for (const auto& ex : corpus) {
        check_compatible(params, ex);
        const std::vector<int> prompt = encode_prompt(params.vocab, ex.direction, ex.source);
        std::vector<int> decoded = greedy_decode(params, prompt, default_t_max(ex.source.size()));
        if (!decoded.empty() && decoded.back() == Vocab::kEos) decoded.pop_back();
        const Tokens draft = params.vocab.decode(decoded);
        adequacy_sum += scorer.score(ex.source, draft, *ex.gold);
        if (draft == *ex.gold) ++exact;
        for (const auto& ent : ex.entities) {
            ++out.n_entities;
            if (contains_span(draft, ent.target)) ++entity_hits;
        }
    }
    out.adequacy = adequacy_sum / static_cast<double>(corpus.size());
    out.exact_match = static_cast<double>(exact) / static_cast<double>(corpus.size());
    out.entity_acc = out.n_entities > 0
                         ? static_cast<double>(entity_hits) / static_cast<double>(out.n_entities)
                         : std::numeric_limits<double>::quiet_NaN();
    return out;
}

std::vector<CompareRow> compare(const std::vector<std::pair<std::string, PolicyParams>>& checkpoints,
                                const Corpus& corpus, SemanticScorer& scorer) {
    if (checkpoints.size() < 2) throw ConfigError("compare needs at least 2 checkpoints");
    std::vector<CompareRow> rows;
    rows.reserve(checkpoints.size());
    for (const auto& [name, params] : checkpoints) {
        rows.push_back({name, evaluate(params, corpus, scorer)});
    }
    return rows;
}

namespace {

std::string entity_cell(const EvalResult& r) {
    return std::isnan(r.entity_acc) ? "na" : fmt_g(r.entity_acc);
}

}  // namespace

std::string comparison_csv(const std::vector<CompareRow>& rows) {
    std::string out = "checkpoint,adequacy,exact_match,entity_acc,n_examples\n";
    for (const auto& row : rows) {
        out += row.name + ',' + fmt_g(row.result.adequacy) + ',' + fmt_g(row.result.exact_match) +
               ',' + entity_cell(row.result) + ',' + std::to_string(row.result.n_examples) + '\n';
    }
    return out;
}

std::string comparison_table(const std::vector<CompareRow>& rows) {
    std::vector<std::array<std::string, 5>> cells;
    cells.push_back({"checkpoint", "adequacy", "exact_match", "entity_acc", "n_examples"});
    for (const auto& row : rows) {
        cells.push_back({row.name, fmt_g(row.result.adequacy), fmt_g(row.result.exact_match),
                         entity_cell(row.result), std::to_string(row.result.n_examples)});
    }
    std::array<std::size_t, 5> width{};
    for (const auto& r : cells) {
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::string out;
    for (const auto& r : cells) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            out += r[c];
            if (c + 1 < r.size()) out += std::string(width[c] - r[c].size() + 2, ' ');
        }
        out += '\n';
    }
    return out;
}

}  // namespace rlfr
