#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rlfr/corpus.hpp"
#include "rlfr/policy.hpp"
#include "rlfr/reward.hpp"

namespace rlfr {

// Held-out metrics under greedy decoding: adequacy (scorer value of the
// decode against gold, in [0,1]), exact-match rate, and entity accuracy
// (annotated target renderings found verbatim in the decode).
struct EvalResult {
    double adequacy = 0.0;
    double exact_match = 0.0;
    double entity_acc = 0.0;  // NaN when the corpus has no entity annotations
    std::size_t n_examples = 0;
    std::size_t n_entities = 0;
};

// Pure in (params, corpus, scorer). Every example needs gold and fully
// in-vocabulary tokens.
EvalResult evaluate(const PolicyParams& params, const Corpus& corpus, SemanticScorer& scorer);

struct CompareRow {
    std::string name;
    EvalResult result;
};

// Side-by-side evaluation of named checkpoints (>= 2), rows in input order.
std::vector<CompareRow> compare(const std::vector<std::pair<std::string, PolicyParams>>& checkpoints,
                                const Corpus& corpus, SemanticScorer& scorer);

// columns: checkpoint,adequacy,exact_match,entity_acc,n_examples
// entity_acc renders as "na" when not applicable.
std::string comparison_csv(const std::vector<CompareRow>& rows);
std::string comparison_table(const std::vector<CompareRow>& rows);  // aligned text

}  // namespace rlfr
