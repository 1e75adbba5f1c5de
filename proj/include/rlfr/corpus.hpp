#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlfr/strings.hpp"

namespace rlfr {

// ---------------------------------------------------------------- vocabulary

// Dense id <-> symbol table. Ids 0..3 are always the specials below.
class Vocab {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;
    static constexpr int kUnk = 3;

    Vocab() = default;

    // Specials first, then `symbols` in the given order (duplicates and
    // symbols equal to a special are rejected).
    static Vocab build(const Tokens& symbols);

    // Full symbol list including specials, id order. Validates specials.
    static Vocab from_symbols(const Tokens& all_symbols);

    int id(const std::string& symbol) const;        // throws on unknown
    int id_or_unk(const std::string& symbol) const;
    bool contains(const std::string& symbol) const;
    const std::string& symbol(int id) const;        // throws on out-of-range
    int size() const { return static_cast<int>(symbols_.size()); }

    int bos() const { return kBos; }
    int eos() const { return kEos; }
    int pad() const { return kPad; }
    int unk() const { return kUnk; }

    std::vector<int> encode(const Tokens& tokens) const;  // strict: throws on unknown
    Tokens decode(const std::vector<int>& ids) const;

    const Tokens& symbols() const { return symbols_; }

    bool operator==(const Vocab& other) const { return symbols_ == other.symbols_; }

private:
    Tokens symbols_;
    std::unordered_map<std::string, int> index_;
};

void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

// ------------------------------------------------------------------- corpus

// Span is in source-token units; target is the canonical rendering the
// transduction must produce for this entity.
struct EntityAnnotation {
    std::size_t start = 0;
    std::size_t len = 0;
    Tokens target;
};

struct ParallelExample {
    std::string id;
    Tokens source;
    std::optional<Tokens> gold;
    std::vector<EntityAnnotation> entities;
    std::string direction;
};

using Corpus = std::vector<ParallelExample>;

// Line-oriented file of JSON records {id, source, gold?, entities, direction}.
// Loading validates ids (unique, non-empty), non-empty sources, in-bounds and
// non-overlapping entity spans; errors name the offending line.
Corpus load_corpus(const std::string& path);
void save_corpus(const std::string& path, const Corpus& corpus);

// ---------------------------------------------------------------- task spec

enum class TaskKind { substitution_cipher, word_mapping_with_reorder };

struct EntityEntry {
    Tokens source_name;  // multi-token, marker-prefixed
    Tokens target_name;
};

// Sentinel mapping seed requesting the identity mapping (tests, debugging).
inline constexpr std::int64_t kIdentityMappingSeed = -1;

struct SyntheticTaskSpec {
    TaskKind kind = TaskKind::substitution_cipher;
    int alphabet_size = 10;
    std::int64_t mapping_seed = 1;
    // Non-empty overrides the seed-derived mapping; must be a bijection over
    // the alphabet.
    std::map<std::string, std::string> explicit_mapping;
    std::vector<EntityEntry> entity_table;
    int len_min = 3;
    int len_max = 6;
    double corruption_rate = 0.0;   // applied by corrupt_corpus, not generate_corpus
    double entity_prob = 0.75;      // chance an example carries one entity
    std::string direction = "en-xx";
};

void validate(const SyntheticTaskSpec& spec);

// Ordinary (non-entity) symbols: single letters for sizes <= 26, else "t<i>".
Tokens ordinary_alphabet(int alphabet_size);

// m entries: source ["@e<i>", "@n<i>"] -> target ["@E<i>", "@N<i>"].
std::vector<EntityEntry> default_entity_table(int m);

// The symbol bijection the task applies to ordinary tokens.
std::map<std::string, std::string> task_mapping(const SyntheticTaskSpec& spec);

// All symbols a task can emit or consume, in a deterministic order
// (specials, "<sep>", direction token, alphabet, entity names).
Vocab vocab_for_task(const SyntheticTaskSpec& spec);

// Exact transduction of `source` under the task rules. Entity occurrences
// (recognized from the table) render as their target names; ordinary tokens
// map through the bijection; the reorder task additionally reverses the
// unit order (entities move as atomic units).
Tokens transduce(const SyntheticTaskSpec& spec, const Tokens& source);

// n examples with gold == transduce(source). Deterministic in (spec, n, seed).
Corpus generate_corpus(const SyntheticTaskSpec& spec, std::size_t n, std::uint64_t seed);

// Replaces each gold token with probability `rate` by a different token drawn
// uniformly from `pool`. Models imperfect supervision; the clean invariant
// gold == transduce(source) no longer holds afterwards.
Corpus corrupt_corpus(const Corpus& corpus, double rate, const Tokens& pool, std::uint64_t seed);

}  // namespace rlfr
