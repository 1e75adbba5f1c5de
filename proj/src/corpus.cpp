#include "rlfr/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "json.hpp"

#include "rlfr/errors.hpp"
#include "rlfr/rng.hpp"

namespace rlfr {

namespace {

const Tokens kSpecials = {"<bos>", "<eos>", "<pad>", "<unk>"};

void check_symbol(const std::string& s) {
    if (s.empty()) throw ConfigError("vocab symbol must be non-empty");
    for (char ch : s) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r')
            throw ConfigError("vocab symbol contains whitespace: '" + s + "'");
    }
}

}  // namespace

// ---------------------------------------------------------------- vocabulary

Vocab Vocab::build(const Tokens& symbols) {
    Vocab v;
    for (const auto& s : kSpecials) {
        v.index_.emplace(s, static_cast<int>(v.symbols_.size()));
        v.symbols_.push_back(s);
    }
    for (const auto& s : symbols) {
        check_symbol(s);
        if (!v.index_.emplace(s, static_cast<int>(v.symbols_.size())).second)
            throw ConfigError("duplicate vocab symbol: '" + s + "'");
        v.symbols_.push_back(s);
    }
    return v;
}

Vocab Vocab::from_symbols(const Tokens& all_symbols) {
    if (all_symbols.size() < kSpecials.size())
        throw ConfigError("vocab is missing the special symbols");
    for (std::size_t i = 0; i < kSpecials.size(); ++i) {
        if (all_symbols[i] != kSpecials[i])
            throw ConfigError("vocab symbol " + std::to_string(i) + " must be " + kSpecials[i] +
                              ", got '" + all_symbols[i] + "'");
    }
    return build(Tokens(all_symbols.begin() + kSpecials.size(), all_symbols.end()));
}

int Vocab::id(const std::string& symbol) const {
    auto it = index_.find(symbol);
    if (it == index_.end()) throw ConfigError("token not in vocab: '" + symbol + "'");
    return it->second;
}

int Vocab::id_or_unk(const std::string& symbol) const {
    auto it = index_.find(symbol);
    return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& symbol) const { return index_.count(symbol) != 0; }

const std::string& Vocab::symbol(int id) const {
    if (id < 0 || id >= size()) throw ContractError("vocab id out of range: " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const Tokens& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
}

Tokens Vocab::decode(const std::vector<int>& ids) const {
    Tokens out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(symbol(i));
    return out;
}

void save_vocab(const std::string& path, const Vocab& vocab) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocab file: " + path);
    for (const auto& s : vocab.symbols()) out << s << '\n';
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocab file: " + path);
    Tokens symbols;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) symbols.push_back(line);
    }
    return Vocab::from_symbols(symbols);
}

// ------------------------------------------------------------------- corpus

namespace {

using nlohmann::ordered_json;

void validate_example(const ParallelExample& ex, const std::string& where) {
    if (ex.id.empty()) throw CorpusError(where + ": empty id");
    if (ex.source.empty()) throw CorpusError(where + ": empty source");
    if (ex.direction.empty()) throw CorpusError(where + ": empty direction");
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& ent : ex.entities) {
        if (ent.len == 0) throw CorpusError(where + ": entity span of length 0");
        if (ent.start + ent.len > ex.source.size())
            throw CorpusError(where + ": entity span exceeds source bounds");
        if (ent.target.empty()) throw CorpusError(where + ": entity with empty target rendering");
        spans.emplace_back(ent.start, ent.start + ent.len);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].first < spans[i - 1].second)
            throw CorpusError(where + ": overlapping entity spans");
    }
}

ordered_json example_to_json(const ParallelExample& ex) {
    ordered_json j;
    j["id"] = ex.id;
    j["source"] = join(ex.source);
    if (ex.gold) j["gold"] = join(*ex.gold);
    ordered_json ents = ordered_json::array();
    for (const auto& ent : ex.entities) {
        ordered_json e;
        e["start"] = ent.start;
        e["len"] = ent.len;
        e["target"] = join(ent.target);
        ents.push_back(e);
    }
    j["entities"] = ents;
    j["direction"] = ex.direction;
    return j;
}

ParallelExample example_from_json(const ordered_json& j, const std::string& where) {
    ParallelExample ex;
    if (!j.is_object()) throw CorpusError(where + ": record is not a JSON object");
    if (!j.contains("id") || !j["id"].is_string()) throw CorpusError(where + ": missing string field 'id'");
    if (!j.contains("source") || !j["source"].is_string())
        throw CorpusError(where + ": missing string field 'source'");
    if (!j.contains("direction") || !j["direction"].is_string())
        throw CorpusError(where + ": missing string field 'direction'");
    ex.id = j["id"].get<std::string>();
    ex.source = split_ws(j["source"].get<std::string>());
    ex.direction = j["direction"].get<std::string>();
    if (j.contains("gold") && !j["gold"].is_null()) {
        if (!j["gold"].is_string()) throw CorpusError(where + ": field 'gold' must be a string");
        ex.gold = split_ws(j["gold"].get<std::string>());
    }
    if (j.contains("entities") && !j["entities"].is_null()) {
        if (!j["entities"].is_array()) throw CorpusError(where + ": field 'entities' must be an array");
        for (const auto& e : j["entities"]) {
            if (!e.is_object() || !e.contains("start") || !e.contains("len") || !e.contains("target"))
                throw CorpusError(where + ": entity needs fields start, len, target");
            EntityAnnotation ent;
            ent.start = e["start"].get<std::size_t>();
            ent.len = e["len"].get<std::size_t>();
            ent.target = split_ws(e["target"].get<std::string>());
            ex.entities.push_back(std::move(ent));
        }
    }
    validate_example(ex, where);
    return ex;
}

}  // namespace

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot read corpus file: " + path);
    Corpus corpus;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError(where + ": malformed JSON (" + e.what() + ")");
        }
        ParallelExample ex = example_from_json(j, where);
        if (!seen_ids.insert(ex.id).second) throw CorpusError(where + ": duplicate id '" + ex.id + "'");
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus file: " + path);
    for (const auto& ex : corpus) {
        validate_example(ex, "example '" + ex.id + "'");
        out << example_to_json(ex).dump() << '\n';
    }
}

// ---------------------------------------------------------------- task spec

Tokens ordinary_alphabet(int alphabet_size) {
    Tokens out;
    out.reserve(static_cast<std::size_t>(alphabet_size));
    for (int i = 0; i < alphabet_size; ++i) {
        if (alphabet_size <= 26) {
            out.push_back(std::string(1, static_cast<char>('a' + i)));
        } else {
            out.push_back("t" + std::to_string(i));
        }
    }
    return out;
}

std::vector<EntityEntry> default_entity_table(int m) {
    std::vector<EntityEntry> table;
    table.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        EntityEntry e;
        e.source_name = {"@e" + std::to_string(i), "@n" + std::to_string(i)};
        e.target_name = {"@E" + std::to_string(i), "@N" + std::to_string(i)};
        table.push_back(std::move(e));
    }
    return table;
}

void validate(const SyntheticTaskSpec& spec) {
    if (spec.alphabet_size < 1) throw ConfigError("alphabet_size must be >= 1");
    if (spec.len_min < 1 || spec.len_max < spec.len_min)
        throw ConfigError("invalid length range [" + std::to_string(spec.len_min) + ", " +
                          std::to_string(spec.len_max) + "]");
    if (spec.corruption_rate < 0.0 || spec.corruption_rate >= 1.0)
        throw ConfigError("corruption_rate must be in [0, 1)");
    if (spec.entity_prob < 0.0 || spec.entity_prob > 1.0)
        throw ConfigError("entity_prob must be in [0, 1]");
    if (spec.direction.empty()) throw ConfigError("direction must be non-empty");

    const Tokens alpha = ordinary_alphabet(spec.alphabet_size);
    const std::unordered_set<std::string> alpha_set(alpha.begin(), alpha.end());

    if (!spec.explicit_mapping.empty()) {
        if (spec.explicit_mapping.size() != alpha.size())
            throw ConfigError("explicit_mapping must cover the whole alphabet");
        std::unordered_set<std::string> images;
        for (const auto& [from, to] : spec.explicit_mapping) {
            if (!alpha_set.count(from)) throw ConfigError("explicit_mapping key not in alphabet: " + from);
            if (!alpha_set.count(to)) throw ConfigError("explicit_mapping value not in alphabet: " + to);
            if (!images.insert(to).second) throw ConfigError("explicit_mapping is not a bijection");
        }
    }
    for (const auto& ent : spec.entity_table) {
        if (ent.source_name.empty() || ent.target_name.empty())
            throw ConfigError("entity table entry with empty name");
        for (const auto& t : ent.source_name) {
            if (alpha_set.count(t))
                throw ConfigError("entity source token collides with ordinary vocabulary: " + t);
        }
        for (const auto& t : ent.target_name) {
            if (alpha_set.count(t))
                throw ConfigError("entity target token collides with ordinary vocabulary: " + t);
        }
    }
}

std::map<std::string, std::string> task_mapping(const SyntheticTaskSpec& spec) {
    validate(spec);
    if (!spec.explicit_mapping.empty()) return spec.explicit_mapping;
    const Tokens alpha = ordinary_alphabet(spec.alphabet_size);
    std::map<std::string, std::string> mapping;
    if (spec.mapping_seed == kIdentityMappingSeed) {
        for (const auto& s : alpha) mapping[s] = s;
        return mapping;
    }
    Tokens image = alpha;
    Rng rng(mix_seed(0x6d6170u, static_cast<std::uint64_t>(spec.mapping_seed)));
    for (std::size_t i = image.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(image[i - 1], image[j]);
    }
    for (std::size_t i = 0; i < alpha.size(); ++i) mapping[alpha[i]] = image[i];
    return mapping;
}

Vocab vocab_for_task(const SyntheticTaskSpec& spec) {
    validate(spec);
    Tokens symbols;
    symbols.push_back("<sep>");
    symbols.push_back("<" + spec.direction + ">");
    for (const auto& s : ordinary_alphabet(spec.alphabet_size)) symbols.push_back(s);
    for (const auto& ent : spec.entity_table) {
        for (const auto& t : ent.source_name) symbols.push_back(t);
    }
    for (const auto& ent : spec.entity_table) {
        for (const auto& t : ent.target_name) symbols.push_back(t);
    }
    // Entity source/target names may share tokens; keep first occurrence.
    Tokens dedup;
    std::unordered_set<std::string> seen;
    for (auto& s : symbols) {
        if (seen.insert(s).second) dedup.push_back(std::move(s));
    }
    return Vocab::build(dedup);
}

namespace {

// Splits the source into units: either a single ordinary token or one entity
// occurrence (longest table match at that position).
struct Unit {
    std::size_t start = 0;
    std::size_t len = 1;
    const EntityEntry* entity = nullptr;  // null for ordinary tokens
};

std::vector<Unit> segment_units(const SyntheticTaskSpec& spec, const Tokens& source) {
    std::vector<Unit> units;
    std::size_t i = 0;
    while (i < source.size()) {
        const EntityEntry* best = nullptr;
        for (const auto& ent : spec.entity_table) {
            const std::size_t n = ent.source_name.size();
            if (i + n > source.size()) continue;
            bool match = true;
            for (std::size_t j = 0; j < n; ++j) {
                if (source[i + j] != ent.source_name[j]) {
                    match = false;
                    break;
                }
            }
            if (match && (!best || n > best->source_name.size())) best = &ent;
        }
        Unit u;
        u.start = i;
        if (best) {
            u.len = best->source_name.size();
            u.entity = best;
        }
        units.push_back(u);
        i += u.len;
    }
    return units;
}

}  // namespace

Tokens transduce(const SyntheticTaskSpec& spec, const Tokens& source) {
    const auto mapping = task_mapping(spec);
    std::vector<Unit> units = segment_units(spec, source);
    if (spec.kind == TaskKind::word_mapping_with_reorder) {
        std::reverse(units.begin(), units.end());
    }
    Tokens gold;
    for (const Unit& u : units) {
        if (u.entity) {
            for (const auto& t : u.entity->target_name) gold.push_back(t);
        } else {
            const auto it = mapping.find(source[u.start]);
            if (it == mapping.end())
                throw ConfigError("source token outside task alphabet: " + source[u.start]);
            gold.push_back(it->second);
        }
    }
    return gold;
}

Corpus generate_corpus(const SyntheticTaskSpec& spec, std::size_t n, std::uint64_t seed) {
    validate(spec);
    const Tokens alpha = ordinary_alphabet(spec.alphabet_size);
    Rng rng(mix_seed(0x67656eu, seed));
    Corpus corpus;
    corpus.reserve(n);
    char idbuf[32];
    for (std::size_t i = 0; i < n; ++i) {
        ParallelExample ex;
        std::snprintf(idbuf, sizeof(idbuf), "syn-%06zu", i);
        ex.id = idbuf;
        ex.direction = spec.direction;
        const auto len = static_cast<std::size_t>(rng.uniform_int(spec.len_min, spec.len_max));
        for (std::size_t t = 0; t < len; ++t) {
            ex.source.push_back(alpha[rng.below(alpha.size())]);
        }
        if (!spec.entity_table.empty() && rng.uniform() < spec.entity_prob) {
            const EntityEntry& ent = spec.entity_table[rng.below(spec.entity_table.size())];
            const auto pos = static_cast<std::size_t>(rng.below(ex.source.size() + 1));
            ex.source.insert(ex.source.begin() + static_cast<std::ptrdiff_t>(pos),
                             ent.source_name.begin(), ent.source_name.end());
            EntityAnnotation ann;
            ann.start = pos;
            ann.len = ent.source_name.size();
            ann.target = ent.target_name;
            ex.entities.push_back(std::move(ann));
        }
        ex.gold = transduce(spec, ex.source);
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

Corpus corrupt_corpus(const Corpus& corpus, double rate, const Tokens& pool, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("corruption rate must be in [0, 1)");
    if (rate > 0.0 && pool.size() < 2)
        throw ConfigError("corruption pool needs at least 2 tokens");
    std::unordered_map<std::string, std::size_t> pool_index;
    for (std::size_t i = 0; i < pool.size(); ++i) pool_index.emplace(pool[i], i);
    Rng rng(mix_seed(0x636f7272u, seed));
    Corpus out = corpus;
    for (auto& ex : out) {
        if (!ex.gold) continue;
        for (auto& tok : *ex.gold) {
            if (rng.uniform() >= rate) continue;
            const auto it = pool_index.find(tok);
            if (it == pool_index.end()) {
                tok = pool[rng.below(pool.size())];
            } else {
                // Draw from the pool minus the original token.
                auto idx = rng.below(pool.size() - 1);
                if (idx >= it->second) ++idx;
                tok = pool[idx];
            }
        }
    }
    return out;
}

}  // namespace rlfr
