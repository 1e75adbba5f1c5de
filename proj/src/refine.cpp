#include "rlfr/refine.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "net_util.hpp"
#include "rlfr/errors.hpp"
#include "rlfr/rng.hpp"

namespace rlfr {

std::string to_string(TeacherKind kind) {
    switch (kind) {
        case TeacherKind::oracle: return "oracle";
        case TeacherKind::remote: return "remote";
        case TeacherKind::fixed: return "fixed";
    }
    return "?";
}

namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string source_key(const Tokens& source) { return join(source); }

// Minimal-edit alignment of draft -> gold with pinned tie-breaks: match,
// then substitution, then deletion, then insertion. Applying the script to
// the draft corrects exactly the misaligned positions, so the output equals
// gold and sits at Levenshtein distance D[la][lb] from the draft.
struct EditScript {
    std::size_t edits = 0;
    Tokens result;
};

EditScript min_edit_refine(const Tokens& draft, const Tokens& gold) {
    const std::size_t la = draft.size(), lb = gold.size();
    std::vector<std::vector<std::size_t>> D(la + 1, std::vector<std::size_t>(lb + 1, 0));
    for (std::size_t i = 0; i <= la; ++i) D[i][0] = i;
    for (std::size_t j = 0; j <= lb; ++j) D[0][j] = j;
    for (std::size_t i = 1; i <= la; ++i) {
        for (std::size_t j = 1; j <= lb; ++j) {
            const std::size_t sub = D[i - 1][j - 1] + (draft[i - 1] == gold[j - 1] ? 0 : 1);
            D[i][j] = std::min({sub, D[i - 1][j] + 1, D[i][j - 1] + 1});
        }
    }
    EditScript script;
    script.edits = D[la][lb];
    Tokens reversed;
    std::size_t i = la, j = lb;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && draft[i - 1] == gold[j - 1] && D[i][j] == D[i - 1][j - 1]) {
            reversed.push_back(gold[j - 1]);  // keep
            --i;
            --j;
        } else if (i > 0 && j > 0 && D[i][j] == D[i - 1][j - 1] + 1) {
            reversed.push_back(gold[j - 1]);  // substitute
            --i;
            --j;
        } else if (i > 0 && D[i][j] == D[i - 1][j] + 1) {
            --i;  // delete draft token
        } else {
            reversed.push_back(gold[j - 1]);  // insert
            --j;
        }
    }
    script.result.assign(reversed.rbegin(), reversed.rend());
    return script;
}

std::string now_rfc3339() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[40];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------- base class

std::vector<RefineOutcome> Teacher::refine_batch(
    const std::vector<std::pair<Tokens, Tokens>>& pairs) {
    std::vector<RefineOutcome> out(pairs.size());
    // Resolve duplicate (source, draft) pairs once.
    std::unordered_map<std::string, std::size_t> first_index;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string key = join(pairs[i].first) + "\x1f" + join(pairs[i].second);
        const auto it = first_index.find(key);
        if (it != first_index.end()) {
            out[i] = out[it->second];
            continue;
        }
        try {
            out[i].pair = refine(pairs[i].first, pairs[i].second);
        } catch (const std::exception& e) {
            out[i].error = e.what();
        }
        first_index.emplace(key, i);
    }
    return out;
}

// -------------------------------------------------------------------- oracle

OracleTeacher::OracleTeacher(const Corpus& corpus) {
    for (const auto& ex : corpus) {
        if (!ex.gold) throw ConfigError("oracle teacher needs gold for every example (missing for '" + ex.id + "')");
        gold_by_source_.emplace(source_key(ex.source), *ex.gold);
    }
    if (gold_by_source_.empty()) throw ConfigError("oracle teacher built from an empty corpus");
}

RefinedPair OracleTeacher::refine(const Tokens& source, const Tokens& draft) {
    const auto it = gold_by_source_.find(source_key(source));
    if (it == gold_by_source_.end())
        throw RefineError("oracle has no gold for source: '" + join(source) + "'");
    EditScript script = min_edit_refine(draft, it->second);
    RefinedPair pair;
    pair.source = source;
    pair.draft = draft;
    pair.refined = std::move(script.result);
    pair.kind = TeacherKind::oracle;
    pair.edits = script.edits;
    if (pair.refined.empty()) throw RefineError("oracle produced an empty refinement");
    return pair;
}

// --------------------------------------------------------------------- fixed

FixedTeacher::FixedTeacher(const Corpus& corpus, double perturb_rate, std::uint64_t seed,
                           double entity_boost) {
    if (perturb_rate < 0.0 || perturb_rate >= 1.0)
        throw ConfigError("fixed-reference perturb rate must be in [0, 1)");
    if (entity_boost < 1.0) throw ConfigError("fixed-reference entity boost must be >= 1");
    // Perturbation pool: every token the task can emit, deterministic order.
    Tokens pool;
    {
        std::vector<std::string> all;
        for (const auto& ex : corpus) {
            if (!ex.gold) throw ConfigError("fixed teacher needs gold for every example (missing for '" + ex.id + "')");
            for (const auto& t : *ex.gold) all.push_back(t);
        }
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        pool = std::move(all);
    }
    if (pool.size() < 2 && perturb_rate > 0.0)
        throw ConfigError("fixed teacher perturbation needs at least 2 distinct gold tokens");
    std::unordered_map<std::string, std::size_t> pool_index;
    for (std::size_t i = 0; i < pool.size(); ++i) pool_index.emplace(pool[i], i);

    for (const auto& ex : corpus) {
        Tokens ref = *ex.gold;
        // Positions covered by an entity's canonical rendering perturb at the
        // boosted rate (first occurrence of each rendering in the gold).
        std::vector<bool> entity_pos(ref.size(), false);
        for (const auto& ent : ex.entities) {
            for (std::size_t i = 0; i + ent.target.size() <= ref.size(); ++i) {
                bool all = true;
                for (std::size_t j = 0; j < ent.target.size(); ++j) {
                    if (ref[i + j] != ent.target[j]) {
                        all = false;
                        break;
                    }
                }
                if (all) {
                    for (std::size_t j = 0; j < ent.target.size(); ++j) entity_pos[i + j] = true;
                    break;
                }
            }
        }
        Rng rng(mix_seed(seed, fnv1a(source_key(ex.source))));
        for (std::size_t t = 0; t < ref.size(); ++t) {
            const double rate =
                entity_pos[t] ? std::min(1.0, perturb_rate * entity_boost) : perturb_rate;
            if (rng.uniform() >= rate) continue;
            std::string& tok = ref[t];
            const auto it = pool_index.find(tok);
            if (it == pool_index.end()) {
                tok = pool[rng.below(pool.size())];
            } else {
                auto idx = rng.below(pool.size() - 1);
                if (idx >= it->second) ++idx;
                tok = pool[idx];
            }
        }
        reference_by_source_.emplace(source_key(ex.source), std::move(ref));
    }
    if (reference_by_source_.empty()) throw ConfigError("fixed teacher built from an empty corpus");
}

RefinedPair FixedTeacher::refine(const Tokens& source, const Tokens& draft) {
    const auto it = reference_by_source_.find(source_key(source));
    if (it == reference_by_source_.end())
        throw RefineError("no fixed reference for source: '" + join(source) + "'");
    RefinedPair pair;
    pair.source = source;
    pair.draft = draft;
    pair.refined = it->second;  // independent of the draft by design
    pair.kind = TeacherKind::fixed;
    if (pair.refined.empty()) throw RefineError("fixed reference is empty");
    return pair;
}

// --------------------------------------------------------------------- cache

RefinementCache::RefinementCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;  // fresh cache
    std::string line;
    std::size_t lineno = 0, bad = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Entry e;
            e.key = j.at("key").get<std::string>();
            e.source = split_ws(j.at("source").get<std::string>());
            e.draft = split_ws(j.at("draft").get<std::string>());
            e.refined = split_ws(j.at("refined").get<std::string>());
            e.model = j.value("model", std::string{});
            e.timestamp = j.value("timestamp", std::string{});
            if (e.key.empty() || e.refined.empty()) throw ConfigError("incomplete cache entry");
            entries_[e.key] = std::move(e);
        } catch (const std::exception&) {
            ++bad;
        }
    }
    if (bad > 0) {
        std::cerr << "[rlfr] refinement cache " << path_ << ": dropped " << bad
                  << " corrupt line(s), rebuilding\n";
        std::ofstream out(path_, std::ios::trunc);
        for (const auto& [key, e] : entries_) {
            nlohmann::ordered_json j;
            j["key"] = e.key;
            j["source"] = join(e.source);
            j["draft"] = join(e.draft);
            j["refined"] = join(e.refined);
            j["model"] = e.model;
            j["timestamp"] = e.timestamp;
            out << j.dump() << '\n';
        }
    }
}

std::optional<RefinementCache::Entry> RefinementCache::lookup(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void RefinementCache::append(const Entry& entry) {
    std::lock_guard<std::mutex> lock(mu_);
    if (entries_.count(entry.key)) return;
    entries_[entry.key] = entry;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to refinement cache: " + path_);
    nlohmann::ordered_json j;
    j["key"] = entry.key;
    j["source"] = join(entry.source);
    j["draft"] = join(entry.draft);
    j["refined"] = join(entry.refined);
    j["model"] = entry.model;
    j["timestamp"] = entry.timestamp;
    out << j.dump() << '\n';
    out.flush();
}

std::size_t RefinementCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
}

std::string cache_key(TeacherKind kind, const std::string& model, const Tokens& source,
                      const Tokens& draft) {
    std::uint64_t h = fnv1a(to_string(kind));
    h = fnv1a("\x1f" + model, h);
    h = fnv1a("\x1f" + join(source), h);
    h = fnv1a("\x1f" + join(draft), h);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// -------------------------------------------------------------------- remote

const char* RemoteTeacher::system_prompt() {
    return "You are an expert in Machine Translation and Cultural Localization. Refine a given "
           "machine-translated sentence by improving its quality and naturally localizing named "
           "entities into the target language only.\n\n"
           "Guidelines\n"
           "- Entity Localization: Translate or adapt all named entities into natural, "
           "target-language-only forms. Do not include the source language. Use official or "
           "culturally standard localized names.\n"
           "- Style and Tone: Match the tone of the source (formal, neutral, conversational).\n"
           "- Fluency: Ensure the result is natural, idiomatic, and fluid.\n"
           "- Grammar and Accuracy: Fix any awkward grammar or inconsistent wording.";
}

RemoteTeacher::RemoteTeacher(TeacherConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw ConfigError("remote teacher needs an endpoint URL");
    if (config_.model.empty()) throw ConfigError("remote teacher needs a model name");
    if (config_.retries < 0) throw ConfigError("retries must be >= 0");
    if (config_.max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
    if (!config_.cache_path.empty()) cache_ = std::make_unique<RefinementCache>(config_.cache_path);
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    }
}

RefinedPair RemoteTeacher::refine(const Tokens& source, const Tokens& draft) {
    const std::string key = cache_key(TeacherKind::remote, config_.model, source, draft);
    if (cache_) {
        if (auto hit = cache_->lookup(key)) {
            RefinedPair pair;
            pair.source = source;
            pair.draft = draft;
            pair.refined = hit->refined;
            pair.kind = TeacherKind::remote;
            pair.cache_hit = true;
            return pair;
        }
    }
    RefinedPair pair = refine_uncached(source, draft);
    if (cache_) {
        RefinementCache::Entry e;
        e.key = key;
        e.source = source;
        e.draft = draft;
        e.refined = pair.refined;
        e.model = config_.model;
        e.timestamp = now_rfc3339();
        cache_->append(e);
    }
    return pair;
}

RefinedPair RemoteTeacher::refine_uncached(const Tokens& source, const Tokens& draft) {
    const auto [base, path] = split_url(config_.endpoint);
    const auto [sec, usec] = timeout_parts(config_.timeout_s);
    nlohmann::ordered_json payload;
    payload["model"] = config_.model;
    payload["messages"] = nlohmann::ordered_json::array(
        {nlohmann::ordered_json{{"role", "system"}, {"content", system_prompt()}},
         nlohmann::ordered_json{{"role", "user"},
                                {"content", "Source: " + join(source) + "\nDraft: " + join(draft)}}});
    payload["temperature"] = config_.temperature;
    const std::string body = payload.dump();

    std::vector<std::string> attempts;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (attempt > 0 && config_.backoff_ms > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms * attempt));
        }
        const auto start = std::chrono::steady_clock::now();
        httplib::Client client(base);
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(path, headers, body, "application/json");
        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start)
                              .count();
        if (!res) {
            attempts.push_back("attempt " + std::to_string(attempt + 1) + ": transport error (" +
                               httplib::to_string(res.error()) + ")");
            continue;
        }
        if (res->status != 200) {
            attempts.push_back("attempt " + std::to_string(attempt + 1) + ": HTTP " +
                               std::to_string(res->status));
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(res->body);
            const std::string content =
                j.at("choices").at(0).at("message").at("content").get<std::string>();
            RefinedPair pair;
            pair.source = source;
            pair.draft = draft;
            pair.refined = split_ws(content);
            pair.kind = TeacherKind::remote;
            pair.latency_ms = ms;
            if (j.contains("usage")) {
                pair.prompt_tokens = j["usage"].value("prompt_tokens", 0);
                pair.completion_tokens = j["usage"].value("completion_tokens", 0);
            }
            if (pair.refined.empty())
                throw RefineError("teacher returned an empty refinement");
            return pair;
        } catch (const nlohmann::json::exception& e) {
            attempts.push_back("attempt " + std::to_string(attempt + 1) + ": malformed response (" +
                               e.what() + ")");
        } catch (const RefineError& e) {
            attempts.push_back("attempt " + std::to_string(attempt + 1) + ": " + e.what());
        }
    }
    throw RefineError("remote refinement failed after " + std::to_string(config_.retries + 1) +
                          " attempt(s): " + (attempts.empty() ? "no attempts" : attempts.back()),
                      attempts);
}

std::vector<RefineOutcome> RemoteTeacher::refine_batch(
    const std::vector<std::pair<Tokens, Tokens>>& pairs) {
    std::vector<RefineOutcome> out(pairs.size());
    // Unique work items; duplicates are filled from the representative result.
    std::unordered_map<std::string, std::size_t> rep;
    std::vector<std::size_t> work;
    std::vector<std::vector<std::size_t>> dup_of;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string key = join(pairs[i].first) + "\x1f" + join(pairs[i].second);
        const auto it = rep.find(key);
        if (it == rep.end()) {
            rep.emplace(key, work.size());
            work.push_back(i);
            dup_of.emplace_back();
        } else {
            dup_of[it->second].push_back(i);
        }
    }
    // Waves of at most max_concurrency parallel requests.
    const std::size_t conc = static_cast<std::size_t>(config_.max_concurrency);
    for (std::size_t begin = 0; begin < work.size(); begin += conc) {
        const std::size_t end = std::min(begin + conc, work.size());
        std::vector<std::thread> threads;
        for (std::size_t w = begin; w < end; ++w) {
            threads.emplace_back([this, &pairs, &out, i = work[w]] {
                try {
                    out[i].pair = refine(pairs[i].first, pairs[i].second);
                } catch (const std::exception& e) {
                    out[i].error = e.what();
                }
            });
        }
        for (auto& t : threads) t.join();
    }
    for (std::size_t w = 0; w < work.size(); ++w) {
        for (std::size_t i : dup_of[w]) out[i] = out[work[w]];
    }
    return out;
}

// ------------------------------------------------------------------- factory

std::unique_ptr<Teacher> make_teacher(const TeacherConfig& config, const Corpus& corpus,
                                      double fixed_perturb_rate, std::uint64_t fixed_seed,
                                      double fixed_entity_boost) {
    switch (config.kind) {
        case TeacherKind::oracle: return std::make_unique<OracleTeacher>(corpus);
        case TeacherKind::fixed:
            return std::make_unique<FixedTeacher>(corpus, fixed_perturb_rate, fixed_seed,
                                                  fixed_entity_boost);
        case TeacherKind::remote: return std::make_unique<RemoteTeacher>(config);
    }
    throw ConfigError("unknown teacher kind");
}

}  // namespace rlfr
