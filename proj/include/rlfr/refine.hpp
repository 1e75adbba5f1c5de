#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlfr/corpus.hpp"
#include "rlfr/strings.hpp"

namespace rlfr {

enum class TeacherKind { oracle, remote, fixed };

std::string to_string(TeacherKind kind);

// One refinement result and where it came from. `refined` is the teacher's
// corrected version of `draft`; `edits` counts the token edits applied.
struct RefinedPair {
    Tokens source;
    Tokens draft;
    Tokens refined;
    TeacherKind kind = TeacherKind::oracle;
    bool cache_hit = false;
    double latency_ms = 0.0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::size_t edits = 0;
};

// Per-pair outcome of a batched call; a failed entry carries the error text
// instead of a pair (partial success is allowed).
struct RefineOutcome {
    std::optional<RefinedPair> pair;
    std::string error;
    bool ok() const { return pair.has_value(); }
};

struct TeacherConfig {
    TeacherKind kind = TeacherKind::oracle;
    std::string endpoint;         // chat-completions URL (remote)
    std::string model;            // remote model name
    std::string api_key_env;      // env var holding the bearer token; never a flag
    double timeout_s = 30.0;
    int retries = 3;
    int backoff_ms = 200;         // grows linearly per attempt
    int max_concurrency = 4;
    std::string cache_path;       // empty disables the cache
    double temperature = 0.0;     // teacher decodes deterministically
};

class Teacher {
public:
    virtual ~Teacher() = default;
    virtual TeacherKind kind() const = 0;
    virtual RefinedPair refine(const Tokens& source, const Tokens& draft) = 0;

    // Order-preserving; duplicates of the same (source, draft) are resolved
    // once. Default implementation is sequential.
    virtual std::vector<RefineOutcome> refine_batch(
        const std::vector<std::pair<Tokens, Tokens>>& pairs);
};

// Knows the task's exact transduction (from the corpus golds) and corrects a
// draft by applying the minimal edit script that aligns it to gold; the
// result equals gold, and no correct target is closer to the draft.
// Alignment tie-breaks: substitution preferred over insert+delete, leftmost
// edits first.
class OracleTeacher final : public Teacher {
public:
    explicit OracleTeacher(const Corpus& corpus);
    TeacherKind kind() const override { return TeacherKind::oracle; }
    RefinedPair refine(const Tokens& source, const Tokens& draft) override;

private:
    std::unordered_map<std::string, Tokens> gold_by_source_;
};

// Static reference per source, independent of the draft. References are the
// gold with a fraction of tokens perturbed (deterministic per example), the
// stand-in for rigid pre-collected references. Positions inside an entity's
// canonical rendering are perturbed at `entity_boost` times the base rate:
// pre-collected references are typically fluent on ordinary words but
// inconsistent on localized entity forms, which is the failure mode a live
// refiner corrects.
class FixedTeacher final : public Teacher {
public:
    FixedTeacher(const Corpus& corpus, double perturb_rate, std::uint64_t seed,
                 double entity_boost = 3.0);
    TeacherKind kind() const override { return TeacherKind::fixed; }
    RefinedPair refine(const Tokens& source, const Tokens& draft) override;

private:
    std::unordered_map<std::string, Tokens> reference_by_source_;
};

// Append-only store of (key, source, draft, refined) records keyed by a
// digest of (teacher kind, model, source, draft). Corrupt lines are dropped
// with a warning and the file is rewritten from the surviving records.
class RefinementCache {
public:
    explicit RefinementCache(std::string path);

    struct Entry {
        std::string key;
        Tokens source;
        Tokens draft;
        Tokens refined;
        std::string model;
        std::string timestamp;
    };

    std::optional<Entry> lookup(const std::string& key) const;
    void append(const Entry& entry);
    std::size_t size() const;

private:
    std::string path_;
    std::unordered_map<std::string, Entry> entries_;
    mutable std::mutex mu_;
};

std::string cache_key(TeacherKind kind, const std::string& model, const Tokens& source,
                      const Tokens& draft);

// OpenAI-compatible chat-completions client. The request carries a fixed
// system message with the refinement instructions and a two-field user
// message ("Source: ...\nDraft: ..."); the response content is the refined
// sentence. Failures retry with linear backoff; the per-attempt log rides on
// the thrown RefineError. A cache hit never touches the network.
class RemoteTeacher final : public Teacher {
public:
    explicit RemoteTeacher(TeacherConfig config);
    TeacherKind kind() const override { return TeacherKind::remote; }
    RefinedPair refine(const Tokens& source, const Tokens& draft) override;
    std::vector<RefineOutcome> refine_batch(
        const std::vector<std::pair<Tokens, Tokens>>& pairs) override;

    static const char* system_prompt();

private:
    RefinedPair refine_uncached(const Tokens& source, const Tokens& draft);

    TeacherConfig config_;
    std::unique_ptr<RefinementCache> cache_;
    std::string api_key_;
};

// Factory used by the trainer CLI. The corpus supplies golds for the oracle
// and the perturbation base for fixed references.
std::unique_ptr<Teacher> make_teacher(const TeacherConfig& config, const Corpus& corpus,
                                      double fixed_perturb_rate = 0.12,
                                      std::uint64_t fixed_seed = 0,
                                      double fixed_entity_boost = 3.0);

}  // namespace rlfr
