#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rlfr {

// Bad user-supplied configuration: invalid task spec, flag values, presets.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller broke an API precondition (shape mismatch, detached graph, ...).
// These indicate bugs, not recoverable conditions.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Corpus file problems. Messages carry file / line context.
struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint and run-directory I/O problems.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scoring failures (remote scorer unreachable, score out of range, ...).
struct RewardError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Teacher refinement failure after retries. Carries the per-attempt log so
// callers can report what was tried.
struct RefineError : std::runtime_error {
    std::vector<std::string> attempts;

    explicit RefineError(const std::string& msg, std::vector<std::string> attempt_log = {})
        : std::runtime_error(msg), attempts(std::move(attempt_log)) {}
};

}  // namespace rlfr
