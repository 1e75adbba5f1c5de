#pragma once

// Shared helpers for the test binaries: a scratch-directory guard, an
// independent edit-distance oracle, and a finite-difference gradient checker.

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rlfr/grad.hpp"
#include "rlfr/strings.hpp"

namespace testers {

// Unique scratch directory, recursively removed on destruction.
class TmpDir {
public:
    explicit TmpDir(const std::string& tag = "rlfr") {
        static std::atomic<std::uint64_t> counter{0};
        const auto n = counter.fetch_add(1);
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(n));
        std::filesystem::create_directories(path_);
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TmpDir(const TmpDir&) = delete;
    TmpDir& operator=(const TmpDir&) = delete;

    std::string str() const { return path_.string(); }
    std::string sub(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

// ------------------------------------------------- edit-distance oracle

// Exhaustive search over edit scripts by iterative deepening: can `a` be
// turned into `b` with at most `budget` single-token edits? No DP table is
// involved, so this is an independent check of the production distance.
inline bool edit_reachable(const std::string* a, std::size_t la, const std::string* b,
                           std::size_t lb, std::size_t budget) {
    while (la > 0 && lb > 0 && *a == *b) {
        ++a;
        --la;
        ++b;
        --lb;
    }
    if (la == 0 && lb == 0) return true;
    if (budget == 0) return false;
    // Substitute, delete from a, insert from b (first token each).
    if (la > 0 && lb > 0 && edit_reachable(a + 1, la - 1, b + 1, lb - 1, budget - 1)) return true;
    if (la > 0 && edit_reachable(a + 1, la - 1, b, lb, budget - 1)) return true;
    if (lb > 0 && edit_reachable(a, la, b + 1, lb - 1, budget - 1)) return true;
    return false;
}

inline std::size_t edit_distance_oracle(const rlfr::Tokens& a, const rlfr::Tokens& b) {
    const std::size_t cap = a.size() + b.size();
    for (std::size_t d = 0; d <= cap; ++d) {
        if (edit_reachable(a.data(), a.size(), b.data(), b.size(), d)) return d;
    }
    return cap;  // unreachable: cap edits always suffice
}

// ------------------------------------------------- finite differences

// Central finite-difference gradient of `f` with respect to every entry of
// `params`, compared against `analytic` (same flattening order: tensors in
// the given order, row-major within each). Returns the relative L2 error.
inline double fd_relative_error(const std::vector<rlfr::Tensor*>& params,
                                const std::function<double()>& f,
                                const std::vector<double>& analytic, double h) {
    std::vector<double> fd;
    for (rlfr::Tensor* t : params) {
        for (std::int64_t i = 0; i < t->size(); ++i) {
            const double saved = t->values[static_cast<std::size_t>(i)];
            t->values[static_cast<std::size_t>(i)] = saved + h;
            const double up = f();
            t->values[static_cast<std::size_t>(i)] = saved - h;
            const double down = f();
            t->values[static_cast<std::size_t>(i)] = saved;
            fd.push_back((up - down) / (2.0 * h));
        }
    }
    if (fd.size() != analytic.size()) return INFINITY;
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double d = fd[i] - analytic[i];
        diff2 += d * d;
        a2 += analytic[i] * analytic[i];
        f2 += fd[i] * fd[i];
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(f2), 1e-12});
    return std::sqrt(diff2) / denom;
}

inline std::vector<double> flatten_grads(const std::vector<rlfr::Tensor*>& params) {
    std::vector<double> out;
    for (const rlfr::Tensor* t : params) out.insert(out.end(), t->grad.begin(), t->grad.end());
    return out;
}

inline std::vector<double> flatten_values(const std::vector<const rlfr::Tensor*>& params) {
    std::vector<double> out;
    for (const rlfr::Tensor* t : params) out.insert(out.end(), t->values.begin(), t->values.end());
    return out;
}

}  // namespace testers
