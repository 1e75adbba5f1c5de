#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace rlfr {

using Tokens = std::vector<std::string>;

// Whitespace tokenization; consecutive separators collapse, no empty tokens.
inline Tokens split_ws(const std::string& text) {
    Tokens out;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::string join(const Tokens& tokens, char sep = ' ') {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(sep);
        out += tokens[i];
    }
    return out;
}

// Shortest round-trippable decimal for CSV cells and logs.
inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// True when `needle` occurs in `hay` as a contiguous run of tokens.
inline bool contains_span(const Tokens& hay, const Tokens& needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
        bool all = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (hay[i + j] != needle[j]) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

}  // namespace rlfr
