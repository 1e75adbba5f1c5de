#pragma once

#include <string>
#include <utility>

#include "rlfr/errors.hpp"

namespace rlfr {

// (sec, usec) pair for httplib timeout setters.
inline std::pair<time_t, time_t> timeout_parts(double seconds) {
    const auto sec = static_cast<time_t>(seconds);
    const auto usec = static_cast<time_t>((seconds - static_cast<double>(sec)) * 1e6);
    return {sec, usec};
}

// Splits "http://host:port/some/path" into ("http://host:port", "/some/path").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("endpoint URL must include a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace rlfr
