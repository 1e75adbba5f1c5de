#pragma once

#include <string>
#include <vector>

namespace rlfr::cli {

// Full command surface, in-process. `args` excludes the program name.
// Subcommands: gen-corpus, sft, rl, eval, compare, plot-data. Returns the
// process exit status (0 success; nonzero with a one-line cause on stderr).
int run(const std::vector<std::string>& args);

}  // namespace rlfr::cli
