#include <string>
#include <vector>

#include "rlfr/cli.hpp"

int main(int argc, char** argv) {
    return rlfr::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
