#include <string>
#include <vector>

#include "metadescent/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return metadescent::run_cli(std::move(args));
}
