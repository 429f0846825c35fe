#include <string>
#include <vector>

#include "markovpide/runner.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return markovpide::run_subcommand(args);
}
