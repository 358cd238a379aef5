#include <iostream>
#include <string>
#include <vector>

#include "rdd/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return rdd::cli::run(args, std::cout, std::cerr);
}
