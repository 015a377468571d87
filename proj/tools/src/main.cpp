#include <iostream>

#include "effops_cli/cli.hpp"

int main(int argc, char** argv) { return effops::cli::run(argc, argv, std::cout, std::cerr); }
