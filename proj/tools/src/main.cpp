#include <iostream>

#include "depthmae_cli/cli.hpp"

int main(int argc, char** argv) { return depthmae::cli::run(argc, argv, std::cout, std::cerr); }
