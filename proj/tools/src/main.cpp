#include <iostream>

#include "amcl/cli.hpp"

int main(int argc, char** argv) { return amcl::cli::run_cli(argc, argv, std::cout, std::cerr); }
