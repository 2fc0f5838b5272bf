#include <iostream>

#include "gprinv/cli.hpp"

int main(int argc, char** argv) { return gprinv::cli::run(argc, argv, std::cout, std::cerr); }
