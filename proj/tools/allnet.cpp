#include <iostream>

#include "allnet/cli.hpp"

int main(int argc, char** argv) { return allnet::cli::run(argc, argv, std::cout, std::cerr); }
