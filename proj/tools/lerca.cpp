#include <iostream>

#include "lerca/cli.hpp"

int main(int argc, char** argv) { return lerca::run_cli(argc, argv, std::cout, std::cerr); }
