#include <iostream>

#include "expanel/cli.hpp"

int main(int argc, char** argv) { return expanel::run_cli(argc, argv, std::cout, std::cerr); }
