#include <iostream>

#include "clampcal/cli.hpp"

int main(int argc, char** argv) { return clampcal::run_cli(argc, argv, std::cout, std::cerr); }
