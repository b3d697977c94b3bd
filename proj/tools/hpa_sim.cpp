#include <iostream>

#include "hpa/cli.hpp"

int main(int argc, char** argv) { return hpa::cli_main(argc, argv, std::cout, std::cerr); }
