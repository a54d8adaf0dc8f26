#include <iostream>

#include "blockfit/cli.hpp"

int main(int argc, char** argv) { return blockfit::cli_main(argc, argv, std::cout, std::cerr); }
