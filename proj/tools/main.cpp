#include <iostream>

#include "iconsal/cli/commands.hpp"

int main(int argc, char** argv) { return iconsal::cli::run(argc, argv, std::cout, std::cerr); }
