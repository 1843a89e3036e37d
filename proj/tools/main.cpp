#include <iostream>

#include "pf/cli/run.hpp"

int main(int argc, char** argv) { return pf::cli::run({argv, argv + argc}, std::cout, std::cerr); }
