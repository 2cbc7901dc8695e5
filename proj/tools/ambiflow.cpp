#include <iostream>

#include "ambiflow/cli.hpp"

int main(int argc, char** argv) { return ambiflow::cli::run(argc, argv, std::cout, std::cerr); }
