#include "ssmkit/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return ssm::cli::run(argc, argv, std::cout, std::cerr); }
