#include <cstdlib>
#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return dropbp::cli::run(argc, argv, std::cin, std::cout, std::cerr,
                          [](const char* name) { return std::getenv(name); });
}
