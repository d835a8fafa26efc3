#include <iostream>
#include <string>
#include <vector>

#include "pharos/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pharos::cli::run(args, std::cout, std::cerr);
}
