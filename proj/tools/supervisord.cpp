#include <iostream>
#include <string>
#include <vector>

#include "supervisor/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return supervisor::run_cli(args, std::cin, std::cout, std::cerr);
}
