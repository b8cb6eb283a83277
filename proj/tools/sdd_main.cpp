#include <iostream>
#include <string>
#include <vector>

#include "sdd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return sdd::run(args, std::cout, std::cerr);
}
