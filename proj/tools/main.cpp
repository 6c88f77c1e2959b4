#include <iostream>
#include <string>
#include <vector>

#include "hieraddr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hieraddr::run(args, std::cout, std::cerr);
}
