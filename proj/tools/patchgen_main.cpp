#include <iostream>
#include <string>
#include <vector>

#include "patchgen/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return patchgen::dispatch(args, std::cout, std::cerr);
}
