#include <iostream>
#include <string>
#include <vector>

#include "fibersr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fibersr::cli::dispatch(args, std::cout, std::cerr);
}
