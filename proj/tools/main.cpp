#include <iostream>
#include <string>
#include <vector>

#include "lrinfer/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lrinfer::cli_dispatch(args, std::cout, std::cerr);
}
