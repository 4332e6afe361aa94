#include <iostream>

#include "tarec/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tarec::cli::run(args, std::cout, std::cerr);
}
