#include <iostream>

#include "cli/commands.hpp"

int main(int argc, char** argv) {
  return ncconv::cli::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
