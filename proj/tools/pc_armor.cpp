#include <iostream>

#include "pcarmor/harness/commands.hpp"

int main(int argc, char** argv) {
  return pcarmor::harness::run_cli(argc, argv, std::cout, std::cerr);
}
