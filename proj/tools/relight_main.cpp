#include <iostream>
#include <string>
#include <vector>

#include "relight/cli.hpp"

int main(int argc, char** argv) {
  return relight::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
