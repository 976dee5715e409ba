#include <string>
#include <vector>

#include "progdisp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return progdisp::cli::run_cli(args);
}
