#include <string>
#include <vector>

#include "gip/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gip::run_cli(std::move(args));
}
