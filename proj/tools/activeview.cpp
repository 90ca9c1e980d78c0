#include <string>
#include <vector>

#include "activeview/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return av::run_cli(args);
}
