#include "b3d/cli/cli.hpp"

int main(int argc, char** argv) {
  return b3d::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
