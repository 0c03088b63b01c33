#include "agnet/cli.hpp"

int main(int argc, char** argv) {
  return agnet::cli::run(std::vector<std::string>(argv, argv + argc));
}
