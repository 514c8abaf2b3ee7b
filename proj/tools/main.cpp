#include "cli.hpp"

int main(int argc, char** argv) {
  return mls2s::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
