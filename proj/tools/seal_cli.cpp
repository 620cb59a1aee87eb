#include <string>
#include <vector>

#include "seal/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return seal::cli::cli_dispatch(args);
}
