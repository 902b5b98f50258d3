#include <iostream>

#include "trilevel/cli/app.hpp"

int main(int argc, char** argv) {
  return trilevel::cli::run_app(argc, argv, std::cout, std::cerr);
}
