#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "lfx/cli.hpp"
#include "lfx/detail/alloc.hpp"

int main(int argc, char** argv) {
  lfx::detail::tune_allocator();
  try {
    return lfx::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
