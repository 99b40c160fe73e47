#include <iostream>

#include "acceptance.hpp"
#include "funnelguard/harness.hpp"

int main(int argc, char** argv) {
    return funnelguard::harness::cli_main(argc, argv, std::cout, std::cerr,
                                          [](std::ostream& out) {
                                              return funnelguard::acceptance::run_all(out);
                                          });
}
