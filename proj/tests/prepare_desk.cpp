#include <iostream>

#include "desk.hpp"
#include "pcarmor/model.hpp"

int main() {
  try {
    const auto& desk = testsupport::desk_model();
    std::cout << "desk model " << pcarmor::to_hex(pcarmor::weights_fingerprint(desk.weights))
              << ", test accuracy " << 100.0 * pcarmor::accuracy(desk.weights, desk.data.test.clouds)
              << "%\n";
  } catch (const std::exception& e) {
    std::cerr << "prepare_desk: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
