#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace btdnet {

struct InvariantResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick invariant suite on a tiny model and synthetic scans: padding
/// invariance, masked gradients, loss identities, mixing endpoints, TTA sums
/// and the macro-F1 degenerate case.
std::vector<InvariantResult> run_selftest(uint64_t seed = 0);

}  // namespace btdnet
