#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace btdnet::training {

/// k validation folds of dataset indices; fold f trains on the rest.
struct FoldSplit {
  std::vector<std::vector<int>> folds;

  int k() const { return static_cast<int>(folds.size()); }
  const std::vector<int>& validation(int f) const { return folds.at(f); }
  std::vector<int> training(int f) const;
};

/// Classes are shuffled separately and dealt round-robin, the dealing position
/// carrying over from one class to the next. Throws kInsufficientClass when a
/// class has fewer than k members.
FoldSplit stratified_kfold(std::span<const int> labels, int k, uint64_t seed);

}  // namespace btdnet::training
