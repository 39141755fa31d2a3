#include "btdnet/training/kfold.hpp"

#include <algorithm>
#include <random>

#include "btdnet/error.hpp"

namespace btdnet::training {

std::vector<int> FoldSplit::training(int f) const {
  std::vector<int> out;
  for (int g = 0; g < k(); ++g) {
    if (g != f) out.insert(out.end(), folds[g].begin(), folds[g].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldSplit stratified_kfold(std::span<const int> labels, int k, uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::kInvalidParameter, "k must be >= 2");
  std::vector<std::vector<int>> by_class(2);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::kInvalidParameter, "labels must be 0 or 1");
    by_class[labels[i]].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < 2; ++c) {
    if (static_cast<int>(by_class[c].size()) < k) {
      throw Error(ErrorCode::kInsufficientClass, "class " + std::to_string(c) + " has " +
                                                     std::to_string(by_class[c].size()) + " members, fewer than k=" +
                                                     std::to_string(k));
    }
  }
  std::mt19937_64 rng(seed);
  FoldSplit split;
  split.folds.resize(k);
  int position = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (int idx : members) {
      split.folds[position % k].push_back(idx);
      ++position;
    }
  }
  for (auto& f : split.folds) std::sort(f.begin(), f.end());
  return split;
}

}  // namespace btdnet::training
