#pragma once

#include <functional>
#include <vector>

#include "btdnet/nn/tensor.hpp"

namespace btdnet::training {

/// SGD with heavy-ball momentum: buf = momentum * buf + g; theta -= lr * buf.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(const nn::ParamList<T>& params);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double momentum_;
  std::vector<nn::Matrix<T>> buffers_;
};

/// Evaluates the loss and accumulates gradients into zeroed buffers. The flag
/// is true on the first evaluation of a step, the only one allowed to update
/// batch-norm running statistics.
using Closure = std::function<double(bool first_pass)>;

/// One sharpness-aware step. The gradient at theta + rho * g / |g| (global
/// norm) drives the momentum update of the unperturbed theta. With rho = 0 or
/// a zero gradient the second evaluation is skipped. Returns the first loss.
template <typename T>
double sam_step(const nn::ParamList<T>& params, const Closure& closure, SgdMomentum<T>& optimizer, double rho);

}  // namespace btdnet::training
