#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace btdnet::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// A named tensor. Buffers (batch-norm running statistics) are parameters
/// with `trainable == false`; they are checkpointed but never updated by the
/// optimiser.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)), trainable(train) {}

  void zero_grad() { grad.setZero(); }
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

/// N images of C x H x W, stored image-major, then channel, row, column.
template <typename T>
struct FeatureMaps {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  FeatureMaps() = default;
  FeatureMaps(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

  size_t image_size() const { return static_cast<size_t>(c) * h * w; }
  T* image(int i) { return data.data() + image_size() * i; }
  const T* image(int i) const { return data.data() + image_size() * i; }
};

/// Fills with U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename T>
void fan_in_uniform(Matrix<T>& m, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

}  // namespace btdnet::nn
