#pragma once

#include <string>
#include <vector>

#include "btdnet/nn/tensor.hpp"

namespace btdnet::nn {

/// Single-layer unidirectional LSTM, gate order (input, forget, cell, output).
/// Sequences are processed as a batch: step k of every sequence is one
/// B x input matrix.
template <typename T>
class Lstm {
 public:
  struct Cache {
    std::vector<Matrix<T>> inputs;  // t x (B x D)
    std::vector<Matrix<T>> gates;   // activated gates, t x (B x 4V)
    std::vector<Matrix<T>> cells;   // t x (B x V)
    std::vector<Matrix<T>> hidden;  // t x (B x V)
  };

  Lstm() = default;
  Lstm(const std::string& name, int input_size, int hidden_size);

  /// Fan-in uniform input weights, orthogonal recurrent blocks, zero bias
  /// with forget-gate bias 1.
  void init(Rng& rng);

  std::vector<Matrix<T>> forward(const std::vector<Matrix<T>>& inputs, Cache* cache) const;
  /// Back-propagation through time. Returns dL/d inputs per step.
  std::vector<Matrix<T>> backward(const Cache& cache, const std::vector<Matrix<T>>& d_hidden);
  void collect(ParamList<T>& out);

  int input_size() const { return static_cast<int>(w_ih.value.cols()); }
  int hidden_size() const { return static_cast<int>(w_hh.value.cols()); }

  Parameter<T> w_ih;  // 4V x D
  Parameter<T> w_hh;  // 4V x V
  Parameter<T> bias;  // 1 x 4V
};

}  // namespace btdnet::nn
