#pragma once

#include <cmath>
#include <string>

#include "btdnet/nn/tensor.hpp"

namespace btdnet::nn {

// Exact (erf-based) GELU and its derivative.
template <typename T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}
template <typename T>
inline T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

/// Array forms over n contiguous values (vectorised erf/exp for float).
template <typename T>
void gelu_array(const T* x, T* y, size_t n);
/// g[i] *= gelu'(x[i]).
template <typename T>
void gelu_grad_array(const T* x, T* g, size_t n);

template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  gelu_array(x.data(), y.data(), static_cast<size_t>(x.size()));
  return y;
}
/// dy * gelu'(x), elementwise.
template <typename T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  Matrix<T> dx = dy;
  gelu_grad_array(x.data(), dx.data(), static_cast<size_t>(x.size()));
  return dx;
}

/// y = x W^T + b for rows of x.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  void init(Rng& rng);
  Matrix<T> forward(const Matrix<T>& x) const;
  /// Accumulates parameter gradients; returns dL/dx.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy);
  void collect(ParamList<T>& out);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  Parameter<T> weight;
  Parameter<T> bias;
};

/// Batch normalisation over rows (features are columns).
template <typename T>
class BatchNorm {
 public:
  struct Cache {
    Matrix<T> xhat;
    RowVector<T> inv_std;
    bool batch_stats = false;
  };

  BatchNorm() = default;
  BatchNorm(const std::string& name, int features, double momentum = 0.1, double eps = 1e-5);

  /// `batch_stats` selects batch statistics (training) or running statistics.
  /// Running statistics are updated only when `batch_stats && update_running`.
  Matrix<T> forward(const Matrix<T>& x, bool batch_stats, bool update_running, Cache& cache);
  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy);
  void collect(ParamList<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;
  Parameter<T> running_mean;
  Parameter<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// 2-D convolution via im2col; weight is Cout x (Cin*k*k), matching the
/// usual [Cout, Cin, kh, kw] flattening.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int padding, bool with_bias);

  void init(Rng& rng);
  FeatureMaps<T> forward(const FeatureMaps<T>& x) const;
  /// `dx` may be null when the input gradient is not needed.
  void backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy, FeatureMaps<T>* dx);
  void collect(ParamList<T>& out);

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  // Column blocks of one image inside a wider buffer with row stride `ld`.
  void im2col(const T* image, int h, int w, T* col, Eigen::Index ld) const;
  void col2im(const T* col, Eigen::Index ld, int h, int w, T* image) const;

  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int padding_ = 0;
  bool with_bias_ = true;
};

/// Per-channel affine batch norm with frozen statistics, for convolutional
/// feature maps.
template <typename T>
class FrozenBatchNorm2d {
 public:
  FrozenBatchNorm2d() = default;
  FrozenBatchNorm2d(const std::string& name, int channels, double eps = 1e-5);

  FeatureMaps<T> forward(const FeatureMaps<T>& x) const;
  FeatureMaps<T> backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy);
  void collect(ParamList<T>& out);

  Parameter<T> gamma;
  Parameter<T> beta;
  Parameter<T> running_mean;
  Parameter<T> running_var;
  double eps = 1e-5;
};

template <typename T>
FeatureMaps<T> gelu(const FeatureMaps<T>& x);
template <typename T>
FeatureMaps<T> gelu_backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy);
template <typename T>
FeatureMaps<T> relu(const FeatureMaps<T>& x);
template <typename T>
FeatureMaps<T> relu_backward(const FeatureMaps<T>& y, const FeatureMaps<T>& dy);

/// Non-overlapping k x k average pooling (h, w divisible by k).
template <typename T>
FeatureMaps<T> avg_pool(const FeatureMaps<T>& x, int k);
template <typename T>
FeatureMaps<T> avg_pool_backward(const FeatureMaps<T>& dy, int k);

/// 3x3 stride-2 pad-1 max pooling; `argmax` records the winning input index.
template <typename T>
FeatureMaps<T> max_pool3s2(const FeatureMaps<T>& x, std::vector<int>& argmax);
template <typename T>
FeatureMaps<T> max_pool3s2_backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy, const std::vector<int>& argmax);

/// N x C output of spatial means.
template <typename T>
Matrix<T> global_avg_pool(const FeatureMaps<T>& x);
template <typename T>
FeatureMaps<T> global_avg_pool_backward(const Matrix<T>& dy, int h, int w);

}  // namespace btdnet::nn
