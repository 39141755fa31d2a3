#include "btdnet/nn/layers.hpp"

#include <algorithm>
#include <limits>

#include <unsupported/Eigen/SpecialFunctions>

namespace btdnet::nn {

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", out, in), bias(name + ".bias", 1, out) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  fan_in_uniform(weight.value, in_features(), rng);
  fan_in_uniform(bias.value, in_features(), rng);
}

template <typename T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x) const {
  Matrix<T> y = x * weight.value.transpose();
  y.rowwise() += RowVector<T>(bias.value.row(0));
  return y;
}

template <typename T>
Matrix<T> Linear<T>::backward(const Matrix<T>& x, const Matrix<T>& dy) {
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& name, int features, double momentum_, double eps_)
    : gamma(name + ".weight", 1, features),
      beta(name + ".bias", 1, features),
      running_mean(name + ".running_mean", 1, features, false),
      running_var(name + ".running_var", 1, features, false),
      momentum(momentum_),
      eps(eps_) {
  gamma.value.setOnes();
  running_var.value.setOnes();
}

template <typename T>
Matrix<T> BatchNorm<T>::forward(const Matrix<T>& x, bool batch_stats, bool update_running, Cache& cache) {
  const Eigen::Index n = x.rows();
  cache.batch_stats = batch_stats;
  RowVector<T> mean;
  RowVector<T> var;
  if (batch_stats) {
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean();
    if (update_running) {
      const T m = static_cast<T>(momentum);
      const T unbias = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
      running_mean.value.row(0) = (T(1) - m) * running_mean.value.row(0) + m * mean;
      running_var.value.row(0) = (T(1) - m) * running_var.value.row(0) + m * unbias * var;
    }
  } else {
    mean = running_mean.value.row(0);
    var = running_var.value.row(0);
  }
  cache.inv_std = (var.array() + static_cast<T>(eps)).rsqrt();
  cache.xhat = (x.rowwise() - mean).array().rowwise() * cache.inv_std.array();
  Matrix<T> y = cache.xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += RowVector<T>(beta.value.row(0));
  return y;
}

template <typename T>
Matrix<T> BatchNorm<T>::backward(const Cache& cache, const Matrix<T>& dy) {
  beta.grad.row(0) += dy.colwise().sum();
  gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  if (!cache.batch_stats) return dxhat.array().rowwise() * cache.inv_std.array();

  const T n = static_cast<T>(dy.rows());
  const RowVector<T> sum_dxhat = dxhat.colwise().sum();
  const RowVector<T> sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum().matrix();
  Matrix<T> dx = (n * dxhat).rowwise() - sum_dxhat;
  dx.array() -= cache.xhat.array().rowwise() * sum_dxhat_xhat.array();
  dx.array().rowwise() *= (cache.inv_std.array() / n);
  return dx;
}

template <typename T>
void BatchNorm<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int padding,
                  bool with_bias)
    : weight(name + ".weight", out_channels, in_channels * kernel * kernel),
      bias(name + ".bias", 1, with_bias ? out_channels : 0),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      with_bias_(with_bias) {}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const int fan_in = in_channels_ * kernel_ * kernel_;
  fan_in_uniform(weight.value, fan_in, rng);
  if (with_bias_) fan_in_uniform(bias.value, fan_in, rng);
}

namespace {

// Output positions [lo, hi) whose input index o*stride - padding + k lies in [0, n).
inline std::pair<int, int> valid_range(int k, int n, int out, int stride, int padding) {
  const int first = padding - k;
  const int lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const int last = n - 1 + padding - k;
  const int hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  return {std::min(lo, hi), hi};
}

// Images per GEMM chunk, sized to keep the column buffer around a few MB.
inline int chunk_images(int k_rows, int out_area) {
  const long per_image = static_cast<long>(k_rows) * out_area;
  return static_cast<int>(std::max<long>(1, (long{1} << 16) / std::max<long>(per_image, 1)));
}

}  // namespace

template <typename T>
void Conv2d<T>::im2col(const T* image, int h, int w, T* col, Eigen::Index ld) const {
  const int oh = out_size(h);
  const int ow = out_size(w);
  for (int c = 0; c < in_channels_; ++c) {
    const T* plane = image + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < kernel_; ++ky) {
      const auto [ylo, yhi] = valid_range(ky, h, oh, stride_, padding_);
      for (int kx = 0; kx < kernel_; ++kx) {
        const auto [xlo, xhi] = valid_range(kx, w, ow, stride_, padding_);
        T* dst = col + static_cast<Eigen::Index>((c * kernel_ + ky) * kernel_ + kx) * ld;
        std::fill(dst, dst + static_cast<size_t>(ylo) * ow, T(0));
        for (int oy = ylo; oy < yhi; ++oy) {
          T* out = dst + static_cast<size_t>(oy) * ow;
          const T* row = plane + static_cast<size_t>(oy * stride_ - padding_ + ky) * w - padding_ + kx;
          std::fill(out, out + xlo, T(0));
          for (int ox = xlo; ox < xhi; ++ox) out[ox] = row[ox * stride_];
          std::fill(out + xhi, out + ow, T(0));
        }
        std::fill(dst + static_cast<size_t>(yhi) * ow, dst + static_cast<size_t>(oh) * ow, T(0));
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, Eigen::Index ld, int h, int w, T* image) const {
  const int oh = out_size(h);
  const int ow = out_size(w);
  std::fill(image, image + static_cast<size_t>(in_channels_) * h * w, T(0));
  for (int c = 0; c < in_channels_; ++c) {
    T* plane = image + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < kernel_; ++ky) {
      const auto [ylo, yhi] = valid_range(ky, h, oh, stride_, padding_);
      for (int kx = 0; kx < kernel_; ++kx) {
        const auto [xlo, xhi] = valid_range(kx, w, ow, stride_, padding_);
        const T* src = col + static_cast<Eigen::Index>((c * kernel_ + ky) * kernel_ + kx) * ld;
        for (int oy = ylo; oy < yhi; ++oy) {
          const T* in = src + static_cast<size_t>(oy) * ow;
          T* row = plane + static_cast<size_t>(oy * stride_ - padding_ + ky) * w - padding_ + kx;
          for (int ox = xlo; ox < xhi; ++ox) row[ox * stride_] += in[ox];
        }
      }
    }
  }
}

template <typename T>
FeatureMaps<T> Conv2d<T>::forward(const FeatureMaps<T>& x) const {
  const int oh = out_size(x.h);
  const int ow = out_size(x.w);
  const Eigen::Index area = static_cast<Eigen::Index>(oh) * ow;
  const Eigen::Index k_rows = weight.value.cols();
  FeatureMaps<T> y(x.n, out_channels_, oh, ow);
  const int chunk = chunk_images(static_cast<int>(k_rows), static_cast<int>(area));
  Matrix<T> col;
  Matrix<T> out;
  for (int start = 0; start < x.n; start += chunk) {
    const int count = std::min(chunk, x.n - start);
    col.resize(k_rows, area * count);
    for (int i = 0; i < count; ++i) im2col(x.image(start + i), x.h, x.w, col.data() + area * i, col.cols());
    out.noalias() = weight.value * col;
    if (with_bias_) out.colwise() += bias.value.row(0).transpose();
    for (int i = 0; i < count; ++i) {
      Eigen::Map<Matrix<T>>(y.image(start + i), out_channels_, area) = out.middleCols(area * i, area);
    }
  }
  return y;
}

template <typename T>
void Conv2d<T>::backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy, FeatureMaps<T>* dx) {
  if (dx != nullptr) *dx = FeatureMaps<T>(x.n, x.c, x.h, x.w);
  const Eigen::Index area = static_cast<Eigen::Index>(dy.h) * dy.w;
  const Eigen::Index k_rows = weight.value.cols();
  const int chunk = chunk_images(static_cast<int>(k_rows), static_cast<int>(area));
  Matrix<T> col;
  Matrix<T> g;
  Matrix<T> dcol;
  for (int start = 0; start < x.n; start += chunk) {
    const int count = std::min(chunk, x.n - start);
    col.resize(k_rows, area * count);
    g.resize(out_channels_, area * count);
    for (int i = 0; i < count; ++i) {
      im2col(x.image(start + i), x.h, x.w, col.data() + area * i, col.cols());
      g.middleCols(area * i, area) = Eigen::Map<const Matrix<T>>(dy.image(start + i), out_channels_, area);
    }
    weight.grad.noalias() += g * col.transpose();
    if (with_bias_) bias.grad.row(0) += g.rowwise().sum().transpose();
    if (dx != nullptr) {
      dcol.noalias() = weight.value.transpose() * g;
      for (int i = 0; i < count; ++i) col2im(dcol.data() + area * i, dcol.cols(), x.h, x.w, dx->image(start + i));
    }
  }
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  if (with_bias_) out.push_back(&bias);
}

// ---------------------------------------------------------------- FrozenBatchNorm2d

template <typename T>
FrozenBatchNorm2d<T>::FrozenBatchNorm2d(const std::string& name, int channels, double eps_)
    : gamma(name + ".weight", 1, channels),
      beta(name + ".bias", 1, channels),
      running_mean(name + ".running_mean", 1, channels, false),
      running_var(name + ".running_var", 1, channels, false),
      eps(eps_) {
  gamma.value.setOnes();
  running_var.value.setOnes();
}

template <typename T>
FeatureMaps<T> FrozenBatchNorm2d<T>::forward(const FeatureMaps<T>& x) const {
  FeatureMaps<T> y(x.n, x.c, x.h, x.w);
  const size_t area = static_cast<size_t>(x.h) * x.w;
  for (int c = 0; c < x.c; ++c) {
    const T scale = gamma.value(0, c) / std::sqrt(running_var.value(0, c) + static_cast<T>(eps));
    const T shift = beta.value(0, c) - running_mean.value(0, c) * scale;
    for (int i = 0; i < x.n; ++i) {
      const T* src = x.image(i) + area * c;
      T* dst = y.image(i) + area * c;
      for (size_t p = 0; p < area; ++p) dst[p] = src[p] * scale + shift;
    }
  }
  return y;
}

template <typename T>
FeatureMaps<T> FrozenBatchNorm2d<T>::backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy) {
  FeatureMaps<T> dx(x.n, x.c, x.h, x.w);
  const size_t area = static_cast<size_t>(x.h) * x.w;
  for (int c = 0; c < x.c; ++c) {
    const T inv = T(1) / std::sqrt(running_var.value(0, c) + static_cast<T>(eps));
    const T scale = gamma.value(0, c) * inv;
    T dgamma = 0;
    T dbeta = 0;
    for (int i = 0; i < x.n; ++i) {
      const T* xs = x.image(i) + area * c;
      const T* gs = dy.image(i) + area * c;
      T* out = dx.image(i) + area * c;
      for (size_t p = 0; p < area; ++p) {
        dbeta += gs[p];
        dgamma += gs[p] * (xs[p] - running_mean.value(0, c)) * inv;
        out[p] = gs[p] * scale;
      }
    }
    gamma.grad(0, c) += dgamma;
    beta.grad(0, c) += dbeta;
  }
  return dx;
}

template <typename T>
void FrozenBatchNorm2d<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------- activations and pooling

template <typename T>
void gelu_array(const T* x, T* y, size_t n) {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Eigen::Map<const Array> xa(x, static_cast<Eigen::Index>(n));
  Eigen::Map<Array>(y, static_cast<Eigen::Index>(n)) = T(0.5) * xa * (T(1) + (xa * T(M_SQRT1_2)).erf());
}

template <typename T>
void gelu_grad_array(const T* x, T* g, size_t n) {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Eigen::Map<const Array> xa(x, static_cast<Eigen::Index>(n));
  const Array cdf = T(0.5) * (T(1) + (xa * T(M_SQRT1_2)).erf());
  const Array pdf = (T(-0.5) * xa.square()).exp() * T(0.3989422804014327);
  Eigen::Map<Array>(g, static_cast<Eigen::Index>(n)) *= cdf + xa * pdf;
}

template <typename T>
FeatureMaps<T> gelu(const FeatureMaps<T>& x) {
  FeatureMaps<T> y(x.n, x.c, x.h, x.w);
  gelu_array(x.data.data(), y.data.data(), x.data.size());
  return y;
}

template <typename T>
FeatureMaps<T> gelu_backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy) {
  FeatureMaps<T> dx = dy;
  gelu_grad_array(x.data.data(), dx.data.data(), x.data.size());
  return dx;
}

template <typename T>
FeatureMaps<T> relu(const FeatureMaps<T>& x) {
  FeatureMaps<T> y = x;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
FeatureMaps<T> relu_backward(const FeatureMaps<T>& y, const FeatureMaps<T>& dy) {
  FeatureMaps<T> dx = dy;
  for (size_t i = 0; i < dx.data.size(); ++i) {
    if (!(y.data[i] > T(0))) dx.data[i] = T(0);
  }
  return dx;
}

template <typename T>
FeatureMaps<T> avg_pool(const FeatureMaps<T>& x, int k) {
  FeatureMaps<T> y(x.n, x.c, x.h / k, x.w / k);
  const T scale = T(1) / static_cast<T>(k * k);
  for (int i = 0; i < x.n; ++i) {
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.image(i) + static_cast<size_t>(c) * x.h * x.w;
      T* dst = y.image(i) + static_cast<size_t>(c) * y.h * y.w;
      for (int oy = 0; oy < y.h; ++oy) {
        for (int ox = 0; ox < y.w; ++ox) {
          T acc = 0;
          for (int dy = 0; dy < k; ++dy) {
            const T* row = src + static_cast<size_t>(oy * k + dy) * x.w + ox * k;
            for (int dx = 0; dx < k; ++dx) acc += row[dx];
          }
          dst[oy * y.w + ox] = acc * scale;
        }
      }
    }
  }
  return y;
}

template <typename T>
FeatureMaps<T> avg_pool_backward(const FeatureMaps<T>& dy, int k) {
  FeatureMaps<T> dx(dy.n, dy.c, dy.h * k, dy.w * k);
  const T scale = T(1) / static_cast<T>(k * k);
  for (int i = 0; i < dy.n; ++i) {
    for (int c = 0; c < dy.c; ++c) {
      const T* src = dy.image(i) + static_cast<size_t>(c) * dy.h * dy.w;
      T* dst = dx.image(i) + static_cast<size_t>(c) * dx.h * dx.w;
      for (int y = 0; y < dx.h; ++y) {
        for (int x = 0; x < dx.w; ++x) dst[y * dx.w + x] = src[(y / k) * dy.w + x / k] * scale;
      }
    }
  }
  return dx;
}

template <typename T>
FeatureMaps<T> max_pool3s2(const FeatureMaps<T>& x, std::vector<int>& argmax) {
  const int oh = (x.h + 2 - 3) / 2 + 1;
  const int ow = (x.w + 2 - 3) / 2 + 1;
  FeatureMaps<T> y(x.n, x.c, oh, ow);
  argmax.assign(y.data.size(), -1);
  size_t o = 0;
  for (int i = 0; i < x.n; ++i) {
    for (int c = 0; c < x.c; ++c) {
      const size_t base = (static_cast<size_t>(i) * x.c + c) * x.h * x.w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          T best = std::numeric_limits<T>::lowest();
          int best_idx = -1;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (ix < 0 || ix >= x.w) continue;
              const size_t idx = base + static_cast<size_t>(iy) * x.w + ix;
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = static_cast<int>(idx);
              }
            }
          }
          y.data[o] = best;
          argmax[o] = best_idx;
        }
      }
    }
  }
  return y;
}

template <typename T>
FeatureMaps<T> max_pool3s2_backward(const FeatureMaps<T>& x, const FeatureMaps<T>& dy, const std::vector<int>& argmax) {
  FeatureMaps<T> dx(x.n, x.c, x.h, x.w);
  for (size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

template <typename T>
Matrix<T> global_avg_pool(const FeatureMaps<T>& x) {
  Matrix<T> y(x.n, x.c);
  const size_t area = static_cast<size_t>(x.h) * x.w;
  for (int i = 0; i < x.n; ++i) {
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.image(i) + area * c;
      T acc = 0;
      for (size_t p = 0; p < area; ++p) acc += src[p];
      y(i, c) = acc / static_cast<T>(area);
    }
  }
  return y;
}

template <typename T>
FeatureMaps<T> global_avg_pool_backward(const Matrix<T>& dy, int h, int w) {
  FeatureMaps<T> dx(static_cast<int>(dy.rows()), static_cast<int>(dy.cols()), h, w);
  const size_t area = static_cast<size_t>(h) * w;
  for (int i = 0; i < dx.n; ++i) {
    for (int c = 0; c < dx.c; ++c) {
      const T g = dy(i, c) / static_cast<T>(area);
      std::fill(dx.image(i) + area * c, dx.image(i) + area * (c + 1), g);
    }
  }
  return dx;
}

#define BTDNET_INSTANTIATE_LAYERS(T)                                                                        \
  template class Linear<T>;                                                                                 \
  template class BatchNorm<T>;                                                                              \
  template class Conv2d<T>;                                                                                 \
  template class FrozenBatchNorm2d<T>;                                                                      \
  template void gelu_array(const T*, T*, size_t);                                                           \
  template void gelu_grad_array(const T*, T*, size_t);                                                      \
  template FeatureMaps<T> gelu(const FeatureMaps<T>&);                                                      \
  template FeatureMaps<T> gelu_backward(const FeatureMaps<T>&, const FeatureMaps<T>&);                      \
  template FeatureMaps<T> relu(const FeatureMaps<T>&);                                                      \
  template FeatureMaps<T> relu_backward(const FeatureMaps<T>&, const FeatureMaps<T>&);                      \
  template FeatureMaps<T> avg_pool(const FeatureMaps<T>&, int);                                             \
  template FeatureMaps<T> avg_pool_backward(const FeatureMaps<T>&, int);                                    \
  template FeatureMaps<T> max_pool3s2(const FeatureMaps<T>&, std::vector<int>&);                            \
  template FeatureMaps<T> max_pool3s2_backward(const FeatureMaps<T>&, const FeatureMaps<T>&,                \
                                               const std::vector<int>&);                                    \
  template Matrix<T> global_avg_pool(const FeatureMaps<T>&);                                                \
  template FeatureMaps<T> global_avg_pool_backward(const Matrix<T>&, int, int);

BTDNET_INSTANTIATE_LAYERS(float)
BTDNET_INSTANTIATE_LAYERS(double)

}  // namespace btdnet::nn
