#include "btdnet/nn/lstm.hpp"

#include <cmath>

namespace btdnet::nn {

namespace {

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Lstm<T>::Lstm(const std::string& name, int input_size, int hidden_size)
    : w_ih(name + ".w_ih", 4 * hidden_size, input_size),
      w_hh(name + ".w_hh", 4 * hidden_size, hidden_size),
      bias(name + ".bias", 1, 4 * hidden_size) {}

template <typename T>
void Lstm<T>::init(Rng& rng) {
  const int v = hidden_size();
  fan_in_uniform(w_ih.value, input_size(), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int gate = 0; gate < 4; ++gate) {
    Eigen::MatrixXd g(v, v);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // sign fix so the draw is Haar-distributed
    const Eigen::MatrixXd r = qr.matrixQR().template triangularView<Eigen::Upper>();
    for (int c = 0; c < v; ++c) {
      if (r(c, c) < 0) q.col(c) *= -1.0;
    }
    w_hh.value.block(static_cast<Eigen::Index>(gate) * v, 0, v, v) = q.cast<T>();
  }
  bias.value.setZero();
  bias.value.block(0, v, 1, v).setOnes();
}

template <typename T>
std::vector<Matrix<T>> Lstm<T>::forward(const std::vector<Matrix<T>>& inputs, Cache* cache) const {
  const int v = hidden_size();
  const Eigen::Index batch = inputs.empty() ? 0 : inputs.front().rows();
  Matrix<T> h = Matrix<T>::Zero(batch, v);
  Matrix<T> c = Matrix<T>::Zero(batch, v);
  std::vector<Matrix<T>> outputs;
  outputs.reserve(inputs.size());
  if (cache != nullptr) {
    cache->inputs = inputs;
    cache->gates.clear();
    cache->cells.clear();
    cache->hidden.clear();
  }

  for (const Matrix<T>& x : inputs) {
    Matrix<T> z = x * w_ih.value.transpose();
    z.noalias() += h * w_hh.value.transpose();
    z.rowwise() += RowVector<T>(bias.value.row(0));
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int k = 0; k < v; ++k) {
        z(b, k) = sigmoid(z(b, k));
        z(b, v + k) = sigmoid(z(b, v + k));
        z(b, 2 * v + k) = std::tanh(z(b, 2 * v + k));
        z(b, 3 * v + k) = sigmoid(z(b, 3 * v + k));
        c(b, k) = z(b, v + k) * c(b, k) + z(b, k) * z(b, 2 * v + k);
        h(b, k) = z(b, 3 * v + k) * std::tanh(c(b, k));
      }
    }
    outputs.push_back(h);
    if (cache != nullptr) {
      cache->gates.push_back(std::move(z));
      cache->cells.push_back(c);
      cache->hidden.push_back(h);
    }
  }
  return outputs;
}

template <typename T>
std::vector<Matrix<T>> Lstm<T>::backward(const Cache& cache, const std::vector<Matrix<T>>& d_hidden) {
  const int v = hidden_size();
  const size_t steps = cache.inputs.size();
  const Eigen::Index batch = steps == 0 ? 0 : cache.inputs.front().rows();
  std::vector<Matrix<T>> d_inputs(steps);
  Matrix<T> dh_next = Matrix<T>::Zero(batch, v);
  Matrix<T> dc_next = Matrix<T>::Zero(batch, v);
  Matrix<T> dz(batch, 4 * v);

  for (size_t s = steps; s-- > 0;) {
    const Matrix<T>& g = cache.gates[s];
    const Matrix<T>& c = cache.cells[s];
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int k = 0; k < v; ++k) {
        const T i = g(b, k);
        const T f = g(b, v + k);
        const T gg = g(b, 2 * v + k);
        const T o = g(b, 3 * v + k);
        const T tc = std::tanh(c(b, k));
        const T c_prev = s > 0 ? cache.cells[s - 1](b, k) : T(0);
        const T dh = d_hidden[s](b, k) + dh_next(b, k);
        const T dc = dc_next(b, k) + dh * o * (T(1) - tc * tc);
        dz(b, k) = dc * gg * i * (T(1) - i);
        dz(b, v + k) = dc * c_prev * f * (T(1) - f);
        dz(b, 2 * v + k) = dc * i * (T(1) - gg * gg);
        dz(b, 3 * v + k) = dh * tc * o * (T(1) - o);
        dc_next(b, k) = dc * f;
      }
    }
    w_ih.grad.noalias() += dz.transpose() * cache.inputs[s];
    if (s > 0) w_hh.grad.noalias() += dz.transpose() * cache.hidden[s - 1];
    bias.grad.row(0) += dz.colwise().sum();
    d_inputs[s] = dz * w_ih.value;
    dh_next = dz * w_hh.value;
  }
  return d_inputs;
}

template <typename T>
void Lstm<T>::collect(ParamList<T>& out) {
  out.push_back(&w_ih);
  out.push_back(&w_hh);
  out.push_back(&bias);
}

template class Lstm<float>;
template class Lstm<double>;

}  // namespace btdnet::nn
