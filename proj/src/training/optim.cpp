#include "btdnet/training/optim.hpp"

#include <cmath>

namespace btdnet::training {

template <typename T>
void SgdMomentum<T>::step(const nn::ParamList<T>& params) {
  if (buffers_.size() != params.size()) {
    buffers_.clear();
    for (const nn::Parameter<T>* p : params) buffers_.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
  }
  const T lr = static_cast<T>(lr_);
  const T mu = static_cast<T>(momentum_);
  for (size_t i = 0; i < params.size(); ++i) {
    buffers_[i] = mu * buffers_[i] + params[i]->grad;
    params[i]->value -= lr * buffers_[i];
  }
}

template <typename T>
double sam_step(const nn::ParamList<T>& params, const Closure& closure, SgdMomentum<T>& optimizer, double rho) {
  for (nn::Parameter<T>* p : params) p->zero_grad();
  const double loss = closure(true);
  if (rho > 0.0) {
    double norm2 = 0.0;
    for (const nn::Parameter<T>* p : params) norm2 += p->grad.template cast<double>().squaredNorm();
    const double norm = std::sqrt(norm2);
    if (norm > 0.0 && std::isfinite(norm)) {
      const T scale = static_cast<T>(rho / norm);
      std::vector<nn::Matrix<T>> saved;
      saved.reserve(params.size());
      for (nn::Parameter<T>* p : params) {
        saved.push_back(p->value);
        p->value += scale * p->grad;
        p->zero_grad();
      }
      closure(false);
      for (size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
    }
  }
  optimizer.step(params);
  return loss;
}

template class SgdMomentum<float>;
template class SgdMomentum<double>;
template double sam_step<float>(const nn::ParamList<float>&, const Closure&, SgdMomentum<float>&, double);
template double sam_step<double>(const nn::ParamList<double>&, const Closure&, SgdMomentum<double>&, double);

}  // namespace btdnet::training
