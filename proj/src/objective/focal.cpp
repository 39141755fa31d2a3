#include "btdnet/objective/focal.hpp"

#include <cmath>
#include <string>

#include "btdnet/augment/augment.hpp"
#include "btdnet/error.hpp"

namespace btdnet::objective {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename T>
void check_batch(const Matrix<T>& logits, std::span<const int> labels) {
  if (logits.cols() != 2 || static_cast<size_t>(logits.rows()) != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "logits " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                                               " vs " + std::to_string(labels.size()) + " labels");
  }
  if (!logits.allFinite()) throw Error(ErrorCode::kNonFiniteInput, "non-finite logits");
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorCode::kInvalidParameter, "label " + std::to_string(y) + " is not 0 or 1");
  }
}

double reduction_scale(const FocalParams& params, Eigen::Index batch) {
  return params.reduction == Reduction::kMean && batch > 0 ? 1.0 / static_cast<double>(batch) : 1.0;
}

}  // namespace

void FocalParams::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kInvalidParameter, "focal alpha must lie in (0, 1)");
  if (!(gamma >= 0.0)) throw Error(ErrorCode::kInvalidParameter, "focal gamma must be >= 0");
}

double focal_term(double s, int label, const FocalParams& params, double* ds) {
  const double a = params.alpha;
  const double g = params.gamma;
  const double p = sigmoid(s);
  const double q = sigmoid(-s);  // 1 - p without cancellation
  const double log_p = -softplus(-s);
  const double log_q = -softplus(s);
  const bool pos = params.literal_eq2 || label == 1;
  const bool neg = params.literal_eq2 || label == 0;
  double loss = 0.0;
  double grad = 0.0;
  if (pos) {
    const double m = std::pow(q, g);
    loss -= a * m * log_p;
    grad += a * m * (g * p * log_p - q);
  }
  if (neg) {
    const double m = std::pow(p, g);
    loss -= (1.0 - a) * m * log_q;
    grad += (1.0 - a) * m * (p - g * q * log_q);
  }
  if (ds != nullptr) *ds = grad;
  return loss;
}

template <typename T>
double focal_loss(const Matrix<T>& logits, std::span<const int> labels, const FocalParams& params, Matrix<T>* d_logits,
                  double scale) {
  params.validate();
  check_batch(logits, labels);
  const double r = reduction_scale(params, logits.rows());
  if (d_logits != nullptr) d_logits->setZero(logits.rows(), 2);
  double total = 0.0;
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const double s = static_cast<double>(logits(b, 1)) - static_cast<double>(logits(b, 0));
    double ds = 0.0;
    total += focal_term(s, labels[static_cast<size_t>(b)], params, &ds);
    if (d_logits != nullptr) {
      (*d_logits)(b, 1) = static_cast<T>(scale * r * ds);
      (*d_logits)(b, 0) = static_cast<T>(-scale * r * ds);
    }
  }
  return total * r;
}

template <typename T>
TotalLoss total_loss(const Matrix<T>& logits_v, const Matrix<T>& logits_ri, const Matrix<T>& logits_rj,
                     std::span<const int> y_i, std::span<const int> y_j, std::span<const double> lambdas,
                     const FocalParams& params, Matrix<T>* d_v, Matrix<T>* d_ri, Matrix<T>* d_rj) {
  params.validate();
  check_batch(logits_v, y_i);
  check_batch(logits_v, y_j);
  if (lambdas.size() != y_i.size()) throw Error(ErrorCode::kShapeMismatch, "one lambda per virtual example expected");

  TotalLoss out;
  const double r = reduction_scale(params, logits_v.rows());
  if (d_v != nullptr) d_v->setZero(logits_v.rows(), 2);
  for (Eigen::Index b = 0; b < logits_v.rows(); ++b) {
    const augment::MixWeights w = augment::mix_weights(lambdas[static_cast<size_t>(b)]);
    const double s = static_cast<double>(logits_v(b, 1)) - static_cast<double>(logits_v(b, 0));
    double gi = 0.0;
    double gj = 0.0;
    out.virtual_term += w.first * focal_term(s, y_i[static_cast<size_t>(b)], params, &gi) +
                        w.second * focal_term(s, y_j[static_cast<size_t>(b)], params, &gj);
    if (d_v != nullptr) {
      const double ds = r * (w.first * gi + w.second * gj);
      (*d_v)(b, 1) = static_cast<T>(ds);
      (*d_v)(b, 0) = static_cast<T>(-ds);
    }
  }
  out.virtual_term *= r;
  out.real_i = focal_loss(logits_ri, y_i, params, d_ri);
  out.real_j = focal_loss(logits_rj, y_j, params, d_rj);
  out.total = out.virtual_term + (out.real_i + out.real_j);
  return out;
}

template <typename T>
TotalLoss total_loss(const Matrix<T>& logits_v, const Matrix<T>& logits_ri, const Matrix<T>& logits_rj,
                     std::span<const int> y_i, std::span<const int> y_j, double lambda, const FocalParams& params) {
  const std::vector<double> lambdas(y_i.size(), lambda);
  return total_loss(logits_v, logits_ri, logits_rj, y_i, y_j, std::span<const double>(lambdas), params);
}

#define BTDNET_INSTANTIATE(T)                                                                                        \
  template double focal_loss<T>(const Matrix<T>&, std::span<const int>, const FocalParams&, Matrix<T>*, double);    \
  template TotalLoss total_loss<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, std::span<const int>,       \
                                   std::span<const int>, std::span<const double>, const FocalParams&, Matrix<T>*,   \
                                   Matrix<T>*, Matrix<T>*);                                                          \
  template TotalLoss total_loss<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, std::span<const int>,       \
                                   std::span<const int>, double, const FocalParams&);
BTDNET_INSTANTIATE(float)
BTDNET_INSTANTIATE(double)
#undef BTDNET_INSTANTIATE

}  // namespace btdnet::objective
