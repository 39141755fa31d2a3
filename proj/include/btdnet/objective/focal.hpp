#pragma once

#include <span>

#include "btdnet/nn/tensor.hpp"

namespace btdnet::objective {

using nn::Matrix;

enum class Reduction { kSum, kMean };

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
  /// Apply both terms to every sample with p the positive-class probability,
  /// ignoring the label.
  bool literal_eq2 = false;
  Reduction reduction = Reduction::kSum;

  /// Throws kInvalidParameter unless 0 < alpha < 1 and gamma >= 0.
  void validate() const;
};

/// Focal term of one sample from the logit margin s = z1 - z0. Evaluated in
/// log space, so it stays finite for any finite s. `ds` receives dL/ds.
double focal_term(double s, int label, const FocalParams& params, double* ds = nullptr);

/// Batch focal loss over B x 2 logits and hard labels. When `d_logits` is
/// given it receives dL/dlogits scaled by `scale`.
template <typename T>
double focal_loss(const Matrix<T>& logits, std::span<const int> labels, const FocalParams& params,
                  Matrix<T>* d_logits = nullptr, double scale = 1.0);

struct TotalLoss {
  double virtual_term = 0.0;
  double real_i = 0.0;
  double real_j = 0.0;
  double total = 0.0;
};

/// Virtual, real-i and real-j focal terms summed. Row b of `logits_v` mixes
/// sources with labels y_i[b], y_j[b] at lambdas[b]; its term is
/// w_i * FL(v, y_i) + w_j * FL(v, y_j) with weights from mix_weights.
template <typename T>
TotalLoss total_loss(const Matrix<T>& logits_v, const Matrix<T>& logits_ri, const Matrix<T>& logits_rj,
                     std::span<const int> y_i, std::span<const int> y_j, std::span<const double> lambdas,
                     const FocalParams& params, Matrix<T>* d_v = nullptr, Matrix<T>* d_ri = nullptr,
                     Matrix<T>* d_rj = nullptr);

/// Single-lambda convenience form.
template <typename T>
TotalLoss total_loss(const Matrix<T>& logits_v, const Matrix<T>& logits_ri, const Matrix<T>& logits_rj,
                     std::span<const int> y_i, std::span<const int> y_j, double lambda, const FocalParams& params);

}  // namespace btdnet::objective
