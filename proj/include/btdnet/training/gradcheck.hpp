#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "btdnet/training/trainer.hpp"

namespace btdnet::training {

struct GradcheckOptions {
  int num_params = 128;
  double step = 1e-5;
  /// Denominator floor of the relative error, for entries whose gradient is
  /// numerically zero.
  double floor = 1e-6;
  uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string name;
  Eigen::Index index = 0;  // row-major offset into the tensor
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double loss = 0.0;
  double max_rel_error = 0.0;
  const GradcheckEntry* worst() const;
};

/// Analytic d(total loss)/d(theta) against central differences on randomly
/// chosen entries of every trainable tensor on the active path. Tensors are
/// visited round robin so each one is sampled.
GradcheckReport loss_gradient_check(network::BtdNet<double>& model, const MixBatch& batch,
                                    const objective::FocalParams& params, const GradcheckOptions& options = {});

/// Self-contained check: tiny_cnn, t = 8, a synthetic mixed batch of four scans.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace btdnet::training
