#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "btdnet/data/types.hpp"

namespace btdnet::augment {

using Rng = std::mt19937_64;

struct AugmentConfig {
  double rotation_deg = 15.0;  // rotations drawn uniformly from [-rotation_deg, +rotation_deg]
  double hflip_prob = 0.5;
  double mix_alpha = 0.2;
  uint64_t tta_seed = 1234;
};

struct TransformSpec {
  bool hflip = false;
  double rotation_deg = 0.0;
};

void hflip(data::Slice& slice);
/// Bilinear rotation about the slice centre; uncovered pixels take `fill`.
data::Slice rotate(const data::Slice& slice, double degrees, float fill = data::kPaddingValue);
/// Flip first, then rotate, then clamp to [-1, 1].
void apply_transform(data::Slice& slice, const TransformSpec& spec);

TransformSpec sample_transform(const AugmentConfig& config, Rng& rng);

/// Independent TransformSpec per real slice; padding slices are left alone.
/// Returns the specs that were applied, one per real slice.
std::vector<TransformSpec> geometric_transform(data::Volume& volume, const AugmentConfig& config, Rng& rng);
void geometric_transform(data::Scan& scan, const AugmentConfig& config, Rng& rng);

/// lambda ~ Beta(alpha, alpha). Throws kInvalidParameter for alpha <= 0.
double sample_lambda(double alpha, Rng& rng);

/// Convex weights for one pair. The larger weight is taken as given and the
/// smaller is derived from it, so that mix(a, b, l) and mix(b, a, 1 - l) use
/// bitwise-identical weights.
struct MixWeights {
  double first = 1.0;
  double second = 0.0;
};
MixWeights mix_weights(double lambda);

struct VirtualExample {
  data::Scan mixed;
  std::array<double, 2> soft_label{};
  double lambda = 1.0;
  int source_i = -1;
  int source_j = -1;
};

/// Elementwise lambda*a + (1-lambda)*b per modality with the matching label
/// mix. The mixed true length is max(l_a, l_b). Throws kShapeMismatch when the
/// padded shapes differ.
VirtualExample mix_scans(const data::Scan& a, const data::Scan& b, double lambda, int index_a = -1, int index_b = -1);

/// Derangement of [0, n): no element maps to itself (n >= 2).
std::vector<int> derangement(int n, Rng& rng);

/// Test-time versions {X, F_X, R_X, FR_X}. Each version applies one transform
/// to every real slice of every modality.
std::array<data::Scan, 4> tta_versions(const data::Scan& scan, double rotation_deg);
double sample_tta_angle(const AugmentConfig& config);
std::array<data::Scan, 4> tta_versions(const data::Scan& scan, const AugmentConfig& config, Rng& rng);

}  // namespace btdnet::augment
