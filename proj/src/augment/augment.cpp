#include "btdnet/augment/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "btdnet/error.hpp"

namespace btdnet::augment {

using data::Scan;
using data::Slice;
using data::Volume;

void hflip(Slice& slice) {
  for (int r = 0; r < slice.rows; ++r) {
    auto row = slice.plane.begin() + static_cast<long>(r) * slice.cols;
    std::reverse(row, row + slice.cols);
  }
}

Slice rotate(const Slice& slice, double degrees, float fill) {
  Slice out(slice.rows, slice.cols, slice.channels, fill);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (slice.rows - 1) / 2.0;
  const double cx = (slice.cols - 1) / 2.0;

  const int rows = slice.rows;
  const int cols = slice.cols;
  const float* src = slice.plane.data();
  auto sample = [&](int r, int c) -> double {
    if (r < 0 || r >= rows || c < 0 || c >= cols) return fill;
    return src[static_cast<size_t>(r) * cols + c];
  };

  for (int y = 0; y < rows; ++y) {
    float* dst = out.plane.data() + static_cast<size_t>(y) * cols;
    const double dy = y - cy;
    for (int x = 0; x < cols; ++x) {
      // inverse map: rotate the output coordinate by -theta
      const double dx = x - cx;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      if (sx <= -1.0 || sy <= -1.0 || sx >= cols || sy >= rows) continue;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double wx = sx - x0;
      const double wy = sy - y0;
      double top, bot;
      if (x0 >= 0 && y0 >= 0 && x0 + 1 < cols && y0 + 1 < rows) {
        const float* p = src + static_cast<size_t>(y0) * cols + x0;
        top = (1.0 - wx) * p[0] + wx * p[1];
        bot = (1.0 - wx) * p[cols] + wx * p[cols + 1];
      } else {
        top = (1.0 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1);
        bot = (1.0 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1);
      }
      dst[x] = static_cast<float>((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

void apply_transform(Slice& slice, const TransformSpec& spec) {
  if (spec.hflip) hflip(slice);
  if (spec.rotation_deg != 0.0) slice = rotate(slice, spec.rotation_deg);
  for (float& v : slice.plane) v = std::clamp(v, -1.0F, 1.0F);
}

TransformSpec sample_transform(const AugmentConfig& config, Rng& rng) {
  TransformSpec spec;
  spec.hflip = std::bernoulli_distribution(std::clamp(config.hflip_prob, 0.0, 1.0))(rng);
  if (config.rotation_deg > 0.0) {
    spec.rotation_deg = std::uniform_real_distribution<double>(-config.rotation_deg, config.rotation_deg)(rng);
  }
  return spec;
}

std::vector<TransformSpec> geometric_transform(Volume& volume, const AugmentConfig& config, Rng& rng) {
  std::vector<TransformSpec> specs;
  specs.reserve(volume.true_length);
  for (int i = 0; i < volume.true_length; ++i) {
    specs.push_back(sample_transform(config, rng));
    apply_transform(volume.slices[i], specs.back());
  }
  return specs;
}

void geometric_transform(Scan& scan, const AugmentConfig& config, Rng& rng) {
  for (Volume& v : scan.volumes) geometric_transform(v, config, rng);
}

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorCode::kInvalidParameter, "Beta alpha must be positive, got " + std::to_string(alpha));
  }
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y == 0.0) return 0.5;  // both underflowed; only reachable for tiny alpha
  return x / (x + y);
}

MixWeights mix_weights(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorCode::kInvalidParameter, "lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  if (lambda >= 0.5) return {lambda, 1.0 - lambda};
  const double second = 1.0 - lambda;
  return {1.0 - second, second};
}

VirtualExample mix_scans(const Scan& a, const Scan& b, double lambda, int index_a, int index_b) {
  const MixWeights w = mix_weights(lambda);
  VirtualExample out;
  out.lambda = w.first;
  out.source_i = index_a;
  out.source_j = index_b;
  out.mixed.scan_id = "mix(" + a.scan_id + "," + b.scan_id + ")";
  out.mixed.label = w.first >= w.second ? a.label : b.label;

  const auto ya = a.one_hot();
  const auto yb = b.one_hot();
  for (int k = 0; k < 2; ++k) out.soft_label[k] = w.first * ya[k] + w.second * yb[k];

  for (data::Modality m : data::kModalities) {
    const Volume& va = a.volume(m);
    const Volume& vb = b.volume(m);
    if (va.padded_length() != vb.padded_length()) {
      throw Error(ErrorCode::kShapeMismatch, std::string(data::modality_name(m)) + " padded lengths differ: " +
                                                 std::to_string(va.padded_length()) + " vs " +
                                                 std::to_string(vb.padded_length()));
    }
    Volume& vm = out.mixed.volume(m);
    vm.modality = m;
    vm.true_length = std::max(va.true_length, vb.true_length);
    vm.slices.reserve(va.slices.size());
    for (size_t s = 0; s < va.slices.size(); ++s) {
      const Slice& sa = va.slices[s];
      const Slice& sb = vb.slices[s];
      if (sa.rows != sb.rows || sa.cols != sb.cols || sa.channels != sb.channels) {
        throw Error(ErrorCode::kShapeMismatch, "slice shapes differ at index " + std::to_string(s));
      }
      Slice mixed(sa.rows, sa.cols, sa.channels, 0.0F);
      const float* pa = sa.plane.data();
      const float* pb = sb.plane.data();
      float* pm = mixed.plane.data();
      const size_t count = mixed.plane.size();
      for (size_t p = 0; p < count; ++p) pm[p] = static_cast<float>(w.first * pa[p] + w.second * pb[p]);
      vm.slices.push_back(std::move(mixed));
    }
  }
  return out;
}

std::vector<int> derangement(int n, Rng& rng) {
  if (n < 2) throw Error(ErrorCode::kInvalidParameter, "a derangement needs at least two elements");
  // Uniform random cyclic shift of a shuffled order: every element moves.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const int shift = std::uniform_int_distribution<int>(1, n - 1)(rng);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[order[i]] = order[(i + shift) % n];
  return perm;
}

std::array<Scan, 4> tta_versions(const Scan& scan, double rotation_deg) {
  std::array<Scan, 4> out = {scan, scan, scan, scan};
  const std::array<TransformSpec, 4> specs = {{{false, 0.0}, {true, 0.0}, {false, rotation_deg}, {true, rotation_deg}}};
  for (int v = 1; v < 4; ++v) {
    for (Volume& vol : out[v].volumes) {
      for (int i = 0; i < vol.true_length; ++i) apply_transform(vol.slices[i], specs[v]);
    }
  }
  return out;
}

double sample_tta_angle(const AugmentConfig& config) {
  if (config.rotation_deg <= 0.0) return 0.0;
  Rng rng(config.tta_seed);
  return std::uniform_real_distribution<double>(-config.rotation_deg, config.rotation_deg)(rng);
}

std::array<Scan, 4> tta_versions(const Scan& scan, const AugmentConfig& config, Rng& rng) {
  double angle = 0.0;
  if (config.rotation_deg > 0.0) angle = std::uniform_real_distribution<double>(-config.rotation_deg, config.rotation_deg)(rng);
  return tta_versions(scan, angle);
}

}  // namespace btdnet::augment
