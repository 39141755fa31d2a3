#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "btdnet/augment/augment.hpp"
#include "btdnet/error.hpp"
#include "test_util.hpp"

using namespace btdnet;
using namespace btdnet::augment;
using data::Modality;
using data::Scan;
using data::Slice;
using data::Volume;

namespace {

Slice random_slice(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  Slice s(rows, cols, 3, 0.0F);
  for (float& v : s.plane) v = u(rng);
  return s;
}

Scan random_scan(int t, int l, int label, std::mt19937_64& rng) {
  Scan scan;
  scan.label = label;
  scan.scan_id = "r" + std::to_string(rng() % 1000);
  for (Modality m : data::kModalities) {
    Volume& v = scan.volume(m);
    v.modality = m;
    for (int i = 0; i < t; ++i) v.slices.push_back(i < l ? random_slice(12, 12, rng) : Slice(12, 12, 3, -1.0F));
    v.true_length = l;
  }
  return scan;
}

/// Kolmogorov distance of a sample from the uniform law on [0, 1].
double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    d = std::max({d, (i + 1) / n - x[i], x[i] - i / n});
  }
  return d;
}

}  // namespace

TEST(Flip, IsAnInvolution) {
  std::mt19937_64 rng(1);
  const Slice s = random_slice(7, 9, rng);
  Slice f = s;
  hflip(f);
  EXPECT_EQ(f.at(2, 0), s.at(2, 8));
  EXPECT_EQ(f.at(6, 3), s.at(6, 5));
  hflip(f);
  EXPECT_EQ(f, s);
}

TEST(Rotate, ZeroIsIdentity) {
  std::mt19937_64 rng(2);
  const Slice s = random_slice(10, 10, rng);
  EXPECT_EQ(rotate(s, 0.0), s);
}

TEST(Rotate, QuarterTurnMatchesIndexMap) {
  std::mt19937_64 rng(3);
  const int n = 11;
  const Slice s = random_slice(n, n, rng);
  const Slice r = rotate(s, 90.0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) ASSERT_NEAR(r.at(y, x), s.at(n - 1 - x, y), 1e-5) << y << "," << x;
  }
}

TEST(Rotate, UncoveredCornersTakeFill) {
  const Slice s(20, 20, 1, 0.5F);
  const Slice r = rotate(s, 45.0, -1.0F);
  EXPECT_EQ(r.at(0, 0), -1.0F);
  EXPECT_EQ(r.at(10, 10), 0.5F);
}

TEST(Geometric, SameSeedSameOutput) {
  std::mt19937_64 src(4);
  const Scan scan = random_scan(6, 4, 1, src);
  AugmentConfig cfg;
  Scan a = scan, b = scan;
  Rng r1(9), r2(9);
  geometric_transform(a, cfg, r1);
  geometric_transform(b, cfg, r2);
  EXPECT_EQ(a, b);
}

TEST(Geometric, IdentityConfigLeavesScan) {
  std::mt19937_64 src(5);
  const Scan scan = random_scan(6, 4, 0, src);
  AugmentConfig cfg;
  cfg.rotation_deg = 0.0;
  cfg.hflip_prob = 0.0;
  Scan a = scan;
  Rng rng(1);
  geometric_transform(a, cfg, rng);
  EXPECT_EQ(a, scan);
}

TEST(Geometric, PerSliceSpecsAndPaddingUntouched) {
  std::mt19937_64 src(6);
  Scan scan = random_scan(10, 7, 0, src);
  const Scan before = scan;
  AugmentConfig cfg;
  Rng rng(2);
  const auto specs = geometric_transform(scan.volume(Modality::kFlair), cfg, rng);
  ASSERT_EQ(specs.size(), 7U);
  std::vector<double> angles;
  for (const auto& s : specs) {
    EXPECT_LE(std::abs(s.rotation_deg), 15.0);
    angles.push_back(s.rotation_deg);
  }
  std::sort(angles.begin(), angles.end());
  EXPECT_EQ(std::unique(angles.begin(), angles.end()), angles.end());
  for (int i = 7; i < 10; ++i) EXPECT_EQ(scan.volume(Modality::kFlair).slices[i], before.volume(Modality::kFlair).slices[i]);
  for (int i = 0; i < 7; ++i) {
    Slice expect = before.volume(Modality::kFlair).slices[i];
    apply_transform(expect, specs[i]);
    EXPECT_EQ(scan.volume(Modality::kFlair).slices[i], expect);
  }
}

TEST(Geometric, OutputStaysInRange) {
  std::mt19937_64 src(7);
  Scan scan = random_scan(4, 4, 0, src);
  AugmentConfig cfg;
  Rng rng(3);
  geometric_transform(scan, cfg, rng);
  for (const Volume& v : scan.volumes) {
    for (const Slice& s : v.slices) {
      for (float x : s.plane) {
        EXPECT_GE(x, -1.0F);
        EXPECT_LE(x, 1.0F);
      }
    }
  }
}

TEST(Lambda, AlphaOneIsUniform) {
  Rng rng(11);
  std::vector<double> x;
  for (int i = 0; i < 100000; ++i) x.push_back(sample_lambda(1.0, rng));
  EXPECT_LT(ks_uniform(x), 0.01);
}

TEST(Lambda, LargeAlphaConcentrates) {
  Rng rng(12);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double l = sample_lambda(100.0, rng);
    sum += l;
    sq += l * l;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 0.005);
  // Beta(a, a) variance is 1 / (4 (2a + 1)).
  EXPECT_NEAR(sq / n - mean * mean, 1.0 / (4.0 * 201.0), 1e-4);
}

TEST(Lambda, RejectsNonPositiveAlpha) {
  Rng rng(1);
  for (double a : {0.0, -1.0, std::nan("")}) {
    try {
      sample_lambda(a, rng);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidParameter);
    }
  }
}

TEST(Mix, ScalarExample) {
  Scan a, b;
  a.label = 1;
  b.label = 0;
  for (Modality m : data::kModalities) {
    a.volume(m) = btdnet::testing::constant_volume(m, 2, 2, 2, 1.0F);
    b.volume(m) = btdnet::testing::constant_volume(m, 2, 2, 2, -1.0F);
  }
  a.volume(Modality::kT2).true_length = 1;
  const VirtualExample v = mix_scans(a, b, 0.75);
  EXPECT_EQ(v.soft_label[0], 0.25);
  EXPECT_EQ(v.soft_label[1], 0.75);
  EXPECT_EQ(v.lambda, 0.75);
  for (float x : v.mixed.volume(Modality::kFlair).slices[0].plane) EXPECT_EQ(x, 0.5F);
  EXPECT_EQ(v.mixed.volume(Modality::kT2).true_length, 2);
}

TEST(Mix, EndpointsAndMidpoint) {
  std::mt19937_64 src(8);
  const Scan a = random_scan(5, 3, 1, src);
  const Scan b = random_scan(5, 5, 0, src);
  const VirtualExample one = mix_scans(a, b, 1.0);
  const VirtualExample zero = mix_scans(a, b, 0.0);
  for (Modality m : data::kModalities) {
    EXPECT_EQ(one.mixed.volume(m).slices, a.volume(m).slices);
    EXPECT_EQ(zero.mixed.volume(m).slices, b.volume(m).slices);
  }
  EXPECT_EQ(one.soft_label, a.one_hot());
  EXPECT_EQ(zero.soft_label, b.one_hot());
  const VirtualExample mid = mix_scans(a, b, 0.5);
  for (Modality m : data::kModalities) {
    for (size_t k = 0; k < a.volume(m).slices.size(); ++k) {
      const auto& pa = a.volume(m).slices[k].plane;
      const auto& pb = b.volume(m).slices[k].plane;
      const auto& pm = mid.mixed.volume(m).slices[k].plane;
      for (size_t p = 0; p < pm.size(); ++p) ASSERT_NEAR(pm[p], 0.5 * pa[p] + 0.5 * pb[p], 1e-7);
    }
  }
}

TEST(Mix, SwappedArgumentsAreBitwiseEqual) {
  std::mt19937_64 src(9);
  const Scan a = random_scan(4, 4, 1, src);
  const Scan b = random_scan(4, 2, 0, src);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const double l = sample_lambda(0.2, rng);
    const VirtualExample ab = mix_scans(a, b, l);
    const VirtualExample ba = mix_scans(b, a, 1.0 - l);
    EXPECT_EQ(ab.soft_label, ba.soft_label);
    for (Modality m : data::kModalities) EXPECT_EQ(ab.mixed.volume(m), ba.mixed.volume(m));
    const MixWeights w = mix_weights(l);
    EXPECT_EQ(w.first + w.second, 1.0);
  }
}

TEST(Mix, ShapeMismatch) {
  std::mt19937_64 src(10);
  const Scan a = random_scan(4, 4, 1, src);
  const Scan b = random_scan(5, 4, 0, src);
  try {
    mix_scans(a, b, 0.3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Derangement, NoFixedPoints) {
  Rng rng(5);
  for (int n = 2; n < 40; ++n) {
    const std::vector<int> p = derangement(n, rng);
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i) {
      EXPECT_NE(p[i], i);
      EXPECT_EQ(sorted[i], i);
    }
  }
  EXPECT_THROW(derangement(1, rng), Error);
}

TEST(Tta, VersionsAreTheFourTransforms) {
  std::mt19937_64 src(11);
  const Scan scan = random_scan(6, 4, 1, src);
  const auto v = tta_versions(scan, 10.0);
  EXPECT_EQ(v[0], scan);
  for (Modality m : data::kModalities) {
    for (int i = 0; i < 6; ++i) {
      const Slice& s = scan.volume(m).slices[i];
      if (i >= 4) {
        for (int k = 1; k < 4; ++k) EXPECT_EQ(v[k].volume(m).slices[i], s);
        continue;
      }
      Slice f = s;
      apply_transform(f, {true, 0.0});
      Slice r = s;
      apply_transform(r, {false, 10.0});
      Slice fr = s;
      apply_transform(fr, {true, 10.0});
      EXPECT_EQ(v[1].volume(m).slices[i], f);
      EXPECT_EQ(v[2].volume(m).slices[i], r);
      EXPECT_EQ(v[3].volume(m).slices[i], fr);
    }
  }
}

TEST(Tta, AngleIsReproducible) {
  AugmentConfig cfg;
  EXPECT_EQ(sample_tta_angle(cfg), sample_tta_angle(cfg));
  EXPECT_LE(std::abs(sample_tta_angle(cfg)), 15.0);
  cfg.rotation_deg = 0.0;
  EXPECT_EQ(sample_tta_angle(cfg), 0.0);
}
