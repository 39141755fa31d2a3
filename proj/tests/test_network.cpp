#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "btdnet/error.hpp"
#include "btdnet/network/checkpoint.hpp"
#include "btdnet/network/model.hpp"
#include "btdnet/synth/synth.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace btdnet;
using namespace btdnet::network;
using data::Modality;
using data::Scan;
using data::Slice;
using nn::FeatureMaps;

namespace {

template <typename T>
Matrix<T> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
  return m;
}

Slice random_slice(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  Slice s(data::kPreparedSize, data::kPreparedSize, 3, 0.0F);
  for (float& v : s.plane) v = u(rng);
  return s;
}

ModelConfig small_config() {
  ModelConfig c;
  c.rnn_units = 6;
  c.routing_units = 5;
  c.fusion_units = 7;
  c.lengths = {4, 3, 3, 4};
  return c;
}

Scan random_scan(const ModelConfig& c, std::mt19937_64& rng, int label = 0) {
  Scan scan;
  scan.label = label;
  std::uniform_int_distribution<int> len(1, 4);
  for (Modality m : data::kModalities) {
    auto& v = scan.volume(m);
    v.modality = m;
    const int t = c.length(m);
    v.true_length = std::min(t, len(rng));
    for (int k = 0; k < t; ++k) {
      v.slices.push_back(k < v.true_length ? random_slice(rng) : Slice(224, 224, 3, -1.0F));
    }
  }
  return scan;
}

/// Direct convolution of a C x H x W image, stride 2, pad 1, 3x3 kernels.
std::vector<double> naive_conv(const std::vector<double>& x, int c, int h, int w, const Matrix<double>& weight,
                               const Matrix<double>& bias, int& oh, int& ow) {
  const int cout = static_cast<int>(weight.rows());
  oh = (h + 2 - 3) / 2 + 1;
  ow = (w + 2 - 3) / 2 + 1;
  std::vector<double> y(static_cast<size_t>(cout) * oh * ow, 0.0);
  for (int o = 0; o < cout; ++o) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        double acc = bias(0, o);
        for (int ci = 0; ci < c; ++ci) {
          for (int ki = 0; ki < 3; ++ki) {
            for (int kj = 0; kj < 3; ++kj) {
              const int r = 2 * i - 1 + ki, q = 2 * j - 1 + kj;
              if (r < 0 || q < 0 || r >= h || q >= w) continue;
              acc += weight(o, (ci * 3 + ki) * 3 + kj) * x[(static_cast<size_t>(ci) * h + r) * w + q];
            }
          }
        }
        y[(static_cast<size_t>(o) * oh + i) * ow + j] = acc;
      }
    }
  }
  return y;
}

std::vector<double> tiny_cnn_oracle(const Slice& s, BtdNet<double>& model) {
  // 4x4 average pool of the plane, replicated into three channels.
  int h = s.rows / 4, w = s.cols / 4;
  std::vector<double> x(static_cast<size_t>(3) * h * w, 0.0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) acc += s.at(4 * i + a, 4 * j + b);
      }
      for (int ch = 0; ch < 3; ++ch) x[(static_cast<size_t>(ch) * h + i) * w + j] = acc / 16.0;
    }
  }
  int c = 3;
  for (const char* layer : {"conv1", "conv2", "conv3"}) {
    const std::string n = std::string("cnn.") + layer;
    const auto& wt = model.find(n + ".weight")->value;
    const auto& bs = model.find(n + ".bias")->value;
    int oh = 0, ow = 0;
    x = naive_conv(x, c, h, w, wt, bs, oh, ow);
    for (double& v : x) v = nn::gelu(v);
    c = static_cast<int>(wt.rows());
    h = oh;
    w = ow;
  }
  std::vector<double> f(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (int p = 0; p < h * w; ++p) f[ch] += x[static_cast<size_t>(ch) * h * w + p];
    f[ch] /= h * w;
  }
  return f;
}

/// Central-difference check of sum(probe .* f()) against accumulated grads.
template <typename Forward>
double worst_param_error(nn::Parameter<double>& p, Forward&& objective, double step = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    const double keep = p.value.data()[i];
    p.value.data()[i] = keep + step;
    const double up = objective();
    p.value.data()[i] = keep - step;
    const double down = objective();
    p.value.data()[i] = keep;
    const double numeric = (up - down) / (2 * step);
    const double analytic = p.grad.data()[i];
    worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
  }
  return worst;
}

}  // namespace

TEST(Layers, LinearGradients) {
  std::mt19937_64 rng(1);
  nn::Linear<double> lin("l", 5, 3);
  lin.init(rng);
  const Matrix<double> x = random_matrix<double>(4, 5, rng);
  const Matrix<double> probe = random_matrix<double>(4, 3, rng);
  const Matrix<double> dx = lin.backward(x, probe);
  auto f = [&] { return (lin.forward(x).array() * probe.array()).sum(); };
  EXPECT_LT(worst_param_error(lin.weight, f), 1e-6);
  EXPECT_LT(worst_param_error(lin.bias, f), 1e-6);
  EXPECT_TRUE(dx.isApprox(probe * lin.weight.value, 1e-12));
}

TEST(Layers, BatchNormGradientsAndRunningStats) {
  std::mt19937_64 rng(2);
  nn::BatchNorm<double> bn("bn", 4);
  bn.gamma.value = random_matrix<double>(1, 4, rng);
  bn.beta.value = random_matrix<double>(1, 4, rng);
  Matrix<double> x = random_matrix<double>(6, 4, rng);
  const Matrix<double> probe = random_matrix<double>(6, 4, rng);
  nn::BatchNorm<double>::Cache cache;
  bn.forward(x, true, false, cache);
  EXPECT_EQ(bn.running_mean.value, Matrix<double>::Zero(1, 4));
  const Matrix<double> dx = bn.backward(cache, probe);
  auto f = [&] {
    nn::BatchNorm<double>::Cache c;
    return (bn.forward(x, true, false, c).array() * probe.array()).sum();
  };
  EXPECT_LT(worst_param_error(bn.gamma, f), 1e-6);
  EXPECT_LT(worst_param_error(bn.beta, f), 1e-6);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + 1e-6;
    const double up = f();
    x.data()[i] = keep - 1e-6;
    const double down = f();
    x.data()[i] = keep;
    EXPECT_NEAR(dx.data()[i], (up - down) / 2e-6, 1e-6);
  }
  bn.forward(x, true, true, cache);
  const Matrix<double> mean = x.colwise().mean();
  EXPECT_TRUE(bn.running_mean.value.isApprox(0.1 * mean, 1e-12));
}

TEST(Layers, ConvGradients) {
  std::mt19937_64 rng(3);
  nn::Conv2d<double> conv("c", 2, 3, 3, 2, 1, true);
  conv.init(rng);
  FeatureMaps<double> x(2, 2, 7, 6);
  for (double& v : x.data) v = std::normal_distribution<double>(0, 1)(rng);
  const FeatureMaps<double> y = conv.forward(x);
  FeatureMaps<double> probe(y.n, y.c, y.h, y.w);
  for (double& v : probe.data) v = std::normal_distribution<double>(0, 1)(rng);
  FeatureMaps<double> dx;
  conv.backward(x, probe, &dx);
  auto f = [&] {
    const FeatureMaps<double> z = conv.forward(x);
    double s = 0.0;
    for (size_t i = 0; i < z.data.size(); ++i) s += z.data[i] * probe.data[i];
    return s;
  };
  EXPECT_LT(worst_param_error(conv.weight, f), 1e-6);
  EXPECT_LT(worst_param_error(conv.bias, f), 1e-6);
  for (size_t i = 0; i < x.data.size(); i += 5) {
    const double keep = x.data[i];
    x.data[i] = keep + 1e-6;
    const double up = f();
    x.data[i] = keep - 1e-6;
    const double down = f();
    x.data[i] = keep;
    EXPECT_NEAR(dx.data[i], (up - down) / 2e-6, 1e-6);
  }
}

TEST(Layers, LstmGradients) {
  std::mt19937_64 rng(4);
  nn::Lstm<double> lstm("r", 3, 4);
  lstm.init(rng);
  std::vector<Matrix<double>> in;
  std::vector<Matrix<double>> probe;
  for (int k = 0; k < 5; ++k) {
    in.push_back(random_matrix<double>(2, 3, rng));
    probe.push_back(random_matrix<double>(2, 4, rng));
  }
  nn::Lstm<double>::Cache cache;
  lstm.forward(in, &cache);
  lstm.backward(cache, probe);
  auto f = [&] {
    const auto h = lstm.forward(in, nullptr);
    double s = 0.0;
    for (size_t k = 0; k < h.size(); ++k) s += (h[k].array() * probe[k].array()).sum();
    return s;
  };
  EXPECT_LT(worst_param_error(lstm.w_ih, f), 1e-5);
  EXPECT_LT(worst_param_error(lstm.w_hh, f), 1e-5);
  EXPECT_LT(worst_param_error(lstm.bias, f), 1e-5);
}

TEST(Layers, GeluValues) {
  EXPECT_EQ(nn::gelu(0.0), 0.0);
  EXPECT_NEAR(nn::gelu(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(nn::gelu(-1.0), -0.15865525393145707, 1e-15);
  for (double x : {-3.0, -0.5, 0.2, 2.0}) {
    EXPECT_NEAR(nn::gelu_grad(x), (nn::gelu(x + 1e-6) - nn::gelu(x - 1e-6)) / 2e-6, 1e-8);
  }
}

TEST(Backbone, TinyCnnMatchesDirectConvolution) {
  std::mt19937_64 rng(5);
  BtdNet<double> model(small_config());
  model.init(rng);
  const Slice s = random_slice(rng);
  const Matrix<double> f = model.cnn_features(s);
  ASSERT_EQ(f.cols(), 32);
  const std::vector<double> oracle = tiny_cnn_oracle(s, model);
  for (int i = 0; i < 32; ++i) EXPECT_NEAR(f(0, i), oracle[i], 1e-10);
}

TEST(Backbone, DeterministicAndSensitive) {
  std::mt19937_64 rng(6);
  BtdNet<float> model(small_config());
  model.init(rng);
  const Slice a(224, 224, 3, 1.0F);
  const Slice b(224, 224, 3, -1.0F);
  EXPECT_EQ(model.cnn_features(a), model.cnn_features(a));
  EXPECT_NE(model.cnn_features(a), model.cnn_features(b));
}

TEST(Backbone, WrongSizeRejected) {
  std::mt19937_64 rng(7);
  BtdNet<float> model(small_config());
  model.init(rng);
  try {
    model.cnn_features(Slice(100, 224, 3, 0.0F));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Recurrent, OutputsDependOnlyOnThePast) {
  std::mt19937_64 rng(8);
  BtdNet<double> model(small_config());
  model.init(rng);
  std::vector<Matrix<double>> steps;
  for (int k = 0; k < 6; ++k) steps.push_back(random_matrix<double>(1, 32, rng));
  const auto base = model.rnn_sequence(steps);
  auto changed = steps;
  changed[4] = random_matrix<double>(1, 32, rng);
  const auto after = model.rnn_sequence(changed);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(after[k], base[k]);
  EXPECT_NE(after[4], base[4]);
}

TEST(Recurrent, ZeroWeightsGiveConstantOutput) {
  std::mt19937_64 rng(9);
  BtdNet<double> model(small_config());
  model.init(rng);
  model.rnn().w_ih.value.setZero();
  model.rnn().w_hh.value.setZero();
  model.rnn().bias.value.setZero();
  std::vector<Matrix<double>> steps;
  for (int k = 0; k < 3; ++k) steps.push_back(random_matrix<double>(1, 32, rng));
  // Every gate is sigmoid(0) = 0.5 and the candidate is tanh(0) = 0.
  for (const auto& h : model.rnn_sequence(steps)) EXPECT_EQ(h, Matrix<double>::Zero(1, 6));
}

TEST(Mask, FlattensTheFirstRows) {
  Matrix<double> out(3, 2);
  out << 1, 2, 3, 4, 5, 6;
  const Matrix<double> m = mask_and_concat(out, 2);
  ASSERT_EQ(m.rows(), 1);
  ASSERT_EQ(m.cols(), 6);
  EXPECT_EQ(m, (Matrix<double>(1, 6) << 1, 2, 3, 4, 0, 0).finished());
  EXPECT_EQ(mask_and_concat(out, 3), (Matrix<double>(1, 6) << 1, 2, 3, 4, 5, 6).finished());
  EXPECT_EQ(length_mask<double>(3, 2, 1), (Matrix<double>(1, 6) << 1, 1, 0, 0, 0, 0).finished());
  EXPECT_THROW(mask_and_concat(out, 0), Error);
  EXPECT_THROW(mask_and_concat(out, 4), Error);
}

TEST(Routing, GroupsFollowLengths) {
  ModelConfig c = small_config();
  EXPECT_EQ(c.routing_group(Modality::kFlair), "routing.t4");
  EXPECT_EQ(c.routing_group(Modality::kT1w), "routing.t3");
  EXPECT_EQ(c.routing_groups(), (std::vector<std::string>{"routing.t4", "routing.t3"}));
  c.per_modality_routing = true;
  EXPECT_EQ(c.routing_groups().size(), 4U);
  BtdNet<float> model(c);
  EXPECT_NE(model.find("routing.T1wCE.linear.weight"), nullptr);
  EXPECT_EQ(model.find("routing.T1wCE.linear.weight")->value.cols(), 6 * 3);
}

TEST(Fusion, ZeroWeightsGiveZeroLogitsAndOrderMatters) {
  std::mt19937_64 rng(10);
  BtdNet<double> model(small_config());
  model.init(rng);
  std::array<Matrix<double>, 4> routed;
  for (auto& r : routed) r = random_matrix<double>(2, 5, rng);
  const Matrix<double> z = model.fuse_and_classify(routed);
  EXPECT_EQ(z.rows(), 2);
  EXPECT_EQ(z.cols(), 2);
  auto swapped = routed;
  std::swap(swapped[0], swapped[2]);
  EXPECT_FALSE(model.fuse_and_classify(swapped).isApprox(z, 1e-6));
  model.find("fusion.weight")->value.setZero();
  model.find("fusion.bias")->value.setZero();
  model.find("output.bias")->value.setZero();
  EXPECT_EQ(model.fuse_and_classify(routed), Matrix<double>::Zero(2, 2));
}

TEST(Forward, DeterministicAndPaddingInvariant) {
  std::mt19937_64 rng(11);
  const ModelConfig c = small_config();
  BtdNet<float> model(c);
  model.init(rng);
  const Scan scan = random_scan(c, rng);
  Scan noisy = scan;
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  for (auto& v : noisy.volumes) {
    for (int k = v.true_length; k < v.padded_length(); ++k) {
      for (float& x : v.slices[k].plane) x = u(rng);
    }
  }
  const Scan* a = &scan;
  const Scan* b = &noisy;
  const Matrix<float> za = model.forward(std::span<const Scan* const>(&a, 1), {});
  EXPECT_EQ(model.forward(std::span<const Scan* const>(&a, 1), {}), za);
  EXPECT_LE((model.forward(std::span<const Scan* const>(&b, 1), {}) - za).cwiseAbs().maxCoeff(), 1e-6F);
}

TEST(Forward, StreamHeadUsesOneModality) {
  std::mt19937_64 rng(12);
  const ModelConfig c = small_config();
  BtdNet<float> model(c);
  model.init(rng);
  Scan scan = random_scan(c, rng);
  const Scan* p = &scan;
  ForwardOptions opts;
  opts.stream = Modality::kT2;
  const Matrix<float> z = model.forward(std::span<const Scan* const>(&p, 1), opts);
  scan.volume(Modality::kFlair).slices.clear();
  scan.volume(Modality::kFlair).true_length = 0;
  EXPECT_EQ(model.forward(std::span<const Scan* const>(&p, 1), opts), z);
}

TEST(Forward, PaddingGradientsAreZero) {
  std::mt19937_64 rng(13);
  const ModelConfig c = small_config();
  BtdNet<float> model(c);
  model.init(rng);
  std::vector<Scan> scans;
  for (int i = 0; i < 3; ++i) scans.push_back(random_scan(c, rng, i % 2));
  std::vector<const Scan*> batch;
  for (const auto& s : scans) batch.push_back(&s);
  ForwardOptions opts;
  opts.mode = Mode::kTrain;
  opts.input_grads = true;
  BtdNet<float>::TapePtr tape;
  const Matrix<float> z = model.forward(batch, opts, &tape);
  InputGradients<float> g;
  model.backward(*tape, random_matrix<float>(z.rows(), z.cols(), rng), &g);
  for (size_t b = 0; b < scans.size(); ++b) {
    for (Modality m : data::kModalities) {
      const int l = scans[b].volume(m).true_length;
      const auto& r = g.rnn[b][data::index_of(m)];
      EXPECT_TRUE((r.bottomRows(r.rows() - l).array() == 0.0F).all());
      EXPECT_TRUE((r.topRows(l).array() != 0.0F).any());
      const auto& px = g.pixels[b][data::index_of(m)];
      for (size_t k = l; k < px.size(); ++k) {
        for (float v : px[k]) ASSERT_EQ(v, 0.0F);
      }
    }
  }
}

TEST(Forward, EmptyBatch) {
  BtdNet<float> model(small_config());
  EXPECT_THROW(model.forward({}, {}), Error);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  btdnet::testing::TempDir tmp("ckpt");
  std::mt19937_64 rng(14);
  BtdNet<float> model(small_config());
  model.init(rng);
  save_checkpoint(model, tmp.path() / "a.bin", {{"note", "x"}});
  BtdNet<float> back = load_model<float>(tmp.path() / "a.bin");
  save_checkpoint(back, tmp.path() / "b.bin", {{"note", "x"}});
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  EXPECT_EQ(slurp(tmp.path() / "a.bin"), slurp(tmp.path() / "b.bin"));
  EXPECT_EQ(read_checkpoint(tmp.path() / "a.bin").meta.at("note"), "x");
  const Scan scan = random_scan(small_config(), rng);
  const Scan* p = &scan;
  EXPECT_EQ(model.forward(std::span<const Scan* const>(&p, 1), {}), back.forward(std::span<const Scan* const>(&p, 1), {}));
}

TEST(Checkpoint, MissingTruncatedForeign) {
  btdnet::testing::TempDir tmp("bad");
  auto code = [](const fs::path& p) {
    try {
      read_checkpoint(p);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIoError;
  };
  EXPECT_EQ(code(tmp.path() / "none.bin"), ErrorCode::kCheckpointMismatch);
  std::mt19937_64 rng(15);
  BtdNet<float> model(small_config());
  model.init(rng);
  save_checkpoint(model, tmp.path() / "a.bin");
  const auto size = fs::file_size(tmp.path() / "a.bin");
  fs::resize_file(tmp.path() / "a.bin", size - 10);
  EXPECT_EQ(code(tmp.path() / "a.bin"), ErrorCode::kCheckpointMismatch);
  std::ofstream(tmp.path() / "c.bin") << "hello";
  EXPECT_EQ(code(tmp.path() / "c.bin"), ErrorCode::kCheckpointMismatch);
}

TEST(Checkpoint, ArchitectureMismatch) {
  std::mt19937_64 rng(16);
  BtdNet<float> model(small_config());
  model.init(rng);
  const Checkpoint ck = snapshot(model);
  ModelConfig other = small_config();
  other.rnn_units = 9;
  BtdNet<float> wrong(other);
  EXPECT_THROW(apply_checkpoint(ck, wrong), Error);
  EXPECT_THROW(require_compatible(small_config(), other), Error);
  EXPECT_NO_THROW(require_compatible(small_config(), small_config()));
}

TEST(Config, JsonRoundTripAndValidation) {
  ModelConfig c = small_config();
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  c.lengths[2] = 0;
  EXPECT_THROW(c.validate(), Error);
}
