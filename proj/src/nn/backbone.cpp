#include "btdnet/nn/backbone.hpp"

#include "btdnet/error.hpp"

namespace btdnet::nn {

std::string_view backbone_name(BackboneKind kind) {
  return kind == BackboneKind::kTinyCnn ? "tiny_cnn" : "resnet18_gap";
}

BackboneKind parse_backbone(std::string_view name) {
  if (name == "tiny_cnn") return BackboneKind::kTinyCnn;
  if (name == "resnet18_gap") return BackboneKind::kResNet18Gap;
  throw Error(ErrorCode::kConfigError, "unknown backbone '" + std::string(name) + "'");
}

int backbone_feature_dim(BackboneKind kind) { return kind == BackboneKind::kTinyCnn ? 32 : 512; }

template <typename T>
void Backbone<T>::check_shapes(std::span<const data::Slice* const> slices) const {
  for (const data::Slice* s : slices) {
    if (s->rows != input_size() || s->cols != input_size() || (s->channels != 1 && s->channels != 3)) {
      throw Error(ErrorCode::kShapeMismatch, "backbone expects " + std::to_string(input_size()) + "x" +
                                                 std::to_string(input_size()) + " slices, got " +
                                                 std::to_string(s->rows) + "x" + std::to_string(s->cols) + "x" +
                                                 std::to_string(s->channels));
    }
  }
}

namespace {

// Replicates each plane into three identical channels.
template <typename T>
FeatureMaps<T> replicate_planes(std::span<const data::Slice* const> slices, int size) {
  FeatureMaps<T> x(static_cast<int>(slices.size()), 3, size, size);
  const size_t area = static_cast<size_t>(size) * size;
  for (size_t i = 0; i < slices.size(); ++i) {
    T* img = x.image(static_cast<int>(i));
    for (size_t p = 0; p < area; ++p) img[p] = static_cast<T>(slices[i]->plane[p]);
    std::copy(img, img + area, img + area);
    std::copy(img, img + area, img + 2 * area);
  }
  return x;
}

template <typename T>
Matrix<T> sum_channels(const FeatureMaps<T>& dx) {
  const Eigen::Index area = static_cast<Eigen::Index>(dx.h) * dx.w;
  Matrix<T> out = Matrix<T>::Zero(dx.n, area);
  for (int i = 0; i < dx.n; ++i) {
    for (int c = 0; c < dx.c; ++c) {
      out.row(i) += Eigen::Map<const RowVector<T>>(dx.image(i) + area * c, area);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- TinyCnn

template <typename T>
struct TinyCnn<T>::TinyTape : Backbone<T>::Tape {
  FeatureMaps<T> stem, a1, g1, a2, g2, a3;
};

template <typename T>
TinyCnn<T>::TinyCnn(const std::string& prefix)
    : conv1_(prefix + ".conv1", 3, 8, 3, 2, 1, true),
      conv2_(prefix + ".conv2", 8, 16, 3, 2, 1, true),
      conv3_(prefix + ".conv3", 16, kFeatureDim, 3, 2, 1, true) {}

template <typename T>
Conv2d<T> TinyCnn<T>::folded_conv1() const {
  Conv2d<T> conv("", 1, conv1_.weight.value.rows(), 3, 2, 1, true);
  const Eigen::Index taps = conv.weight.value.cols();
  conv.weight.value = conv1_.weight.value.leftCols(taps) + conv1_.weight.value.middleCols(taps, taps) +
                      conv1_.weight.value.rightCols(taps);
  conv.bias.value = conv1_.bias.value;
  return conv;
}

template <typename T>
void TinyCnn<T>::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
}

template <typename T>
Matrix<T> TinyCnn<T>::forward(std::span<const data::Slice* const> slices,
                              std::unique_ptr<typename Backbone<T>::Tape>* tape) const {
  this->check_shapes(slices);
  const int size = this->input_size();
  const int pooled = size / kStemPool;
  const int n = static_cast<int>(slices.size());

  // The stem output is one pooled plane; the three replicated channels are
  // folded into the first convolution.
  FeatureMaps<T> stem(n, 1, pooled, pooled);
  const T scale = T(1) / static_cast<T>(kStemPool * kStemPool);
  for (int i = 0; i < n; ++i) {
    const float* src = slices[i]->plane.data();
    T* dst = stem.image(i);
    for (int oy = 0; oy < pooled; ++oy) {
      for (int ox = 0; ox < pooled; ++ox) {
        T acc = 0;
        for (int dy = 0; dy < kStemPool; ++dy) {
          const float* row = src + static_cast<size_t>(oy * kStemPool + dy) * size + ox * kStemPool;
          for (int dx = 0; dx < kStemPool; ++dx) acc += static_cast<T>(row[dx]);
        }
        dst[oy * pooled + ox] = acc * scale;
      }
    }
  }

  auto t = std::make_unique<TinyTape>();
  t->a1 = folded_conv1().forward(stem);
  t->g1 = gelu(t->a1);
  t->a2 = conv2_.forward(t->g1);
  t->g2 = gelu(t->a2);
  t->a3 = conv3_.forward(t->g2);
  Matrix<T> features = global_avg_pool(gelu(t->a3));
  if (tape != nullptr) {
    t->stem = std::move(stem);
    *tape = std::move(t);
  }
  return features;
}

template <typename T>
Matrix<T> TinyCnn<T>::backward(typename Backbone<T>::Tape& tape, const Matrix<T>& d_features, bool input_grad) {
  auto& t = dynamic_cast<TinyTape&>(tape);
  const FeatureMaps<T> dg3 = global_avg_pool_backward(d_features, t.a3.h, t.a3.w);
  const FeatureMaps<T> da3 = gelu_backward(t.a3, dg3);
  FeatureMaps<T> dg2;
  conv3_.backward(t.g2, da3, &dg2);
  const FeatureMaps<T> da2 = gelu_backward(t.a2, dg2);
  FeatureMaps<T> dg1;
  conv2_.backward(t.g1, da2, &dg1);
  const FeatureMaps<T> da1 = gelu_backward(t.a1, dg1);
  Conv2d<T> folded = folded_conv1();
  FeatureMaps<T> dstem;
  folded.backward(t.stem, da1, input_grad ? &dstem : nullptr);
  const Eigen::Index taps = folded.weight.value.cols();
  for (int c = 0; c < 3; ++c) conv1_.weight.grad.middleCols(c * taps, taps) += folded.weight.grad;
  conv1_.bias.grad += folded.bias.grad;
  if (!input_grad) return {};
  const Matrix<T> dpool = sum_channels(dstem);
  const int size = this->input_size();
  const int pooled = size / kStemPool;
  const T scale = T(1) / static_cast<T>(kStemPool * kStemPool);
  Matrix<T> dplane(dpool.rows(), static_cast<Eigen::Index>(size) * size);
  for (Eigen::Index i = 0; i < dpool.rows(); ++i) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        dplane(i, static_cast<Eigen::Index>(y) * size + x) = dpool(i, (y / kStemPool) * pooled + x / kStemPool) * scale;
      }
    }
  }
  return dplane;
}

template <typename T>
void TinyCnn<T>::collect(ParamList<T>& out) {
  conv1_.collect(out);
  conv2_.collect(out);
  conv3_.collect(out);
}

// ---------------------------------------------------------------- ResNet18Gap

template <typename T>
struct ResNet18Gap<T>::ResTape : Backbone<T>::Tape {
  FeatureMaps<T> input, c1, r1, pooled;
  std::vector<int> argmax;
  std::vector<BlockTape> blocks;
  int out_h = 0, out_w = 0;
};

template <typename T>
ResNet18Gap<T>::ResNet18Gap(const std::string& prefix)
    : conv1_(prefix + ".conv1", 3, 64, 7, 2, 3, false), bn1_(prefix + ".bn1", 64) {
  const int widths[4] = {64, 128, 256, 512};
  int in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    for (int j = 0; j < 2; ++j) {
      const std::string name = prefix + ".layer" + std::to_string(stage + 1) + "." + std::to_string(j);
      const int out = widths[stage];
      const int stride = (stage > 0 && j == 0) ? 2 : 1;
      Block b;
      b.conv1 = Conv2d<T>(name + ".conv1", in, out, 3, stride, 1, false);
      b.bn1 = FrozenBatchNorm2d<T>(name + ".bn1", out);
      b.conv2 = Conv2d<T>(name + ".conv2", out, out, 3, 1, 1, false);
      b.bn2 = FrozenBatchNorm2d<T>(name + ".bn2", out);
      b.has_downsample = stride != 1 || in != out;
      if (b.has_downsample) {
        b.down_conv = Conv2d<T>(name + ".downsample.0", in, out, 1, stride, 0, false);
        b.down_bn = FrozenBatchNorm2d<T>(name + ".downsample.1", out);
      }
      blocks_.push_back(std::move(b));
      in = out;
    }
  }
}

template <typename T>
void ResNet18Gap<T>::init(Rng& rng) {
  conv1_.init(rng);
  for (Block& b : blocks_) {
    b.conv1.init(rng);
    b.conv2.init(rng);
    if (b.has_downsample) b.down_conv.init(rng);
  }
}

template <typename T>
FeatureMaps<T> ResNet18Gap<T>::block_forward(const Block& b, const FeatureMaps<T>& x, BlockTape* tape) const {
  FeatureMaps<T> c1 = b.conv1.forward(x);
  FeatureMaps<T> r1 = relu(b.bn1.forward(c1));
  FeatureMaps<T> c2 = b.conv2.forward(r1);
  FeatureMaps<T> y = b.bn2.forward(c2);
  FeatureMaps<T> down_c;
  if (b.has_downsample) {
    down_c = b.down_conv.forward(x);
    const FeatureMaps<T> sc = b.down_bn.forward(down_c);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += sc.data[i];
  } else {
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
  }
  y = relu(y);
  if (tape != nullptr) {
    tape->x = x;
    tape->c1 = std::move(c1);
    tape->r1 = std::move(r1);
    tape->c2 = std::move(c2);
    tape->down_c = std::move(down_c);
    tape->y = y;
  }
  return y;
}

template <typename T>
FeatureMaps<T> ResNet18Gap<T>::block_backward(Block& b, const BlockTape& tape, const FeatureMaps<T>& dy) {
  const FeatureMaps<T> ds = relu_backward(tape.y, dy);
  const FeatureMaps<T> dc2 = b.bn2.backward(tape.c2, ds);
  FeatureMaps<T> dr1;
  b.conv2.backward(tape.r1, dc2, &dr1);
  const FeatureMaps<T> dbn1 = relu_backward(tape.r1, dr1);
  const FeatureMaps<T> dc1 = b.bn1.backward(tape.c1, dbn1);
  FeatureMaps<T> dx;
  b.conv1.backward(tape.x, dc1, &dx);
  if (b.has_downsample) {
    const FeatureMaps<T> ddown = b.down_bn.backward(tape.down_c, ds);
    FeatureMaps<T> dx2;
    b.down_conv.backward(tape.x, ddown, &dx2);
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx2.data[i];
  } else {
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
  }
  return dx;
}

template <typename T>
Matrix<T> ResNet18Gap<T>::forward(std::span<const data::Slice* const> slices,
                                  std::unique_ptr<typename Backbone<T>::Tape>* tape) const {
  this->check_shapes(slices);
  auto t = std::make_unique<ResTape>();
  FeatureMaps<T> x = replicate_planes<T>(slices, this->input_size());
  FeatureMaps<T> c1 = conv1_.forward(x);
  FeatureMaps<T> r1 = relu(bn1_.forward(c1));
  FeatureMaps<T> h = max_pool3s2(r1, t->argmax);
  if (tape != nullptr) {
    t->input = std::move(x);
    t->c1 = std::move(c1);
    t->r1 = r1;
    t->pooled = h;
    t->blocks.resize(blocks_.size());
  }
  for (size_t i = 0; i < blocks_.size(); ++i) {
    h = block_forward(blocks_[i], h, tape != nullptr ? &t->blocks[i] : nullptr);
  }
  t->out_h = h.h;
  t->out_w = h.w;
  Matrix<T> features = global_avg_pool(h);
  if (tape != nullptr) *tape = std::move(t);
  return features;
}

template <typename T>
Matrix<T> ResNet18Gap<T>::backward(typename Backbone<T>::Tape& tape, const Matrix<T>& d_features, bool input_grad) {
  auto& t = dynamic_cast<ResTape&>(tape);
  FeatureMaps<T> dh = global_avg_pool_backward(d_features, t.out_h, t.out_w);
  for (size_t i = blocks_.size(); i-- > 0;) dh = block_backward(blocks_[i], t.blocks[i], dh);
  const FeatureMaps<T> dr1 = max_pool3s2_backward(t.r1, dh, t.argmax);
  const FeatureMaps<T> dbn = relu_backward(t.r1, dr1);
  const FeatureMaps<T> dc1 = bn1_.backward(t.c1, dbn);
  if (!input_grad) {
    conv1_.backward(t.input, dc1, nullptr);
    return {};
  }
  FeatureMaps<T> dx;
  conv1_.backward(t.input, dc1, &dx);
  return sum_channels(dx);
}

template <typename T>
void ResNet18Gap<T>::collect(ParamList<T>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  for (Block& b : blocks_) {
    b.conv1.collect(out);
    b.bn1.collect(out);
    b.conv2.collect(out);
    b.bn2.collect(out);
    if (b.has_downsample) {
      b.down_conv.collect(out);
      b.down_bn.collect(out);
    }
  }
}

template <typename T>
std::unique_ptr<Backbone<T>> make_backbone(BackboneKind kind, const std::string& prefix) {
  if (kind == BackboneKind::kTinyCnn) return std::make_unique<TinyCnn<T>>(prefix);
  return std::make_unique<ResNet18Gap<T>>(prefix);
}

template class Backbone<float>;
template class Backbone<double>;
template class TinyCnn<float>;
template class TinyCnn<double>;
template class ResNet18Gap<float>;
template class ResNet18Gap<double>;
template std::unique_ptr<Backbone<float>> make_backbone<float>(BackboneKind, const std::string&);
template std::unique_ptr<Backbone<double>> make_backbone<double>(BackboneKind, const std::string&);

}  // namespace btdnet::nn
