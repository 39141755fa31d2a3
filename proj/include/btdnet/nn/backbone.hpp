#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "btdnet/data/types.hpp"
#include "btdnet/nn/layers.hpp"
#include "btdnet/nn/tensor.hpp"

namespace btdnet::nn {

enum class BackboneKind { kTinyCnn, kResNet18Gap };

std::string_view backbone_name(BackboneKind kind);
BackboneKind parse_backbone(std::string_view name);
int backbone_feature_dim(BackboneKind kind);

/// Per-slice feature extractor ending in global average pooling. Slices are
/// single planes standing for three identical channels.
template <typename T>
class Backbone {
 public:
  struct Tape {
    virtual ~Tape() = default;
  };

  virtual ~Backbone() = default;

  virtual BackboneKind kind() const = 0;
  virtual int feature_dim() const = 0;
  int input_size() const { return data::kPreparedSize; }

  virtual void init(Rng& rng) = 0;
  /// N x D features. Throws kShapeMismatch for slices that are not
  /// input_size() x input_size(). `tape` may be null for inference.
  virtual Matrix<T> forward(std::span<const data::Slice* const> slices, std::unique_ptr<Tape>* tape) const = 0;
  /// Accumulates parameter gradients. With `input_grad` returns N x (H*W):
  /// dL/d(plane pixel), summed over the three replicated channels.
  virtual Matrix<T> backward(Tape& tape, const Matrix<T>& d_features, bool input_grad) = 0;
  virtual void collect(ParamList<T>& out) = 0;

 protected:
  void check_shapes(std::span<const data::Slice* const> slices) const;
};

/// Average-pool stem (4x4) followed by three stride-2 3x3 conv + GELU blocks
/// (8, 16, 32 channels) and global average pooling: D = 32.
template <typename T>
class TinyCnn final : public Backbone<T> {
 public:
  static constexpr int kStemPool = 4;
  static constexpr int kFeatureDim = 32;

  explicit TinyCnn(const std::string& prefix);

  BackboneKind kind() const override { return BackboneKind::kTinyCnn; }
  int feature_dim() const override { return kFeatureDim; }
  void init(Rng& rng) override;
  Matrix<T> forward(std::span<const data::Slice* const> slices, std::unique_ptr<typename Backbone<T>::Tape>* tape) const override;
  Matrix<T> backward(typename Backbone<T>::Tape& tape, const Matrix<T>& d_features, bool input_grad) override;
  void collect(ParamList<T>& out) override;

 private:
  struct TinyTape;
  Conv2d<T> folded_conv1() const;
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  Conv2d<T> conv3_;
};

/// ResNet18 without its classifier: D = 512. Batch-norm layers run on frozen
/// statistics, so a slice's features never depend on the rest of the batch.
template <typename T>
class ResNet18Gap final : public Backbone<T> {
 public:
  explicit ResNet18Gap(const std::string& prefix);

  BackboneKind kind() const override { return BackboneKind::kResNet18Gap; }
  int feature_dim() const override { return 512; }
  void init(Rng& rng) override;
  Matrix<T> forward(std::span<const data::Slice* const> slices, std::unique_ptr<typename Backbone<T>::Tape>* tape) const override;
  Matrix<T> backward(typename Backbone<T>::Tape& tape, const Matrix<T>& d_features, bool input_grad) override;
  void collect(ParamList<T>& out) override;

 private:
  struct Block {
    Conv2d<T> conv1;
    FrozenBatchNorm2d<T> bn1;
    Conv2d<T> conv2;
    FrozenBatchNorm2d<T> bn2;
    bool has_downsample = false;
    Conv2d<T> down_conv;
    FrozenBatchNorm2d<T> down_bn;
  };
  struct BlockTape {
    FeatureMaps<T> x, c1, r1, c2, down_c, y;
  };
  struct ResTape;

  FeatureMaps<T> block_forward(const Block& b, const FeatureMaps<T>& x, BlockTape* tape) const;
  FeatureMaps<T> block_backward(Block& b, const BlockTape& tape, const FeatureMaps<T>& dy);

  Conv2d<T> conv1_;
  FrozenBatchNorm2d<T> bn1_;
  std::vector<Block> blocks_;
};

template <typename T>
std::unique_ptr<Backbone<T>> make_backbone(BackboneKind kind, const std::string& prefix);

}  // namespace btdnet::nn
