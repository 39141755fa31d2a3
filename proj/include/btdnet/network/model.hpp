#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "btdnet/data/types.hpp"
#include "btdnet/nn/backbone.hpp"
#include "btdnet/nn/layers.hpp"
#include "btdnet/nn/lstm.hpp"

namespace btdnet::network {

using nn::Matrix;

struct BackboneConfig {
  nn::BackboneKind kind = nn::BackboneKind::kTinyCnn;
  int feature_dim = 32;
  std::string weights_path;  // optional external weights, empty when unused

  bool operator==(const BackboneConfig&) const = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  int rnn_units = 128;
  int routing_units = 64;
  int fusion_units = 128;
  std::array<int, data::kNumModalities> lengths = {250, 200, 200, 250};
  int num_classes = 2;
  bool per_modality_routing = false;

  /// Throws kConfigError.
  void validate() const;
  int length(data::Modality m) const { return lengths[data::index_of(m)]; }
  /// Name of the routing parameter group serving `m`: modalities with equal t
  /// share "routing.t<t>" unless routing is per modality ("routing.<NAME>").
  std::string routing_group(data::Modality m) const;
  std::vector<std::string> routing_groups() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

enum class Mode { kTrain, kEval };

struct ForwardOptions {
  Mode mode = Mode::kEval;
  /// Phase-1 stream: only this modality is run, through its temporary head.
  std::optional<data::Modality> stream;
  /// Batch-norm running statistics are updated only when this is set in train mode.
  bool update_bn_stats = true;
  /// Keep what is needed to return dL/d(pixel). Disables slice deduplication.
  bool input_grads = false;
  /// Bitwise-equal consecutive slices of a volume share one backbone pass.
  bool dedup = true;
};

/// Intermediate values of one forward pass; row b belongs to scan b.
template <typename T>
struct ForwardTrace {
  std::array<std::vector<Matrix<T>>, data::kNumModalities> rnn;  // per modality: B matrices of t x V
  std::array<Matrix<T>, data::kNumModalities> masked;             // B x (V*t)
  std::array<Matrix<T>, data::kNumModalities> routed;             // B x V'
  Matrix<T> fused;                                                // B x V''
  Matrix<T> logits;                                               // B x 2
};

template <typename T>
struct InputGradients {
  /// pixels[b][m][k]: dL/d(plane) of slice k, rows*cols values.
  std::vector<std::array<std::vector<std::vector<T>>, data::kNumModalities>> pixels;
  /// rnn[b][m]: dL/d(RNN output), t x V.
  std::vector<std::array<Matrix<T>, data::kNumModalities>> rnn;
};

template <typename T>
class BtdNet {
 public:
  struct Tape;
  struct TapeDeleter {
    void operator()(Tape* tape) const;
  };
  using TapePtr = std::unique_ptr<Tape, TapeDeleter>;

  explicit BtdNet(const ModelConfig& config);
  ~BtdNet();
  BtdNet(BtdNet&&) noexcept;
  BtdNet& operator=(BtdNet&&) noexcept;

  const ModelConfig& config() const { return config_; }
  void init(nn::Rng& rng);

  /// Logits, B x 2. Every volume must be padded to its configured t.
  /// `tape` is filled for a later backward(); `trace` may be null.
  Matrix<T> forward(std::span<const data::Scan* const> batch, const ForwardOptions& options,
                    TapePtr* tape = nullptr, ForwardTrace<T>* trace = nullptr);

  /// Accumulates parameter gradients of sum(d_logits .* logits).
  void backward(Tape& tape, const Matrix<T>& d_logits, InputGradients<T>* input_grads = nullptr);

  /// Every tensor in a fixed order, including buffers and the phase-1 heads.
  nn::ParamList<T> parameters();
  nn::ParamList<T> trainable_parameters();
  nn::Parameter<T>* find(const std::string& name);
  void zero_grad();

  // Standalone stages.
  Matrix<T> cnn_features(const data::Slice& slice) const;
  std::vector<Matrix<T>> rnn_sequence(const std::vector<Matrix<T>>& steps) const;
  Matrix<T> fuse_and_classify(const std::array<Matrix<T>, data::kNumModalities>& routed) const;

  nn::Backbone<T>& backbone() { return *backbone_; }
  nn::Lstm<T>& rnn() { return lstm_; }

 private:
  struct Routing {
    nn::Linear<T> linear;
    nn::BatchNorm<T> bn;
  };

  ModelConfig config_;
  std::unique_ptr<nn::Backbone<T>> backbone_;
  nn::Lstm<T> lstm_;
  std::map<std::string, Routing> routing_;
  nn::Linear<T> fusion_;
  nn::Linear<T> output_;
  std::array<nn::Linear<T>, data::kNumModalities> heads_;
};

/// Row-major flattening of the first l rows of a t x V matrix into 1 x (V*t),
/// zeros elsewhere. Throws kInvalidLength unless 1 <= l <= t.
template <typename T>
Matrix<T> mask_and_concat(const Matrix<T>& outputs, int l);

/// 1 x (V*t) multiplicative mask with ones on the first l*V entries.
template <typename T>
Matrix<T> length_mask(int t, int v, int l);

}  // namespace btdnet::network
