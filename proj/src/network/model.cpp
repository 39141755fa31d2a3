#include "btdnet/network/model.hpp"

#include <algorithm>

#include "btdnet/error.hpp"

namespace btdnet::network {

using data::Modality;
using data::kNumModalities;
using nlohmann::json;

// ---------------------------------------------------------------- ModelConfig

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::kConfigError, what);
  };
  require(rnn_units > 0, "network.rnn_units must be positive");
  require(routing_units > 0, "network.routing_units must be positive");
  require(fusion_units > 0, "network.fusion_units must be positive");
  require(num_classes == 2, "network.num_classes must be 2");
  for (Modality m : data::kModalities) {
    require(length(m) > 0, "network.t_" + std::string(data::modality_name(m)) + " must be positive");
  }
  require(backbone.feature_dim == nn::backbone_feature_dim(backbone.kind),
          "feature_dim " + std::to_string(backbone.feature_dim) + " does not match backbone " +
              std::string(nn::backbone_name(backbone.kind)));
}

std::string ModelConfig::routing_group(Modality m) const {
  if (per_modality_routing) return "routing." + std::string(data::modality_name(m));
  return "routing.t" + std::to_string(length(m));
}

std::vector<std::string> ModelConfig::routing_groups() const {
  std::vector<std::string> groups;
  for (Modality m : data::kModalities) {
    const std::string g = routing_group(m);
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  return groups;
}

json ModelConfig::to_json() const {
  json lengths_json = json::object();
  for (Modality m : data::kModalities) lengths_json[std::string(data::modality_name(m))] = length(m);
  return {
      {"backbone",
       {{"kind", std::string(nn::backbone_name(backbone.kind))},
        {"feature_dim", backbone.feature_dim},
        {"weights_path", backbone.weights_path}}},
      {"rnn_units", rnn_units},
      {"routing_units", routing_units},
      {"fusion_units", fusion_units},
      {"lengths", lengths_json},
      {"num_classes", num_classes},
      {"per_modality_routing", per_modality_routing},
  };
}

ModelConfig ModelConfig::from_json(const json& j) {
  try {
    ModelConfig c;
    const json& b = j.at("backbone");
    c.backbone.kind = nn::parse_backbone(b.at("kind").get<std::string>());
    c.backbone.feature_dim = b.at("feature_dim").get<int>();
    c.backbone.weights_path = b.value("weights_path", std::string());
    c.rnn_units = j.at("rnn_units").get<int>();
    c.routing_units = j.at("routing_units").get<int>();
    c.fusion_units = j.at("fusion_units").get<int>();
    for (Modality m : data::kModalities) {
      c.lengths[data::index_of(m)] = j.at("lengths").at(std::string(data::modality_name(m))).get<int>();
    }
    c.num_classes = j.at("num_classes").get<int>();
    c.per_modality_routing = j.value("per_modality_routing", false);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("malformed model config: ") + e.what());
  }
}

// ---------------------------------------------------------------- masking

template <typename T>
Matrix<T> length_mask(int t, int v, int l) {
  Matrix<T> mask = Matrix<T>::Zero(1, static_cast<Eigen::Index>(t) * v);
  mask.leftCols(static_cast<Eigen::Index>(l) * v).setOnes();
  return mask;
}

template <typename T>
Matrix<T> mask_and_concat(const Matrix<T>& outputs, int l) {
  const int t = static_cast<int>(outputs.rows());
  const int v = static_cast<int>(outputs.cols());
  if (l < 1 || l > t) {
    throw Error(ErrorCode::kInvalidLength, "true length " + std::to_string(l) + " outside [1, " + std::to_string(t) + "]");
  }
  // row-major storage makes the flattening a plain copy
  const Matrix<T> flat = Eigen::Map<const Matrix<T>>(outputs.data(), 1, static_cast<Eigen::Index>(t) * v);
  return flat.cwiseProduct(length_mask<T>(t, v, l));
}

// ---------------------------------------------------------------- BtdNet

template <typename T>
struct BtdNet<T>::Tape {
  struct Group {
    std::string name;
    std::vector<Modality> members;
    Matrix<T> input;  // stacked masked rows of the members, in member order
    Matrix<T> pre;    // after batch norm, before GELU
    typename nn::BatchNorm<T>::Cache bn;
  };

  ForwardOptions options;
  int batch = 0;
  int rows = 0;
  int cols = 0;
  std::vector<Modality> active;
  std::unique_ptr<typename nn::Backbone<T>::Tape> cnn;
  int unique = 0;
  std::array<std::vector<int>, kNumModalities> slot;  // b * t + k -> backbone row
  std::array<typename nn::Lstm<T>::Cache, kNumModalities> lstm;
  std::array<Matrix<T>, kNumModalities> mask;
  std::vector<Group> groups;
  std::array<Matrix<T>, kNumModalities> routed;
  Matrix<T> fusion_in;
  Matrix<T> fusion_pre;
  Matrix<T> fused;
};

template <typename T>
void BtdNet<T>::TapeDeleter::operator()(Tape* tape) const {
  delete tape;
}

template <typename T>
BtdNet<T>::BtdNet(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.backbone.feature_dim;
  const int v = config_.rnn_units;
  const int vr = config_.routing_units;
  backbone_ = nn::make_backbone<T>(config_.backbone.kind, "cnn");
  lstm_ = nn::Lstm<T>("rnn", d, v);
  for (Modality m : data::kModalities) {
    const std::string g = config_.routing_group(m);
    if (routing_.count(g) == 0) {
      routing_.emplace(g, Routing{nn::Linear<T>(g + ".linear", v * config_.length(m), vr), nn::BatchNorm<T>(g + ".bn", vr)});
    }
    heads_[data::index_of(m)] = nn::Linear<T>("head." + std::string(data::modality_name(m)), vr, config_.num_classes);
  }
  fusion_ = nn::Linear<T>("fusion", kNumModalities * vr, config_.fusion_units);
  output_ = nn::Linear<T>("output", config_.fusion_units, config_.num_classes);
}

template <typename T>
BtdNet<T>::~BtdNet() = default;
template <typename T>
BtdNet<T>::BtdNet(BtdNet&&) noexcept = default;
template <typename T>
BtdNet<T>& BtdNet<T>::operator=(BtdNet&&) noexcept = default;

template <typename T>
void BtdNet<T>::init(nn::Rng& rng) {
  backbone_->init(rng);
  lstm_.init(rng);
  for (auto& [name, r] : routing_) r.linear.init(rng);
  fusion_.init(rng);
  output_.init(rng);
  for (auto& h : heads_) h.init(rng);
}

template <typename T>
nn::ParamList<T> BtdNet<T>::parameters() {
  nn::ParamList<T> out;
  backbone_->collect(out);
  lstm_.collect(out);
  for (auto& [name, r] : routing_) {
    r.linear.collect(out);
    r.bn.collect(out);
  }
  fusion_.collect(out);
  output_.collect(out);
  for (auto& h : heads_) h.collect(out);
  return out;
}

template <typename T>
nn::ParamList<T> BtdNet<T>::trainable_parameters() {
  nn::ParamList<T> out;
  for (nn::Parameter<T>* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

template <typename T>
nn::Parameter<T>* BtdNet<T>::find(const std::string& name) {
  for (nn::Parameter<T>* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename T>
void BtdNet<T>::zero_grad() {
  for (nn::Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
Matrix<T> BtdNet<T>::cnn_features(const data::Slice& slice) const {
  const data::Slice* ptr = &slice;
  return backbone_->forward(std::span<const data::Slice* const>(&ptr, 1), nullptr);
}

template <typename T>
std::vector<Matrix<T>> BtdNet<T>::rnn_sequence(const std::vector<Matrix<T>>& steps) const {
  return lstm_.forward(steps, nullptr);
}

template <typename T>
Matrix<T> BtdNet<T>::fuse_and_classify(const std::array<Matrix<T>, kNumModalities>& routed) const {
  const Eigen::Index vr = config_.routing_units;
  Matrix<T> concat(routed[0].rows(), kNumModalities * vr);
  for (int m = 0; m < kNumModalities; ++m) concat.middleCols(m * vr, vr) = routed[m];
  return output_.forward(nn::gelu(fusion_.forward(concat)));
}

template <typename T>
Matrix<T> BtdNet<T>::forward(std::span<const data::Scan* const> batch, const ForwardOptions& options,
                             TapePtr* tape_out, ForwardTrace<T>* trace) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyInput, "empty batch");
  const bool train = options.mode == Mode::kTrain;
  const bool dedup = options.dedup && !options.input_grads;
  const int b_count = static_cast<int>(batch.size());
  const int v = config_.rnn_units;
  const Eigen::Index vr = config_.routing_units;

  TapePtr tape(new Tape);
  tape->options = options;
  tape->batch = b_count;
  if (options.stream) {
    tape->active = {*options.stream};
  } else {
    tape->active.assign(data::kModalities.begin(), data::kModalities.end());
  }

  // Gather the slices for a single backbone pass.
  std::vector<const data::Slice*> slices;
  for (Modality m : tape->active) {
    const int t = config_.length(m);
    auto& slot = tape->slot[data::index_of(m)];
    slot.assign(static_cast<size_t>(b_count) * t, -1);
    for (int b = 0; b < b_count; ++b) {
      const data::Volume& vol = batch[b]->volume(m);
      if (vol.padded_length() != t) {
        throw Error(ErrorCode::kShapeMismatch, batch[b]->scan_id + " " + std::string(data::modality_name(m)) +
                                                   " has " + std::to_string(vol.padded_length()) +
                                                   " slices, expected " + std::to_string(t));
      }
      if (vol.true_length < 1 || vol.true_length > t) {
        throw Error(ErrorCode::kInvalidLength, batch[b]->scan_id + " " + std::string(data::modality_name(m)) +
                                                   " true length " + std::to_string(vol.true_length));
      }
      for (int k = 0; k < t; ++k) {
        if (dedup && k > 0 && vol.slices[k] == vol.slices[k - 1]) {
          slot[static_cast<size_t>(b) * t + k] = slot[static_cast<size_t>(b) * t + k - 1];
        } else {
          slot[static_cast<size_t>(b) * t + k] = static_cast<int>(slices.size());
          slices.push_back(&vol.slices[k]);
        }
      }
    }
  }
  tape->unique = static_cast<int>(slices.size());
  tape->rows = slices.front()->rows;
  tape->cols = slices.front()->cols;
  const Matrix<T> features = backbone_->forward(slices, tape_out != nullptr ? &tape->cnn : nullptr);

  // Shared recurrent pass per modality, then the length mask.
  std::array<Matrix<T>, kNumModalities> masked;
  for (Modality m : tape->active) {
    const int mi = data::index_of(m);
    const int t = config_.length(m);
    const auto& slot = tape->slot[mi];
    std::vector<Matrix<T>> steps(t, Matrix<T>(b_count, features.cols()));
    for (int k = 0; k < t; ++k) {
      for (int b = 0; b < b_count; ++b) steps[k].row(b) = features.row(slot[static_cast<size_t>(b) * t + k]);
    }
    const std::vector<Matrix<T>> hidden = lstm_.forward(steps, tape_out != nullptr ? &tape->lstm[mi] : nullptr);

    Matrix<T> flat(b_count, static_cast<Eigen::Index>(t) * v);
    Matrix<T> mask(b_count, static_cast<Eigen::Index>(t) * v);
    for (int b = 0; b < b_count; ++b) {
      for (int k = 0; k < t; ++k) flat.block(b, static_cast<Eigen::Index>(k) * v, 1, v) = hidden[k].row(b);
      mask.row(b) = length_mask<T>(t, v, batch[b]->volume(m).true_length);
    }
    masked[mi] = flat.cwiseProduct(mask);
    tape->mask[mi] = std::move(mask);
    if (trace != nullptr) {
      trace->rnn[mi].assign(b_count, Matrix<T>(t, v));
      for (int b = 0; b < b_count; ++b) {
        for (int k = 0; k < t; ++k) trace->rnn[mi][b].row(k) = hidden[k].row(b);
      }
      trace->masked[mi] = masked[mi];
    }
  }

  // Routing: affine, batch norm over the group's rows, GELU.
  std::array<Matrix<T>, kNumModalities> routed;
  for (const std::string& g : config_.routing_groups()) {
    typename Tape::Group group;
    group.name = g;
    for (Modality m : tape->active) {
      if (config_.routing_group(m) == g) group.members.push_back(m);
    }
    if (group.members.empty()) continue;
    const Eigen::Index width = masked[data::index_of(group.members.front())].cols();
    group.input.resize(static_cast<Eigen::Index>(group.members.size()) * b_count, width);
    for (size_t i = 0; i < group.members.size(); ++i) {
      group.input.middleRows(static_cast<Eigen::Index>(i) * b_count, b_count) = masked[data::index_of(group.members[i])];
    }
    Routing& r = routing_.at(g);
    group.pre = r.bn.forward(r.linear.forward(group.input), train, train && options.update_bn_stats, group.bn);
    const Matrix<T> out = nn::gelu(group.pre);
    for (size_t i = 0; i < group.members.size(); ++i) {
      routed[data::index_of(group.members[i])] = out.middleRows(static_cast<Eigen::Index>(i) * b_count, b_count);
    }
    tape->groups.push_back(std::move(group));
  }
  for (Modality m : tape->active) {
    tape->routed[data::index_of(m)] = routed[data::index_of(m)];
  }

  Matrix<T> logits;
  if (options.stream) {
    logits = heads_[data::index_of(*options.stream)].forward(routed[data::index_of(*options.stream)]);
  } else {
    tape->fusion_in.resize(b_count, kNumModalities * vr);
    for (int m = 0; m < kNumModalities; ++m) tape->fusion_in.middleCols(m * vr, vr) = routed[m];
    tape->fusion_pre = fusion_.forward(tape->fusion_in);
    tape->fused = nn::gelu(tape->fusion_pre);
    logits = output_.forward(tape->fused);
  }

  if (trace != nullptr) {
    trace->routed = routed;
    trace->fused = tape->fused;
    trace->logits = logits;
  }
  if (tape_out != nullptr) *tape_out = std::move(tape);
  return logits;
}

template <typename T>
void BtdNet<T>::backward(Tape& tape, const Matrix<T>& d_logits, InputGradients<T>* input_grads) {
  if (input_grads != nullptr && !tape.options.input_grads) {
    throw Error(ErrorCode::kInvalidParameter, "input gradients need a forward pass with input_grads set");
  }
  const int b_count = tape.batch;
  const int v = config_.rnn_units;
  const Eigen::Index vr = config_.routing_units;

  std::array<Matrix<T>, kNumModalities> d_routed;
  if (tape.options.stream) {
    const int mi = data::index_of(*tape.options.stream);
    d_routed[mi] = heads_[mi].backward(tape.routed[mi], d_logits);
  } else {
    const Matrix<T> d_fused = output_.backward(tape.fused, d_logits);
    const Matrix<T> d_in = fusion_.backward(tape.fusion_in, nn::gelu_backward(tape.fusion_pre, d_fused));
    for (int m = 0; m < kNumModalities; ++m) d_routed[m] = d_in.middleCols(m * vr, vr);
  }

  std::array<Matrix<T>, kNumModalities> d_masked;
  for (typename Tape::Group& group : tape.groups) {
    Matrix<T> d_out(group.pre.rows(), group.pre.cols());
    for (size_t i = 0; i < group.members.size(); ++i) {
      d_out.middleRows(static_cast<Eigen::Index>(i) * b_count, b_count) = d_routed[data::index_of(group.members[i])];
    }
    Routing& r = routing_.at(group.name);
    const Matrix<T> d_lin = r.bn.backward(group.bn, nn::gelu_backward(group.pre, d_out));
    const Matrix<T> d_input = r.linear.backward(group.input, d_lin);
    for (size_t i = 0; i < group.members.size(); ++i) {
      d_masked[data::index_of(group.members[i])] = d_input.middleRows(static_cast<Eigen::Index>(i) * b_count, b_count);
    }
  }

  if (input_grads != nullptr) {
    input_grads->rnn.assign(b_count, {});
    input_grads->pixels.assign(b_count, {});
  }
  Matrix<T> d_features = Matrix<T>::Zero(tape.unique, backbone_->feature_dim());
  for (Modality m : tape.active) {
    const int mi = data::index_of(m);
    const int t = config_.length(m);
    const Matrix<T> d_flat = d_masked[mi].cwiseProduct(tape.mask[mi]);
    std::vector<Matrix<T>> d_hidden(t, Matrix<T>(b_count, v));
    for (int k = 0; k < t; ++k) d_hidden[k] = d_flat.middleCols(static_cast<Eigen::Index>(k) * v, v);
    if (input_grads != nullptr) {
      for (int b = 0; b < b_count; ++b) {
        input_grads->rnn[b][mi] = Eigen::Map<const Matrix<T>>(d_flat.row(b).eval().data(), t, v);
      }
    }
    const std::vector<Matrix<T>> d_steps = lstm_.backward(tape.lstm[mi], d_hidden);
    const auto& slot = tape.slot[mi];
    for (int k = 0; k < t; ++k) {
      for (int b = 0; b < b_count; ++b) d_features.row(slot[static_cast<size_t>(b) * t + k]) += d_steps[k].row(b);
    }
  }

  const Matrix<T> d_pixels = backbone_->backward(*tape.cnn, d_features, input_grads != nullptr);
  if (input_grads != nullptr) {
    for (Modality m : tape.active) {
      const int mi = data::index_of(m);
      const int t = config_.length(m);
      for (int b = 0; b < b_count; ++b) {
        auto& planes = input_grads->pixels[b][mi];
        planes.resize(t);
        for (int k = 0; k < t; ++k) {
          const auto row = d_pixels.row(tape.slot[mi][static_cast<size_t>(b) * t + k]);
          planes[k].assign(row.data(), row.data() + row.size());
        }
      }
    }
  }
}

template class BtdNet<float>;
template class BtdNet<double>;
template Matrix<float> mask_and_concat<float>(const Matrix<float>&, int);
template Matrix<double> mask_and_concat<double>(const Matrix<double>&, int);
template Matrix<float> length_mask<float>(int, int, int);
template Matrix<double> length_mask<double>(int, int, int);

}  // namespace btdnet::network
