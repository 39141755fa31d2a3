#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "btdnet/network/model.hpp"

namespace btdnet::network {

inline constexpr const char* kCheckpointFormat = "btdnet-ckpt-v1";

struct TensorRecord {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> values;
};

/// File layout: the format line, an 8-byte little-endian header size, a JSON
/// header (format, config, meta, tensor index with byte offsets), then the raw
/// tensor payload in index order.
struct Checkpoint {
  ModelConfig config;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

template <typename T>
Checkpoint snapshot(BtdNet<T>& model, const nlohmann::json& meta = nlohmann::json::object());

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws kCheckpointMismatch for missing, truncated or foreign files.
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(BtdNet<T>& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  write_checkpoint(snapshot(model, meta), path);
}

using TensorFilter = std::function<bool(const std::string&)>;

/// Copies every model tensor accepted by `filter` (all by default) from the
/// checkpoint. Missing names or shape differences throw kCheckpointMismatch.
template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, BtdNet<T>& model, const TensorFilter& filter = {});

/// Builds the model from the embedded config and loads every tensor.
template <typename T>
BtdNet<T> load_model(const std::filesystem::path& path);

/// Throws kCheckpointMismatch unless the architectures agree.
void require_compatible(const ModelConfig& expected, const ModelConfig& found);

}  // namespace btdnet::network
