#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "btdnet/data/types.hpp"
#include "btdnet/synth/synth.hpp"
#include "btdnet/training/config.hpp"

namespace btdnet::testing {

/// Directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("btdnet_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Small tiny_cnn setup with every t = 8 and raw slice counts 5..10.
inline training::RunConfig tiny_config(uint64_t seed, int scans) {
  training::RunConfig c = training::synthetic_config();
  c.network.lengths.fill(8);
  c.synth.num_scans = scans;
  c.synth.seed = seed;
  for (auto& r : c.synth.slice_range) r = {5, 10};
  return c;
}

inline std::vector<data::Scan> materialize_all(const data::PreparedDataset& ds, const std::array<int, data::kNumModalities>& t) {
  std::vector<data::Scan> out;
  for (size_t i = 0; i < ds.size(); ++i) out.push_back(ds.materialize(i, t));
  return out;
}

inline data::Slice constant_slice(int rows, int cols, float v) { return data::Slice(rows, cols, 1, v); }

inline data::Volume constant_volume(data::Modality m, int length, int rows, int cols, float v) {
  data::Volume vol;
  vol.modality = m;
  vol.true_length = length;
  for (int i = 0; i < length; ++i) vol.slices.push_back(constant_slice(rows, cols, v));
  return vol;
}

}  // namespace btdnet::testing
