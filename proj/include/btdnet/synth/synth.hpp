#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "btdnet/data/dataset.hpp"
#include "btdnet/data/preprocess.hpp"
#include "btdnet/data/types.hpp"

namespace btdnet::synth {

struct SynthConfig {
  int num_scans = 20;
  int image_size = 64;
  /// 0 makes both classes identically distributed; 1 is the default signal.
  double separability = 1.0;
  double positive_fraction = 0.5;
  uint64_t seed = 0;
  /// Raw slice-count range per modality, inclusive. The first and last slice
  /// of every volume are blank and disappear in preprocessing.
  std::array<std::pair<int, int>, data::kNumModalities> slice_range = {{{10, 18}, {8, 16}, {8, 16}, {10, 18}}};

  /// Throws kInvalidParameter.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Ground truth for one generated scan.
struct BlobRecord {
  std::string scan_id;
  int label = 0;
  std::array<int, data::kNumModalities> counts{};
  double center_row = 0.0;  // pixels
  double center_col = 0.0;
  double center_depth = 0.0;  // fraction of the volume, in (0, 1)
  double radius = 0.0;        // pixels, in-plane at the blob centre
  double brightness = 0.0;    // multiple of the tissue intensity
  double signal_radius = 0.0;  // blob planted in FLAIR and T2
  double signal_brightness = 0.0;
};

struct SynthScan {
  data::Scan scan;  // raw intensities, one channel
  BlobRecord record;
};

/// The deterministic scan `index` of the dataset described by `config`.
SynthScan synthesize_scan(const SynthConfig& config, int index, int label);
/// Label of every scan: round(n * positive_fraction) positives, shuffled.
std::vector<int> synth_labels(const SynthConfig& config);

/// Writes the raw dataset layout, `manifest.json` and `synth_ledger.json`.
/// Throws kIoError when `out_root` is not writable.
data::Manifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_root);

/// Synthesizes and preprocesses every scan in memory; equivalent to
/// generate_synthetic followed by preparation and loading.
data::PreparedDataset prepared_synthetic(const SynthConfig& config, const data::PrepOptions& options = {});

/// Reads `synth_ledger.json` back.
std::vector<BlobRecord> read_ledger(const std::filesystem::path& root);

}  // namespace btdnet::synth
