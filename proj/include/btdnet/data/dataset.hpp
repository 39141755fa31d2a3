#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "btdnet/data/preprocess.hpp"
#include "btdnet/data/types.hpp"

namespace btdnet::data {

/// Real slices of one prepared volume, kept in the 16-bit cache encoding.
struct PackedVolume {
  int rows = 0;
  int cols = 0;
  int length = 0;
  std::vector<uint16_t> codes;  // length * rows * cols
};

struct PackedScan {
  std::string scan_id;
  int label = 0;
  std::array<PackedVolume, kNumModalities> volumes;
};

/// The prepared cache held in memory. Expanding a scan to float slices and
/// padding it happens per batch.
class PreparedDataset {
 public:
  static PreparedDataset load(const std::filesystem::path& prep_root);
  static PreparedDataset from_scans(std::span<const Scan> prepared);

  size_t size() const { return scans_.size(); }
  const PackedScan& packed(size_t i) const { return scans_[i]; }
  std::vector<int> labels() const;
  std::vector<std::string> scan_ids() const;
  int index_of_id(const std::string& scan_id) const;

  /// Float scan with every volume padded to lengths[m]. With `only` set, the
  /// other volumes are left empty.
  Scan materialize(size_t i, const std::array<int, kNumModalities>& lengths,
                   LengthPolicy policy = LengthPolicy::kPermissive, std::optional<Modality> only = std::nullopt) const;

 private:
  std::vector<PackedScan> scans_;
};

PackedVolume pack_volume(const Volume& volume);
Volume unpack_volume(const PackedVolume& packed, Modality modality);

}  // namespace btdnet::data
