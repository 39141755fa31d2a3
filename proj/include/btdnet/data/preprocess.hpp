#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "btdnet/data/types.hpp"

namespace btdnet::data {

inline constexpr double kDefaultMinAreaFrac = 0.02;

/// Otsu threshold over a 256-bin histogram spanning [min, max] of `values`.
/// Pixels strictly above the returned value are foreground. A constant input
/// returns its value, so nothing is foreground.
float otsu_threshold(std::span<const float> values);

/// Tight box around the largest 4-connected foreground component, or nullopt
/// when the component covers less than `min_area_frac` of the slice.
std::optional<Box> segment_brain(const Slice& slice, double min_area_frac = kDefaultMinAreaFrac);

/// Drops slices for which segment_brain finds nothing. Throws kEmptyVolume if
/// nothing survives.
Volume filter_slices(const Volume& volume, double min_area_frac = kDefaultMinAreaFrac);

/// Half-pixel-centre bilinear resize of the plane.
Slice resize_bilinear(const Slice& slice, int rows, int cols);

/// Crops to `box`, resizes to 224x224, maps `range` linearly onto [-1, 1]
/// and marks the result as 3-channel. A zero-width range maps to 0.
Slice crop_resize_normalize(const Slice& slice, const Box& box, IntensityRange range);
/// As above with the range taken from the crop itself.
Slice crop_resize_normalize(const Slice& slice, const Box& box);

enum class LengthPolicy { kStrict, kPermissive };

/// Appends (t - l) constant -1 slices. Longer volumes throw kVolumeTooLong
/// under kStrict and are centre-truncated to t under kPermissive.
Volume pad_volume(Volume volume, int t, LengthPolicy policy = LengthPolicy::kStrict);

struct PrepOptions {
  double min_area_frac = kDefaultMinAreaFrac;
  int output_size = kPreparedSize;
};

struct PreparedVolume {
  Volume volume;
  Box crop;
  IntensityRange range;
  std::vector<int> kept;  // raw indices that survived filtering
  int raw_length = 0;
};

/// Segment, filter, union-crop, resize and normalise one raw volume.
PreparedVolume preprocess_volume(const Volume& raw, const PrepOptions& options = {});

struct PrepSummary {
  Manifest manifest;  // describes the prepared cache
  int volumes = 0;
  int slices_in = 0;
  int slices_out = 0;
};

/// Runs preprocess_volume over every scan and writes `<out_root>/<scan_id>/<MODALITY>/<idx>.png`
/// (16-bit, single plane), `prep_meta.json` and a manifest with the surviving counts.
PrepSummary prep_dataset(const Manifest& raw, const std::filesystem::path& out_root, const PrepOptions& options = {});

/// `<root>_prep` for a dataset root (trailing separators ignored).
std::filesystem::path default_prep_root(const std::filesystem::path& root);

/// Lossless-enough storage of [-1, 1] values in 16 bits; both endpoints round-trip exactly.
uint16_t encode_prepared(float value);
float decode_prepared(uint16_t code);

}  // namespace btdnet::data
