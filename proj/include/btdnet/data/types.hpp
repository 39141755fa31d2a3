#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace btdnet::data {

enum class Modality : int { kFlair = 0, kT1w = 1, kT1wCE = 2, kT2 = 3 };

inline constexpr int kNumModalities = 4;
inline constexpr std::array<Modality, kNumModalities> kModalities = {
    Modality::kFlair, Modality::kT1w, Modality::kT1wCE, Modality::kT2};

std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);
inline constexpr int index_of(Modality m) { return static_cast<int>(m); }

inline constexpr int kPreparedSize = 224;
inline constexpr int kPreparedChannels = 3;
inline constexpr float kPaddingValue = -1.0F;

/// A single 2-D slice. Only one plane is stored; when `channels` is 3 the
/// slice represents that plane replicated into three identical channels.
struct Slice {
  int rows = 0;
  int cols = 0;
  int channels = 1;
  std::vector<float> plane;

  Slice() = default;
  Slice(int r, int c, int ch, float fill) : rows(r), cols(c), channels(ch), plane(static_cast<size_t>(r) * c, fill) {}

  float at(int r, int c) const { return plane[static_cast<size_t>(r) * cols + c]; }
  float& at(int r, int c) { return plane[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return plane.size(); }

  bool operator==(const Slice&) const = default;
};

/// Ordered slice stack of one modality. Slices at index >= true_length are
/// padding.
struct Volume {
  Modality modality = Modality::kFlair;
  std::vector<Slice> slices;
  int true_length = 0;

  int padded_length() const { return static_cast<int>(slices.size()); }
  bool operator==(const Volume&) const = default;
};

struct Scan {
  std::string scan_id;
  std::array<Volume, kNumModalities> volumes;
  int label = 0;

  Volume& volume(Modality m) { return volumes[index_of(m)]; }
  const Volume& volume(Modality m) const { return volumes[index_of(m)]; }
  std::array<double, 2> one_hot() const { return label == 1 ? std::array{0.0, 1.0} : std::array{1.0, 0.0}; }
  bool operator==(const Scan&) const = default;
};

struct ManifestEntry {
  std::string scan_id;
  int label = 0;
  std::array<int, kNumModalities> counts{};

  std::filesystem::path modality_dir(Modality m) const { return std::filesystem::path(scan_id) / std::string(modality_name(m)); }
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
};

/// Half-open pixel box [top, bottom) x [left, right).
struct Box {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  int height() const { return bottom - top; }
  int width() const { return right - left; }
  long area() const { return static_cast<long>(height()) * width(); }
  bool operator==(const Box&) const = default;
};

Box union_box(const Box& a, const Box& b);

struct IntensityRange {
  float min = 0.0F;
  float max = 0.0F;
};

}  // namespace btdnet::data
