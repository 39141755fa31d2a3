#include "btdnet/data/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "btdnet/data/ingest.hpp"
#include "btdnet/data/png_io.hpp"
#include "btdnet/error.hpp"

namespace btdnet::data {

namespace fs = std::filesystem;

float otsu_threshold(std::span<const float> values) {
  if (values.empty()) return 0.0F;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return static_cast<float>(hi);

  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  const double scale = kBins / (hi - lo);
  for (float v : values) {
    int b = static_cast<int>((v - lo) * scale);
    hist[std::clamp(b, 0, kBins - 1)] += 1.0;
  }

  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];

  double w0 = 0.0;
  double sum0 = 0.0;
  double best = -1.0;
  int best_bin = 0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += hist[k];
    sum0 += k * hist[k];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = k;
    }
  }
  return static_cast<float>(lo + (best_bin + 1) / scale);
}

std::optional<Box> segment_brain(const Slice& slice, double min_area_frac) {
  const int rows = slice.rows;
  const int cols = slice.cols;
  if (rows == 0 || cols == 0) return std::nullopt;
  const float threshold = otsu_threshold(slice.plane);

  std::vector<uint8_t> fg(slice.plane.size());
  bool any = false;
  for (size_t i = 0; i < fg.size(); ++i) {
    fg[i] = slice.plane[i] > threshold ? 1 : 0;
    any = any || fg[i];
  }
  if (!any) return std::nullopt;

  std::vector<int> label(fg.size(), 0);
  std::deque<int> queue;
  long best_area = 0;
  Box best_box;
  int next_label = 0;
  for (int start = 0; start < rows * cols; ++start) {
    if (!fg[start] || label[start] != 0) continue;
    ++next_label;
    long area = 0;
    Box box{rows, cols, 0, 0};
    label[start] = next_label;
    queue.push_back(start);
    while (!queue.empty()) {
      const int idx = queue.front();
      queue.pop_front();
      const int r = idx / cols;
      const int c = idx % cols;
      ++area;
      box.top = std::min(box.top, r);
      box.left = std::min(box.left, c);
      box.bottom = std::max(box.bottom, r + 1);
      box.right = std::max(box.right, c + 1);
      const std::array<std::pair<int, int>, 4> nbrs = {{{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}};
      for (auto [nr, nc] : nbrs) {
        if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
        const int n = nr * cols + nc;
        if (fg[n] && label[n] == 0) {
          label[n] = next_label;
          queue.push_back(n);
        }
      }
    }
    if (area > best_area) {
      best_area = area;
      best_box = box;
    }
  }
  if (static_cast<double>(best_area) < min_area_frac * static_cast<double>(rows) * cols) return std::nullopt;
  return best_box;
}

namespace {

struct Segmented {
  std::vector<int> kept;
  std::vector<Box> boxes;
};

Segmented segment_volume(const Volume& volume, double min_area_frac) {
  Segmented out;
  for (int i = 0; i < volume.true_length; ++i) {
    if (auto box = segment_brain(volume.slices[i], min_area_frac)) {
      out.kept.push_back(i);
      out.boxes.push_back(*box);
    }
  }
  return out;
}

}  // namespace

Volume filter_slices(const Volume& volume, double min_area_frac) {
  const Segmented seg = segment_volume(volume, min_area_frac);
  if (seg.kept.empty()) {
    throw Error(ErrorCode::kEmptyVolume,
                std::string(modality_name(volume.modality)) + " volume has no slice with enough foreground");
  }
  Volume out;
  out.modality = volume.modality;
  out.slices.reserve(seg.kept.size());
  for (int i : seg.kept) out.slices.push_back(volume.slices[i]);
  out.true_length = static_cast<int>(out.slices.size());
  return out;
}

Slice resize_bilinear(const Slice& slice, int rows, int cols) {
  Slice out(rows, cols, slice.channels, 0.0F);
  const double sy = static_cast<double>(slice.rows) / rows;
  const double sx = static_cast<double>(slice.cols) / cols;

  std::vector<int> x0(cols), x1(cols);
  std::vector<double> wx(cols);
  for (int x = 0; x < cols; ++x) {
    double src = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(slice.cols - 1));
    x0[x] = static_cast<int>(std::floor(src));
    x1[x] = std::min(x0[x] + 1, slice.cols - 1);
    wx[x] = src - x0[x];
  }
  for (int y = 0; y < rows; ++y) {
    const double src = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(slice.rows - 1));
    const int y0 = static_cast<int>(std::floor(src));
    const int y1 = std::min(y0 + 1, slice.rows - 1);
    const double wy = src - y0;
    for (int x = 0; x < cols; ++x) {
      const double top = (1.0 - wx[x]) * slice.at(y0, x0[x]) + wx[x] * slice.at(y0, x1[x]);
      const double bot = (1.0 - wx[x]) * slice.at(y1, x0[x]) + wx[x] * slice.at(y1, x1[x]);
      out.at(y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

Slice crop_resize_normalize(const Slice& slice, const Box& box, IntensityRange range) {
  if (box.height() <= 0 || box.width() <= 0 || box.top < 0 || box.left < 0 || box.bottom > slice.rows ||
      box.right > slice.cols) {
    throw Error(ErrorCode::kDegenerateRegion, "crop box [" + std::to_string(box.top) + "," + std::to_string(box.left) +
                                                  "," + std::to_string(box.bottom) + "," + std::to_string(box.right) +
                                                  ") is empty or outside the slice");
  }
  Slice crop(box.height(), box.width(), 1, 0.0F);
  for (int r = 0; r < crop.rows; ++r) {
    for (int c = 0; c < crop.cols; ++c) crop.at(r, c) = slice.at(box.top + r, box.left + c);
  }
  Slice out = resize_bilinear(crop, kPreparedSize, kPreparedSize);
  out.channels = kPreparedChannels;

  const double lo = range.min;
  const double span = static_cast<double>(range.max) - lo;
  for (float& v : out.plane) {
    const double mapped = span > 0.0 ? (v - lo) / span * 2.0 - 1.0 : 0.0;
    v = static_cast<float>(std::clamp(mapped, -1.0, 1.0));
  }
  return out;
}

Slice crop_resize_normalize(const Slice& slice, const Box& box) {
  IntensityRange range{std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest()};
  if (box.height() > 0 && box.width() > 0 && box.bottom <= slice.rows && box.right <= slice.cols && box.top >= 0 &&
      box.left >= 0) {
    for (int r = box.top; r < box.bottom; ++r) {
      for (int c = box.left; c < box.right; ++c) {
        range.min = std::min(range.min, slice.at(r, c));
        range.max = std::max(range.max, slice.at(r, c));
      }
    }
  }
  return crop_resize_normalize(slice, box, range);
}

Volume pad_volume(Volume volume, int t, LengthPolicy policy) {
  const int l = volume.true_length;
  if (l < 1 || l > volume.padded_length()) {
    throw Error(ErrorCode::kInvalidLength, "volume true length " + std::to_string(l) + " is inconsistent");
  }
  Volume out;
  out.modality = volume.modality;
  if (l > t) {
    if (policy == LengthPolicy::kStrict) {
      throw Error(ErrorCode::kVolumeTooLong, std::string(modality_name(volume.modality)) + " volume has " +
                                                 std::to_string(l) + " slices, limit is " + std::to_string(t));
    }
    const int first = (l - t) / 2;
    spdlog::warn("{} volume of {} slices truncated to the central {}", modality_name(volume.modality), l, t);
    out.slices.assign(std::make_move_iterator(volume.slices.begin() + first),
                      std::make_move_iterator(volume.slices.begin() + first + t));
    out.true_length = t;
    return out;
  }
  const Slice& ref = volume.slices.front();
  const Slice pad(ref.rows, ref.cols, ref.channels, kPaddingValue);
  out.slices.reserve(t);
  out.slices.assign(std::make_move_iterator(volume.slices.begin()), std::make_move_iterator(volume.slices.begin() + l));
  out.slices.resize(t, pad);
  out.true_length = l;
  return out;
}

PreparedVolume preprocess_volume(const Volume& raw, const PrepOptions& options) {
  const Segmented seg = segment_volume(raw, options.min_area_frac);
  if (seg.kept.empty()) {
    throw Error(ErrorCode::kEmptyVolume,
                std::string(modality_name(raw.modality)) + " volume has no slice with enough foreground");
  }
  PreparedVolume out;
  out.raw_length = raw.true_length;
  out.kept = seg.kept;
  out.crop = seg.boxes.front();
  for (const Box& b : seg.boxes) out.crop = union_box(out.crop, b);

  out.range = {std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest()};
  for (int i : seg.kept) {
    const Slice& s = raw.slices[i];
    for (int r = out.crop.top; r < out.crop.bottom; ++r) {
      for (int c = out.crop.left; c < out.crop.right; ++c) {
        out.range.min = std::min(out.range.min, s.at(r, c));
        out.range.max = std::max(out.range.max, s.at(r, c));
      }
    }
  }

  out.volume.modality = raw.modality;
  for (int i : seg.kept) {
    Slice s = crop_resize_normalize(raw.slices[i], out.crop, out.range);
    if (options.output_size != kPreparedSize) {
      s = resize_bilinear(s, options.output_size, options.output_size);
    }
    out.volume.slices.push_back(std::move(s));
  }
  out.volume.true_length = out.volume.padded_length();
  return out;
}

uint16_t encode_prepared(float value) {
  const double q = std::round((static_cast<double>(value) + 1.0) * 32767.5);
  return static_cast<uint16_t>(std::clamp(q, 0.0, 65535.0));
}

float decode_prepared(uint16_t code) { return static_cast<float>(code / 32767.5 - 1.0); }

fs::path default_prep_root(const fs::path& root) {
  fs::path clean = root;
  while (!clean.empty() && !clean.has_filename()) clean = clean.parent_path();
  return clean.parent_path() / (clean.filename().string() + "_prep");
}

PrepSummary prep_dataset(const Manifest& raw, const fs::path& out_root, const PrepOptions& options) {
  PrepSummary summary;
  summary.manifest.root = out_root;
  nlohmann::json volumes = nlohmann::json::object();

  for (const ManifestEntry& entry : raw.entries) {
    const Scan scan = load_scan(entry, raw.root);
    ManifestEntry out_entry{entry.scan_id, entry.label, {}};
    nlohmann::json scan_meta = nlohmann::json::object();
    for (Modality m : kModalities) {
      const Volume& vol = scan.volume(m);
      PreparedVolume prep = preprocess_volume(vol, options);
      const fs::path dir = out_root / entry.modality_dir(m);
      fs::create_directories(dir);
      for (int i = 0; i < prep.volume.true_length; ++i) {
        const Slice& s = prep.volume.slices[i];
        GrayImage16 img{s.rows, s.cols, std::vector<uint16_t>(s.plane.size())};
        std::transform(s.plane.begin(), s.plane.end(), img.pixels.begin(), encode_prepared);
        write_png_gray16(dir / slice_filename(i), img);
      }
      out_entry.counts[index_of(m)] = prep.volume.true_length;
      summary.slices_in += prep.raw_length;
      summary.slices_out += prep.volume.true_length;
      ++summary.volumes;
      scan_meta[std::string(modality_name(m))] = {
          {"crop", {prep.crop.top, prep.crop.left, prep.crop.bottom, prep.crop.right}},
          {"range", {prep.range.min, prep.range.max}},
          {"raw_length", prep.raw_length},
          {"length", prep.volume.true_length},
          {"kept", prep.kept},
      };
    }
    volumes[entry.scan_id] = std::move(scan_meta);
    summary.manifest.entries.push_back(std::move(out_entry));
  }

  fs::create_directories(out_root);
  save_manifest(summary.manifest);
  nlohmann::json meta = {
      {"source_root", raw.root.string()},
      {"min_area_frac", options.min_area_frac},
      {"output_size", options.output_size},
      {"segmentation", "otsu+largest-4-connected"},
      {"crop", "per-volume union"},
      {"normalization", "per-volume min/max to [-1,1]"},
      {"encoding", "uint16 = round((v+1)*32767.5)"},
      {"volumes", std::move(volumes)},
  };
  std::ofstream out(out_root / "prep_meta.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write prep_meta.json under " + out_root.string());
  out << meta.dump(1) << '\n';
  return summary;
}

}  // namespace btdnet::data
