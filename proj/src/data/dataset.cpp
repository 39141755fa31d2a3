#include "btdnet/data/dataset.hpp"

#include <algorithm>

#include "btdnet/data/ingest.hpp"
#include "btdnet/data/png_io.hpp"
#include "btdnet/error.hpp"

namespace btdnet::data {

PackedVolume pack_volume(const Volume& volume) {
  PackedVolume out;
  out.length = volume.true_length;
  if (out.length == 0) return out;
  out.rows = volume.slices.front().rows;
  out.cols = volume.slices.front().cols;
  out.codes.reserve(static_cast<size_t>(out.length) * out.rows * out.cols);
  for (int i = 0; i < out.length; ++i) {
    const Slice& s = volume.slices[i];
    if (s.rows != out.rows || s.cols != out.cols) {
      throw Error(ErrorCode::kShapeMismatch, "slices of one volume differ in size");
    }
    std::transform(s.plane.begin(), s.plane.end(), std::back_inserter(out.codes), encode_prepared);
  }
  return out;
}

Volume unpack_volume(const PackedVolume& packed, Modality modality) {
  static const std::vector<float> table = [] {
    std::vector<float> t(65536);
    for (size_t c = 0; c < t.size(); ++c) t[c] = decode_prepared(static_cast<uint16_t>(c));
    return t;
  }();
  Volume vol;
  vol.modality = modality;
  vol.true_length = packed.length;
  const size_t area = static_cast<size_t>(packed.rows) * packed.cols;
  vol.slices.reserve(packed.length);
  for (int i = 0; i < packed.length; ++i) {
    Slice s(packed.rows, packed.cols, kPreparedChannels, 0.0F);
    const auto* src = packed.codes.data() + area * i;
    std::transform(src, src + area, s.plane.begin(), [](uint16_t c) { return table[c]; });
    vol.slices.push_back(std::move(s));
  }
  return vol;
}

PreparedDataset PreparedDataset::load(const std::filesystem::path& prep_root) {
  const Manifest manifest = load_manifest(prep_root);
  PreparedDataset ds;
  ds.scans_.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    PackedScan packed;
    packed.scan_id = entry.scan_id;
    packed.label = entry.label;
    for (Modality m : kModalities) {
      PackedVolume& pv = packed.volumes[index_of(m)];
      pv.length = entry.counts[index_of(m)];
      if (pv.length < 1) throw Error(ErrorCode::kMissingModality, entry.scan_id + " has an empty prepared volume");
      for (int i = 0; i < pv.length; ++i) {
        const auto path = prep_root / entry.modality_dir(m) / slice_filename(i);
        if (!std::filesystem::exists(path)) {
          throw Error(ErrorCode::kManifestMismatch, "missing prepared slice " + path.string());
        }
        GrayImage16 img = read_png_gray16(path);
        if (i == 0) {
          pv.rows = img.rows;
          pv.cols = img.cols;
          pv.codes.reserve(static_cast<size_t>(pv.length) * img.rows * img.cols);
        } else if (img.rows != pv.rows || img.cols != pv.cols) {
          throw Error(ErrorCode::kCorruptSlice, "slice size differs within " + path.parent_path().string());
        }
        pv.codes.insert(pv.codes.end(), img.pixels.begin(), img.pixels.end());
      }
    }
    ds.scans_.push_back(std::move(packed));
  }
  return ds;
}

PreparedDataset PreparedDataset::from_scans(std::span<const Scan> prepared) {
  PreparedDataset ds;
  for (const Scan& scan : prepared) {
    PackedScan packed;
    packed.scan_id = scan.scan_id;
    packed.label = scan.label;
    for (Modality m : kModalities) packed.volumes[index_of(m)] = pack_volume(scan.volume(m));
    ds.scans_.push_back(std::move(packed));
  }
  return ds;
}

std::vector<int> PreparedDataset::labels() const {
  std::vector<int> out;
  out.reserve(scans_.size());
  for (const auto& s : scans_) out.push_back(s.label);
  return out;
}

std::vector<std::string> PreparedDataset::scan_ids() const {
  std::vector<std::string> out;
  out.reserve(scans_.size());
  for (const auto& s : scans_) out.push_back(s.scan_id);
  return out;
}

int PreparedDataset::index_of_id(const std::string& scan_id) const {
  for (size_t i = 0; i < scans_.size(); ++i) {
    if (scans_[i].scan_id == scan_id) return static_cast<int>(i);
  }
  return -1;
}

Scan PreparedDataset::materialize(size_t i, const std::array<int, kNumModalities>& lengths, LengthPolicy policy,
                                  std::optional<Modality> only) const {
  const PackedScan& packed = scans_.at(i);
  Scan scan;
  scan.scan_id = packed.scan_id;
  scan.label = packed.label;
  for (Modality m : kModalities) {
    scan.volume(m).modality = m;
    if (only && *only != m) continue;
    scan.volume(m) = pad_volume(unpack_volume(packed.volumes[index_of(m)], m), lengths[index_of(m)], policy);
  }
  return scan;
}

}  // namespace btdnet::data
