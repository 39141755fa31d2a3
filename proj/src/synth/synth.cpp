#include "btdnet/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "btdnet/data/ingest.hpp"
#include "btdnet/data/png_io.hpp"
#include "btdnet/error.hpp"

namespace btdnet::synth {

namespace fs = std::filesystem;
using data::Modality;
using nlohmann::json;

namespace {

constexpr double kIntensityScale = 20000.0;
constexpr double kBlobDepthHalf = 0.25;
constexpr std::array<double, data::kNumModalities> kTissueLevel = {0.55, 0.60, 0.65, 0.50};

bool carries_signal(Modality m) { return m == Modality::kFlair || m == Modality::kT2; }

struct Geometry {
  double row = 0, col = 0, semi_row = 0, semi_col = 0;
};

data::Volume render_volume(Modality m, int count, const Geometry& brain, const BlobRecord& blob, int size,
                           std::mt19937_64& rng) {
  const double radius = carries_signal(m) ? blob.signal_radius : blob.radius;
  const double brightness = carries_signal(m) ? blob.signal_brightness : blob.brightness;
  std::normal_distribution<double> noise(0.0, 0.03);
  data::Volume vol;
  vol.modality = m;
  vol.true_length = count;
  const int inner = count - 2;
  for (int k = 0; k < count; ++k) {
    data::Slice s(size, size, 1, 0.0F);
    if (k > 0 && k < count - 1) {
      const double depth = (k - 0.5) / inner;
      const double z = 2.0 * depth - 1.0;
      const double scale = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double dz = (depth - blob.center_depth) / kBlobDepthHalf;
      const double blob_r = std::abs(dz) < 1.0 ? radius * std::sqrt(1.0 - dz * dz) : 0.0;
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const double u = (r - brain.row) / (brain.semi_row * scale);
          const double v = (c - brain.col) / (brain.semi_col * scale);
          const double rr = u * u + v * v;
          if (rr >= 1.0) continue;
          double value = kTissueLevel[data::index_of(m)] * (0.85 + 0.15 * std::cos(std::sqrt(rr) * M_PI)) + noise(rng);
          if (blob_r > 0.0) {
            const double d = std::hypot(r - blob.center_row, c - blob.center_col);
            const double w = std::clamp(blob_r + 0.5 - d, 0.0, 1.0);
            value *= 1.0 + (brightness - 1.0) * w;
          }
          s.at(r, c) = static_cast<float>(std::round(std::clamp(value, 0.01, 3.0) * kIntensityScale));
        }
      }
    }
    vol.slices.push_back(std::move(s));
  }
  return vol;
}

json record_json(const BlobRecord& r) {
  json counts = json::object();
  for (Modality m : data::kModalities) counts[std::string(data::modality_name(m))] = r.counts[data::index_of(m)];
  return {{"scan_id", r.scan_id},
          {"label", r.label},
          {"counts", counts},
          {"center_row", r.center_row},
          {"center_col", r.center_col},
          {"center_depth", r.center_depth},
          {"radius", r.radius},
          {"brightness", r.brightness},
          {"signal_radius", r.signal_radius},
          {"signal_brightness", r.signal_brightness}};
}

}  // namespace

void SynthConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::kInvalidParameter, what);
  };
  require(num_scans > 0, "synth.num_scans must be positive");
  require(image_size >= 16, "synth.image_size must be at least 16");
  require(separability >= 0.0, "synth.separability must be >= 0");
  require(positive_fraction >= 0.0 && positive_fraction <= 1.0, "synth.positive_fraction must lie in [0, 1]");
  for (const auto& [lo, hi] : slice_range) require(lo >= 3 && lo <= hi, "synth slice ranges need 3 <= min <= max");
}

json SynthConfig::to_json() const {
  json ranges = json::object();
  for (Modality m : data::kModalities) {
    const auto& [lo, hi] = slice_range[data::index_of(m)];
    ranges[std::string(data::modality_name(m))] = {lo, hi};
  }
  return {{"num_scans", num_scans},   {"image_size", image_size},
          {"separability", separability}, {"positive_fraction", positive_fraction},
          {"seed", seed},             {"slice_range", ranges}};
}

std::vector<int> synth_labels(const SynthConfig& config) {
  const int n = config.num_scans;
  const int positives = static_cast<int>(std::lround(n * config.positive_fraction));
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + positives, 1);
  std::seed_seq seq{config.seed, uint64_t{0x1abe1}};
  std::mt19937_64 rng(seq);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

SynthScan synthesize_scan(const SynthConfig& config, int index, int label) {
  config.validate();
  std::seed_seq seq{config.seed, static_cast<uint64_t>(index), uint64_t{0x5eed}};
  std::mt19937_64 rng(seq);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int size = config.image_size;
  const double s = config.separability;

  SynthScan out;
  BlobRecord& rec = out.record;
  char id[32];
  std::snprintf(id, sizeof(id), "synth_%05d", index);
  rec.scan_id = id;
  rec.label = label;
  for (Modality m : data::kModalities) {
    const auto& [lo, hi] = config.slice_range[data::index_of(m)];
    rec.counts[data::index_of(m)] = std::uniform_int_distribution<int>(lo, hi)(rng);
  }

  Geometry brain;
  brain.row = size / 2.0 + uniform(-2.0, 2.0);
  brain.col = size / 2.0 + uniform(-2.0, 2.0);
  brain.semi_row = size * uniform(0.36, 0.42);
  brain.semi_col = size * uniform(0.30, 0.36);
  const double angle = uniform(0.0, 2.0 * M_PI);
  const double reach = uniform(0.0, 0.4);
  rec.center_row = brain.row + reach * brain.semi_row * std::sin(angle);
  rec.center_col = brain.col + reach * brain.semi_col * std::cos(angle);
  rec.center_depth = uniform(0.35, 0.65);
  rec.radius = uniform(3.0, 5.0);
  rec.brightness = 1.1;
  if (label == 1) {
    rec.signal_radius = uniform(3.0 + 4.0 * s, 5.0 + 5.0 * s);
    rec.signal_brightness = 1.1 + 0.6 * s;
  } else {
    rec.signal_radius = uniform(3.0, 5.0);
    rec.signal_brightness = 1.1;
  }

  out.scan.scan_id = rec.scan_id;
  out.scan.label = label;
  for (Modality m : data::kModalities) {
    out.scan.volume(m) = render_volume(m, rec.counts[data::index_of(m)], brain, rec, size, rng);
  }
  return out;
}

data::Manifest generate_synthetic(const SynthConfig& config, const fs::path& out_root) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec || !fs::is_directory(out_root)) throw Error(ErrorCode::kIoError, "cannot create " + out_root.string());

  const std::vector<int> labels = synth_labels(config);
  data::Manifest manifest;
  manifest.root = out_root;
  json ledger = json::array();
  for (int i = 0; i < config.num_scans; ++i) {
    const SynthScan synth = synthesize_scan(config, i, labels[i]);
    data::ManifestEntry entry;
    entry.scan_id = synth.record.scan_id;
    entry.label = synth.record.label;
    entry.counts = synth.record.counts;
    for (const data::Volume& vol : synth.scan.volumes) {
      const fs::path dir = out_root / entry.modality_dir(vol.modality);
      fs::create_directories(dir, ec);
      if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string());
      for (int k = 0; k < vol.padded_length(); ++k) {
        const data::Slice& slice = vol.slices[k];
        data::GrayImage16 img{slice.rows, slice.cols, {}};
        img.pixels.reserve(slice.size());
        for (float v : slice.plane) img.pixels.push_back(static_cast<uint16_t>(v));
        data::write_png_gray16(dir / data::slice_filename(k), img);
      }
    }
    manifest.entries.push_back(entry);
    ledger.push_back(record_json(synth.record));
  }
  data::save_manifest(manifest);
  std::ofstream out(out_root / "synth_ledger.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write ledger under " + out_root.string());
  out << json{{"config", config.to_json()}, {"scans", ledger}}.dump(1) << '\n';
  return manifest;
}

data::PreparedDataset prepared_synthetic(const SynthConfig& config, const data::PrepOptions& options) {
  config.validate();
  const std::vector<int> labels = synth_labels(config);
  std::vector<data::Scan> prepared;
  prepared.reserve(config.num_scans);
  for (int i = 0; i < config.num_scans; ++i) {
    const SynthScan synth = synthesize_scan(config, i, labels[i]);
    data::Scan scan;
    scan.scan_id = synth.scan.scan_id;
    scan.label = synth.scan.label;
    for (Modality m : data::kModalities) scan.volume(m) = data::preprocess_volume(synth.scan.volume(m), options).volume;
    prepared.push_back(std::move(scan));
  }
  return data::PreparedDataset::from_scans(prepared);
}

std::vector<BlobRecord> read_ledger(const fs::path& root) {
  std::ifstream in(root / "synth_ledger.json");
  if (!in) throw Error(ErrorCode::kIoError, "no synth_ledger.json under " + root.string());
  std::vector<BlobRecord> out;
  try {
    const json doc = json::parse(in);
    for (const json& j : doc.at("scans")) {
      BlobRecord r;
      r.scan_id = j.at("scan_id").get<std::string>();
      r.label = j.at("label").get<int>();
      for (Modality m : data::kModalities) r.counts[data::index_of(m)] = j.at("counts").at(std::string(data::modality_name(m))).get<int>();
      r.center_row = j.at("center_row").get<double>();
      r.center_col = j.at("center_col").get<double>();
      r.center_depth = j.at("center_depth").get<double>();
      r.radius = j.at("radius").get<double>();
      r.brightness = j.at("brightness").get<double>();
      r.signal_radius = j.at("signal_radius").get<double>();
      r.signal_brightness = j.at("signal_brightness").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIoError, std::string("malformed synth ledger: ") + e.what());
  }
  return out;
}

}  // namespace btdnet::synth
