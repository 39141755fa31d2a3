#include "btdnet/data/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "btdnet/data/png_io.hpp"
#include "btdnet/error.hpp"

namespace btdnet::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kFlair: return "FLAIR";
    case Modality::kT1w: return "T1w";
    case Modality::kT1wCE: return "T1wCE";
    case Modality::kT2: return "T2";
  }
  return "?";
}

std::optional<Modality> parse_modality(std::string_view name) {
  for (Modality m : kModalities) {
    if (modality_name(m) == name) return m;
  }
  return std::nullopt;
}

Box union_box(const Box& a, const Box& b) {
  return {std::min(a.top, b.top), std::min(a.left, b.left), std::max(a.bottom, b.bottom), std::max(a.right, b.right)};
}

fs::path slice_filename(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", index);
  return buf;
}

Manifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestMismatch, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::kManifestMismatch, path.string() + ": expected a JSON array");

  Manifest manifest;
  manifest.root = root;
  std::set<std::string> seen;
  for (const auto& item : doc) {
    ManifestEntry entry;
    try {
      entry.scan_id = item.at("scan_id").get<std::string>();
      entry.label = item.at("label").get<int>();
      const auto& counts = item.at("counts");
      for (Modality m : kModalities) {
        const auto key = std::string(modality_name(m));
        entry.counts[index_of(m)] = counts.contains(key) ? counts.at(key).get<int>() : 0;
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kManifestMismatch, path.string() + ": " + e.what());
    }
    if (entry.label != 0 && entry.label != 1) {
      throw Error(ErrorCode::kManifestMismatch, "label of " + entry.scan_id + " is not 0/1");
    }
    if (!seen.insert(entry.scan_id).second) {
      throw Error(ErrorCode::kManifestMismatch, "duplicate scan_id " + entry.scan_id);
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void save_manifest(const Manifest& manifest) {
  json doc = json::array();
  for (const auto& e : manifest.entries) {
    json counts = json::object();
    for (Modality m : kModalities) counts[std::string(modality_name(m))] = e.counts[index_of(m)];
    doc.push_back({{"scan_id", e.scan_id}, {"label", e.label}, {"counts", counts}});
  }
  fs::create_directories(manifest.root);
  const fs::path path = manifest.root / "manifest.json";
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

namespace {

// Numeric stem of `00012.png` -> 12; nullopt for anything else.
std::optional<int> slice_index(const fs::path& p) {
  if (p.extension() != ".png") return std::nullopt;
  const std::string stem = p.stem().string();
  int value = 0;
  auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), value);
  if (ec != std::errc{} || ptr != stem.data() + stem.size()) return std::nullopt;
  return value;
}

}  // namespace

Scan load_scan(const ManifestEntry& entry, const fs::path& root) {
  Scan scan;
  scan.scan_id = entry.scan_id;
  scan.label = entry.label;

  for (Modality m : kModalities) {
    const fs::path dir = root / entry.modality_dir(m);
    if (!fs::is_directory(dir)) {
      throw Error(ErrorCode::kMissingModality, entry.scan_id + " has no " + std::string(modality_name(m)) + " directory");
    }
    std::vector<std::pair<int, fs::path>> files;
    for (const auto& de : fs::directory_iterator(dir)) {
      if (!de.is_regular_file()) continue;
      if (auto idx = slice_index(de.path())) files.emplace_back(*idx, de.path());
    }
    std::sort(files.begin(), files.end());
    const int expected = entry.counts[index_of(m)];
    if (static_cast<int>(files.size()) != expected) {
      throw Error(ErrorCode::kManifestMismatch, entry.scan_id + "/" + std::string(modality_name(m)) + ": manifest says " +
                                                    std::to_string(expected) + " slices, found " +
                                                    std::to_string(files.size()));
    }
    if (files.empty()) {
      throw Error(ErrorCode::kMissingModality, entry.scan_id + "/" + std::string(modality_name(m)) + " is empty");
    }

    Volume& vol = scan.volume(m);
    vol.modality = m;
    vol.slices.reserve(files.size());
    for (const auto& [idx, path] : files) {
      GrayImage16 img = read_png_gray16(path);
      Slice s(img.rows, img.cols, 1, 0.0F);
      std::transform(img.pixels.begin(), img.pixels.end(), s.plane.begin(), [](uint16_t v) { return static_cast<float>(v); });
      vol.slices.push_back(std::move(s));
    }
    vol.true_length = vol.padded_length();
  }
  return scan;
}

int validate_dataset(const Manifest& manifest) {
  int n = 0;
  for (const auto& entry : manifest.entries) {
    (void)load_scan(entry, manifest.root);
    ++n;
  }
  return n;
}

}  // namespace btdnet::data
