#pragma once

#include <filesystem>

#include "btdnet/data/types.hpp"

namespace btdnet::data {

/// Reads `<root>/manifest.json`. Duplicate scan ids or labels outside {0,1}
/// raise kManifestMismatch.
Manifest load_manifest(const std::filesystem::path& root);
void save_manifest(const Manifest& manifest);

/// Loads the raw slice stacks of one manifest entry from `<root>/<scan_id>/<MODALITY>/<idx:05d>.png`.
/// Slices come back single-channel with raw intensities, sorted by numeric index.
Scan load_scan(const ManifestEntry& entry, const std::filesystem::path& root);

/// Full ingest validation: every entry loads and matches its declared counts.
/// Returns the number of scans checked.
int validate_dataset(const Manifest& manifest);

std::filesystem::path slice_filename(int index);

}  // namespace btdnet::data
