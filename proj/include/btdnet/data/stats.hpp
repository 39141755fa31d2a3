#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "btdnet/data/types.hpp"

namespace btdnet::data {

struct SliceCountTable {
  std::array<long, kNumModalities> totals{};
  struct Row {
    std::string scan_id;
    std::array<int, kNumModalities> counts{};
  };
  std::vector<Row> per_scan;
};

/// Slice totals per modality and per-scan counts, straight from the manifest.
SliceCountTable dataset_stats(const Manifest& manifest);

/// Writes slice_totals.csv (modality,total) and slice_counts.csv
/// (scan_id,modality,count) into `out_dir`; with `plot` also slices.png,
/// a bar chart of the per-modality totals.
void write_slice_report(const SliceCountTable& table, const std::filesystem::path& out_dir, bool plot);

}  // namespace btdnet::data
