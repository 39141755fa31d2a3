#include "btdnet/data/stats.hpp"

#include <algorithm>
#include <fstream>

#include "btdnet/data/png_io.hpp"
#include "btdnet/error.hpp"

namespace btdnet::data {

namespace fs = std::filesystem;

SliceCountTable dataset_stats(const Manifest& manifest) {
  SliceCountTable table;
  table.per_scan.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    for (int m = 0; m < kNumModalities; ++m) table.totals[m] += e.counts[m];
    table.per_scan.push_back({e.scan_id, e.counts});
  }
  return table;
}

namespace {

// Four bars, one colour per modality, scaled to the largest total.
void render_bar_chart(const fs::path& path, const std::array<long, kNumModalities>& totals) {
  constexpr int kRows = 240;
  constexpr int kCols = 320;
  constexpr int kMargin = 20;
  constexpr std::array<std::array<uint8_t, 3>, kNumModalities> kColours = {
      {{{31, 119, 180}}, {{255, 127, 14}}, {{44, 160, 44}}, {{214, 39, 40}}}};
  std::vector<uint8_t> rgb(static_cast<size_t>(kRows) * kCols * 3, 255);
  const long peak = std::max<long>(1, *std::max_element(totals.begin(), totals.end()));
  const int slot = (kCols - 2 * kMargin) / kNumModalities;
  for (int m = 0; m < kNumModalities; ++m) {
    const int height = static_cast<int>((kRows - 2 * kMargin) * static_cast<double>(totals[m]) / peak);
    const int x0 = kMargin + m * slot + slot / 6;
    const int x1 = kMargin + (m + 1) * slot - slot / 6;
    for (int y = kRows - kMargin - height; y < kRows - kMargin; ++y) {
      for (int x = x0; x < x1; ++x) {
        auto* px = &rgb[(static_cast<size_t>(y) * kCols + x) * 3];
        std::copy(kColours[m].begin(), kColours[m].end(), px);
      }
    }
  }
  for (int x = kMargin / 2; x < kCols - kMargin / 2; ++x) {
    auto* px = &rgb[(static_cast<size_t>(kRows - kMargin) * kCols + x) * 3];
    px[0] = px[1] = px[2] = 0;
  }
  write_png_rgb8(path, kRows, kCols, rgb);
}

}  // namespace

void write_slice_report(const SliceCountTable& table, const fs::path& out_dir, bool plot) {
  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "slice_totals.csv");
    if (!out) throw Error(ErrorCode::kIoError, "cannot write slice_totals.csv in " + out_dir.string());
    out << "modality,total\n";
    for (Modality m : kModalities) out << modality_name(m) << ',' << table.totals[index_of(m)] << '\n';
  }
  {
    std::ofstream out(out_dir / "slice_counts.csv");
    if (!out) throw Error(ErrorCode::kIoError, "cannot write slice_counts.csv in " + out_dir.string());
    out << "scan_id,modality,count\n";
    for (const auto& row : table.per_scan) {
      for (Modality m : kModalities) out << row.scan_id << ',' << modality_name(m) << ',' << row.counts[index_of(m)] << '\n';
    }
  }
  if (plot) render_bar_chart(out_dir / "slices.png", table.totals);
}

}  // namespace btdnet::data
