#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <queue>
#include <random>

#include "btdnet/data/dataset.hpp"
#include "btdnet/data/ingest.hpp"
#include "btdnet/data/png_io.hpp"
#include "btdnet/data/preprocess.hpp"
#include "btdnet/data/stats.hpp"
#include "btdnet/error.hpp"
#include "btdnet/synth/synth.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace btdnet;
using namespace btdnet::data;
using btdnet::testing::TempDir;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no btdnet::Error thrown";
  return ErrorCode::kIoError;
}

void write_slice(const fs::path& dir, int index, int rows, int cols, uint16_t value) {
  fs::create_directories(dir);
  GrayImage16 img{rows, cols, std::vector<uint16_t>(static_cast<size_t>(rows) * cols, value)};
  write_png_gray16(dir / slice_filename(index), img);
}

/// Tiny on-disk dataset: one scan with 3/2/2/4 slices of 8x6 pixels.
Manifest tiny_dataset(const fs::path& root) {
  Manifest m;
  m.root = root;
  ManifestEntry e{"s0", 1, {3, 2, 2, 4}};
  for (Modality mod : kModalities) {
    for (int i = 0; i < e.counts[index_of(mod)]; ++i) write_slice(root / e.modality_dir(mod), i, 8, 6, 100 * (i + 1));
  }
  m.entries.push_back(e);
  save_manifest(m);
  return m;
}

Slice square_slice(int size, int top, int left, int side, float value) {
  Slice s(size, size, 1, 0.0F);
  for (int r = top; r < top + side; ++r) {
    for (int c = left; c < left + side; ++c) s.at(r, c) = value;
  }
  return s;
}

/// Largest 4-connected component above `threshold`, by plain BFS.
std::optional<Box> bfs_largest(const Slice& s, float threshold) {
  std::vector<int> seen(s.size(), 0);
  long best = 0;
  Box best_box;
  for (int r0 = 0; r0 < s.rows; ++r0) {
    for (int c0 = 0; c0 < s.cols; ++c0) {
      if (seen[r0 * s.cols + c0] || s.at(r0, c0) <= threshold) continue;
      std::queue<std::pair<int, int>> q;
      q.push({r0, c0});
      seen[r0 * s.cols + c0] = 1;
      long n = 0;
      Box b{r0, c0, r0 + 1, c0 + 1};
      while (!q.empty()) {
        auto [r, c] = q.front();
        q.pop();
        ++n;
        b = union_box(b, Box{r, c, r + 1, c + 1});
        const int dr[] = {1, -1, 0, 0};
        const int dc[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int rr = r + dr[k], cc = c + dc[k];
          if (rr < 0 || cc < 0 || rr >= s.rows || cc >= s.cols) continue;
          if (seen[rr * s.cols + cc] || s.at(rr, cc) <= threshold) continue;
          seen[rr * s.cols + cc] = 1;
          q.push({rr, cc});
        }
      }
      if (n > best) {
        best = n;
        best_box = b;
      }
    }
  }
  if (best == 0) return std::nullopt;
  return best_box;
}

}  // namespace

TEST(Ingest, LoadsSlicesWithDeclaredCounts) {
  TempDir tmp("ingest");
  const Manifest m = tiny_dataset(tmp.path());
  const Manifest back = load_manifest(tmp.path());
  ASSERT_EQ(back.entries.size(), 1U);
  EXPECT_EQ(back.entries[0].counts, (std::array<int, 4>{3, 2, 2, 4}));
  const Scan scan = load_scan(back.entries[0], back.root);
  EXPECT_EQ(scan.label, 1);
  EXPECT_EQ(scan.volume(Modality::kT2).true_length, 4);
  EXPECT_EQ(scan.volume(Modality::kT2).slices[3].rows, 8);
  EXPECT_EQ(scan.volume(Modality::kT2).slices[3].cols, 6);
  EXPECT_FLOAT_EQ(scan.volume(Modality::kT2).slices[3].at(0, 0), 400.0F);
  EXPECT_EQ(validate_dataset(back), 1);
}

TEST(Ingest, SlicesSortNumerically) {
  TempDir tmp("sort");
  Manifest m;
  m.root = tmp.path();
  ManifestEntry e{"s", 0, {12, 1, 1, 1}};
  for (Modality mod : kModalities) {
    for (int i = 0; i < e.counts[index_of(mod)]; ++i) write_slice(m.root / e.modality_dir(mod), i, 4, 4, i);
  }
  const Scan scan = load_scan(e, m.root);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(scan.volume(Modality::kFlair).slices[i].at(0, 0), i);
}

TEST(Ingest, MissingModalityDirectory) {
  TempDir tmp("missing");
  const Manifest m = tiny_dataset(tmp.path());
  fs::remove_all(tmp.path() / "s0" / "T1w");
  EXPECT_EQ(code_of([&] { load_scan(m.entries[0], m.root); }), ErrorCode::kMissingModality);
}

TEST(Ingest, CountMismatch) {
  TempDir tmp("mismatch");
  Manifest m = tiny_dataset(tmp.path());
  m.entries[0].counts[0] = 5;
  EXPECT_EQ(code_of([&] { load_scan(m.entries[0], m.root); }), ErrorCode::kManifestMismatch);
  EXPECT_EQ(code_of([&] { validate_dataset(m); }), ErrorCode::kManifestMismatch);
}

TEST(Ingest, CorruptSlice) {
  TempDir tmp("corrupt");
  const Manifest m = tiny_dataset(tmp.path());
  std::ofstream(tmp.path() / "s0" / "T2" / slice_filename(1), std::ios::trunc) << "not a png";
  EXPECT_EQ(code_of([&] { load_scan(m.entries[0], m.root); }), ErrorCode::kCorruptSlice);
}

TEST(Ingest, DuplicateIdsRejected) {
  TempDir tmp("dup");
  Manifest m = tiny_dataset(tmp.path());
  m.entries.push_back(m.entries[0]);
  save_manifest(m);
  EXPECT_EQ(code_of([&] { load_manifest(tmp.path()); }), ErrorCode::kManifestMismatch);
}

TEST(Png, SixteenBitRoundTrip) {
  TempDir tmp("png");
  GrayImage16 img{3, 5, {}};
  for (int i = 0; i < 15; ++i) img.pixels.push_back(static_cast<uint16_t>(i * 4369));
  write_png_gray16(tmp.path() / "a.png", img);
  const GrayImage16 back = read_png_gray16(tmp.path() / "a.png");
  EXPECT_EQ(back.rows, 3);
  EXPECT_EQ(back.cols, 5);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Segment, BlankSliceHasNoBrain) {
  EXPECT_FALSE(segment_brain(Slice(32, 32, 1, 0.0F)).has_value());
  EXPECT_FALSE(segment_brain(Slice(32, 32, 1, 7.0F)).has_value());
}

TEST(Segment, SquareGivesTightBox) {
  const Slice s = square_slice(512, 10, 10, 50, 1000.0F);
  const auto box = segment_brain(s, 0.001);
  ASSERT_TRUE(box.has_value());
  EXPECT_EQ(*box, (Box{10, 10, 60, 60}));
  // 2500 / 262144 is below the default 2% floor.
  EXPECT_FALSE(segment_brain(s).has_value());
}

TEST(Segment, LargestComponentMatchesFloodFill) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Slice s(64, 64, 1, 0.0F);
    std::uniform_int_distribution<int> pos(0, 50), side(3, 14);
    for (int blob = 0; blob < 4; ++blob) {
      const int r = pos(rng), c = pos(rng), h = side(rng), w = side(rng);
      for (int i = r; i < std::min(64, r + h); ++i) {
        for (int j = c; j < std::min(64, c + w); ++j) s.at(i, j) = 500.0F;
      }
    }
    const float thr = otsu_threshold(s.plane);
    EXPECT_GE(thr, 0.0F);
    EXPECT_LT(thr, 500.0F);
    const auto expected = bfs_largest(s, thr);
    const auto got = segment_brain(s, 0.0);
    ASSERT_EQ(expected.has_value(), got.has_value());
    if (expected) EXPECT_EQ(*got, *expected);
  }
}

TEST(Filter, DropsBlankEndsKeepsOrder) {
  Volume v;
  for (int i = 0; i < 100; ++i) {
    const bool blank = i < 10 || i >= 90;
    Slice s = blank ? Slice(32, 32, 1, 0.0F) : square_slice(32, 4, 4, 20, 10.0F + i);
    v.slices.push_back(s);
  }
  v.true_length = 100;
  const Volume out = filter_slices(v);
  ASSERT_EQ(out.padded_length(), 80);
  EXPECT_EQ(out.true_length, 80);
  for (int i = 0; i < 80; ++i) EXPECT_EQ(out.slices[i], v.slices[i + 10]);
}

TEST(Filter, AllBlankThrows) {
  const Volume v = btdnet::testing::constant_volume(Modality::kT1w, 5, 16, 16, 0.0F);
  EXPECT_EQ(code_of([&] { filter_slices(v); }), ErrorCode::kEmptyVolume);
}

TEST(Filter, NothingToDrop) {
  Volume v;
  for (int i = 0; i < 6; ++i) v.slices.push_back(square_slice(32, 2, 2, 25, 3.0F));
  v.true_length = 6;
  EXPECT_EQ(filter_slices(v), v);
}

TEST(CropResize, ShapeAndChannels) {
  const Slice s = square_slice(64, 8, 8, 40, 9.0F);
  const Slice out = crop_resize_normalize(s, Box{8, 8, 48, 48}, IntensityRange{0.0F, 9.0F});
  EXPECT_EQ(out.rows, kPreparedSize);
  EXPECT_EQ(out.cols, kPreparedSize);
  EXPECT_EQ(out.channels, 3);
  for (float v : out.plane) EXPECT_EQ(v, 1.0F);
}

TEST(CropResize, ConstantCropMapsToZero) {
  const Slice s(40, 40, 1, 5.0F);
  const Slice out = crop_resize_normalize(s, Box{0, 0, 40, 40});
  for (float v : out.plane) EXPECT_EQ(v, 0.0F);
}

TEST(CropResize, RangeEndpoints) {
  Slice s(224, 224, 1, 0.0F);
  for (int r = 0; r < 224; ++r) {
    for (int c = 0; c < 224; ++c) s.at(r, c) = c < 112 ? 2.0F : 6.0F;
  }
  const Slice out = crop_resize_normalize(s, Box{0, 0, 224, 224});
  EXPECT_EQ(out.at(0, 0), -1.0F);
  EXPECT_EQ(out.at(223, 223), 1.0F);
  EXPECT_EQ(*std::min_element(out.plane.begin(), out.plane.end()), -1.0F);
  EXPECT_EQ(*std::max_element(out.plane.begin(), out.plane.end()), 1.0F);
}

TEST(CropResize, HalvingAveragesCheckerboardBlocks) {
  // 2x2 blocks at 448 halve onto pixel centres exactly between four source pixels.
  Slice s(448, 448, 1, 0.0F);
  for (int r = 0; r < 448; ++r) {
    for (int c = 0; c < 448; ++c) s.at(r, c) = ((r + c) % 2) ? 1.0F : 0.0F;
  }
  const Slice out = crop_resize_normalize(s, Box{0, 0, 448, 448}, IntensityRange{0.0F, 1.0F});
  for (int r = 0; r < 224; ++r) {
    for (int c = 0; c < 224; ++c) ASSERT_NEAR(out.at(r, c), 0.0F, 1e-6) << r << "," << c;
  }
}

TEST(CropResize, DegenerateBoxes) {
  const Slice s(32, 32, 1, 1.0F);
  EXPECT_EQ(code_of([&] { crop_resize_normalize(s, Box{5, 5, 5, 9}); }), ErrorCode::kDegenerateRegion);
  EXPECT_EQ(code_of([&] { crop_resize_normalize(s, Box{0, 0, 33, 10}); }), ErrorCode::kDegenerateRegion);
  EXPECT_EQ(code_of([&] { crop_resize_normalize(s, Box{-1, 0, 10, 10}, {0.0F, 1.0F}); }), ErrorCode::kDegenerateRegion);
}

TEST(Pad, ExactLengthIsIdentity) {
  const Volume v = btdnet::testing::constant_volume(Modality::kT2, 6, 4, 4, 0.5F);
  EXPECT_EQ(pad_volume(v, 6), v);
}

TEST(Pad, AppendsMinusOneSlices) {
  const Volume v = btdnet::testing::constant_volume(Modality::kT2, 3, 4, 4, 0.5F);
  const Volume p = pad_volume(v, 8);
  ASSERT_EQ(p.padded_length(), 8);
  EXPECT_EQ(p.true_length, 3);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(p.slices[i], v.slices[i]);
  for (int i = 3; i < 8; ++i) {
    for (float x : p.slices[i].plane) EXPECT_EQ(x, -1.0F);
  }
}

TEST(Pad, TooLong) {
  Volume v;
  v.modality = Modality::kFlair;
  for (int i = 0; i < 10; ++i) v.slices.push_back(Slice(2, 2, 1, static_cast<float>(i)));
  v.true_length = 10;
  EXPECT_EQ(code_of([&] { pad_volume(v, 6, LengthPolicy::kStrict); }), ErrorCode::kVolumeTooLong);
  const Volume p = pad_volume(v, 6, LengthPolicy::kPermissive);
  ASSERT_EQ(p.padded_length(), 6);
  EXPECT_EQ(p.true_length, 6);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(p.slices[i].at(0, 0), static_cast<float>(i + 2));
}

TEST(Pad, InconsistentLength) {
  Volume v = btdnet::testing::constant_volume(Modality::kFlair, 3, 2, 2, 0.0F);
  v.true_length = 0;
  EXPECT_EQ(code_of([&] { pad_volume(v, 4); }), ErrorCode::kInvalidLength);
}

TEST(Codec, EndpointsExact) {
  EXPECT_EQ(decode_prepared(encode_prepared(-1.0F)), -1.0F);
  EXPECT_EQ(decode_prepared(encode_prepared(1.0F)), 1.0F);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  for (int i = 0; i < 1000; ++i) {
    const float v = u(rng);
    EXPECT_NEAR(decode_prepared(encode_prepared(v)), v, 1.6e-5);
  }
}

TEST(Codec, PackRoundTripIsStable) {
  Volume v;
  v.modality = Modality::kT1wCE;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  for (int k = 0; k < 3; ++k) {
    Slice s(5, 7, 3, 0.0F);
    for (float& x : s.plane) x = decode_prepared(encode_prepared(u(rng)));
    v.slices.push_back(s);
  }
  v.true_length = 3;
  EXPECT_EQ(unpack_volume(pack_volume(v), Modality::kT1wCE), v);
}

TEST(Stats, SumsManifestCounts) {
  Manifest m;
  m.entries = {{"a", 0, {1, 2, 3, 4}}, {"b", 1, {10, 20, 30, 40}}};
  const SliceCountTable t = dataset_stats(m);
  EXPECT_EQ(t.totals, (std::array<long, 4>{11, 22, 33, 44}));
  ASSERT_EQ(t.per_scan.size(), 2U);
  EXPECT_EQ(t.per_scan[1].scan_id, "b");
  EXPECT_EQ(t.per_scan[1].counts, (std::array<int, 4>{10, 20, 30, 40}));
  EXPECT_EQ(dataset_stats(Manifest{}).totals, (std::array<long, 4>{}));
}

TEST(Stats, ReportFiles) {
  TempDir tmp("report");
  Manifest m;
  m.entries = {{"a", 0, {1, 2, 3, 4}}};
  write_slice_report(dataset_stats(m), tmp.path(), true);
  std::ifstream in(tmp.path() / "slice_totals.csv");
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(all.find("FLAIR,1"), std::string::npos);
  EXPECT_NE(all.find("T2,4"), std::string::npos);
  EXPECT_TRUE(fs::exists(tmp.path() / "slice_counts.csv"));
  EXPECT_TRUE(fs::exists(tmp.path() / "slices.png"));
}

TEST(Prep, OnDiskMatchesInMemory) {
  TempDir tmp("prep");
  synth::SynthConfig cfg;
  cfg.num_scans = 3;
  cfg.seed = 5;
  for (auto& r : cfg.slice_range) r = {4, 6};
  const Manifest raw = synth::generate_synthetic(cfg, tmp.path() / "raw");
  const PrepSummary summary = prep_dataset(raw, tmp.path() / "prep");
  EXPECT_EQ(summary.volumes, 12);
  EXPECT_LT(summary.slices_out, summary.slices_in);
  const PreparedDataset disk = PreparedDataset::load(tmp.path() / "prep");
  const PreparedDataset mem = synth::prepared_synthetic(cfg);
  ASSERT_EQ(disk.size(), mem.size());
  const std::array<int, 4> t = {8, 8, 8, 8};
  for (size_t i = 0; i < disk.size(); ++i) EXPECT_EQ(disk.materialize(i, t), mem.materialize(i, t));
}

TEST(Prep, DefaultRootSibling) {
  EXPECT_EQ(default_prep_root("/a/data"), fs::path("/a/data_prep"));
  EXPECT_EQ(default_prep_root("/a/data/"), fs::path("/a/data_prep"));
}

TEST(Materialize, PadsAndSelectsModality) {
  synth::SynthConfig cfg;
  cfg.num_scans = 2;
  for (auto& r : cfg.slice_range) r = {4, 6};
  const PreparedDataset ds = synth::prepared_synthetic(cfg);
  const std::array<int, 4> t = {6, 6, 6, 6};
  const Scan full = ds.materialize(0, t);
  for (Modality m : kModalities) {
    EXPECT_EQ(full.volume(m).padded_length(), 6);
    EXPECT_EQ(full.volume(m).true_length, ds.packed(0).volumes[index_of(m)].length);
  }
  const Scan only = ds.materialize(0, t, LengthPolicy::kPermissive, Modality::kT2);
  EXPECT_EQ(only.volume(Modality::kT2), full.volume(Modality::kT2));
  EXPECT_TRUE(only.volume(Modality::kFlair).slices.empty());
  const std::array<int, 4> short_t = {1, 1, 1, 1};
  EXPECT_EQ(code_of([&] { ds.materialize(0, short_t, LengthPolicy::kStrict); }), ErrorCode::kVolumeTooLong);
}
