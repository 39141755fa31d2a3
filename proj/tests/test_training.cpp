#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "btdnet/error.hpp"
#include "btdnet/synth/synth.hpp"
#include "btdnet/training/config.hpp"
#include "btdnet/training/gradcheck.hpp"
#include "btdnet/training/kfold.hpp"
#include "btdnet/training/optim.hpp"
#include "btdnet/training/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace btdnet;
using namespace btdnet::training;
using data::Modality;

namespace {

void expect_partition(const FoldSplit& split, int n) {
  std::vector<int> all;
  for (const auto& f : split.folds) all.insert(all.end(), f.begin(), f.end());
  std::sort(all.begin(), all.end());
  std::vector<int> expect(n);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);
}

void expect_proportional(const FoldSplit& split, const std::vector<int>& labels) {
  const int k = split.k();
  const double n = static_cast<double>(labels.size());
  for (int cls : {0, 1}) {
    const double total = static_cast<double>(std::count(labels.begin(), labels.end(), cls));
    for (const auto& fold : split.folds) {
      const double in_fold = static_cast<double>(std::count_if(fold.begin(), fold.end(), [&](int i) { return labels[i] == cls; }));
      EXPECT_LE(std::abs(in_fold - total * fold.size() / n), 1.0);
      EXPECT_LE(std::abs(in_fold - total / k), 1.0);
    }
  }
}

/// One scalar parameter with loss theta^2.
struct Quadratic {
  nn::Parameter<double> theta{"theta", 1, 1};
  nn::ParamList<double> params() { return {&theta}; }
  Closure closure() {
    return [this](bool) {
      const double t = theta.value(0, 0);
      theta.grad(0, 0) += 2.0 * t;
      return t * t;
    };
  }
};

}  // namespace

TEST(KFold, TenLabels) {
  const std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const FoldSplit split = stratified_kfold(labels, 5, 0);
  ASSERT_EQ(split.k(), 5);
  expect_partition(split, 10);
  for (const auto& f : split.folds) {
    ASSERT_EQ(f.size(), 2U);
    EXPECT_NE(labels[f[0]], labels[f[1]]);
  }
  const auto train = split.training(2);
  EXPECT_EQ(train.size(), 8U);
  for (int i : split.validation(2)) EXPECT_EQ(std::count(train.begin(), train.end(), i), 0);
}

TEST(KFold, ImbalancedLargeSet) {
  std::vector<int> labels(307, 1);
  labels.resize(585, 0);
  std::mt19937_64 rng(1);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (uint64_t seed : {0, 1, 2}) {
    const FoldSplit split = stratified_kfold(labels, 5, seed);
    expect_partition(split, 585);
    expect_proportional(split, labels);
  }
  EXPECT_EQ(stratified_kfold(labels, 5, 7).folds, stratified_kfold(labels, 5, 7).folds);
  EXPECT_NE(stratified_kfold(labels, 5, 7).folds, stratified_kfold(labels, 5, 8).folds);
}

TEST(KFold, InsufficientClass) {
  const std::vector<int> labels = {0, 0, 0, 0, 0, 0, 1, 1, 1};
  try {
    stratified_kfold(labels, 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientClass);
  }
}

TEST(Sgd, MomentumRecursion) {
  Quadratic q;
  q.theta.value(0, 0) = 1.0;
  SgdMomentum<double> opt(0.1, 0.9);
  double theta = 1.0, buf = 0.0;
  for (int step = 0; step < 20; ++step) {
    q.theta.zero_grad();
    q.closure()(true);
    opt.step(q.params());
    buf = 0.9 * buf + 2.0 * theta;
    theta -= 0.1 * buf;
    EXPECT_NEAR(q.theta.value(0, 0), theta, 1e-15);
  }
}

TEST(Sam, HandValues) {
  Quadratic q;
  q.theta.value(0, 0) = 1.0;
  SgdMomentum<double> plain(0.1, 0.9);
  sam_step(q.params(), q.closure(), plain, 0.0);
  EXPECT_NEAR(q.theta.value(0, 0), 0.8, 1e-12);

  Quadratic r;
  r.theta.value(0, 0) = 1.0;
  SgdMomentum<double> opt(0.1, 0.9);
  const double loss = sam_step(r.params(), r.closure(), opt, 0.1);
  EXPECT_EQ(loss, 1.0);
  EXPECT_NEAR(r.theta.value(0, 0), 0.78, 1e-12);
}

TEST(Sam, RhoZeroSkipsSecondPass) {
  Quadratic q;
  q.theta.value(0, 0) = 3.0;
  int calls = 0;
  const Closure c = [&](bool first) {
    EXPECT_TRUE(first);
    ++calls;
    return q.closure()(first);
  };
  SgdMomentum<double> opt(0.01, 0.9);
  sam_step(q.params(), c, opt, 0.0);
  EXPECT_EQ(calls, 1);
}

TEST(Batches, TrailingSingleJoinsPrevious) {
  augment::Rng rng(3);
  std::vector<int> idx(10);
  std::iota(idx.begin(), idx.end(), 0);
  auto batches = make_batches(idx, 4, rng);
  ASSERT_EQ(batches.size(), 3U);
  EXPECT_EQ(batches[2].size(), 2U);
  idx.resize(9);
  batches = make_batches(idx, 4, rng);
  ASSERT_EQ(batches.size(), 2U);
  EXPECT_EQ(batches[1].size(), 5U);
  std::vector<int> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, idx);
}

TEST(Config, ParseOverridesAndPreset) {
  const RunConfig c = parse_config("# comment\ntrain.lr_phase1 = 0.5\nnetwork.t = 12  # trailing\nloss.reduction = mean\n",
                                   synthetic_config());
  EXPECT_EQ(c.train.lr_phase1, 0.5);
  EXPECT_EQ(c.network.lengths, (std::array<int, 4>{12, 12, 12, 12}));
  EXPECT_EQ(c.loss.reduction, objective::Reduction::kMean);
  const RunConfig d = parse_config("preset = default\n", synthetic_config());
  EXPECT_EQ(d.network.backbone.kind, nn::BackboneKind::kResNet18Gap);
  EXPECT_EQ(d.network.lengths, (std::array<int, 4>{250, 200, 200, 250}));
  const RunConfig s = parse_config("preset = synthetic\nnetwork.t_T2 = 9\n", default_config());
  EXPECT_EQ(s.network.lengths, (std::array<int, 4>{32, 32, 32, 9}));
}

TEST(Config, Errors) {
  for (const char* bad : {"train.nope = 1\n", "train.batch_size = four\n", "no equals sign\n",
                          "train.seed = 1\npreset = default\n", "preset = other\n"}) {
    try {
      parse_config(bad, synthetic_config());
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kConfigError) << bad;
    }
  }
}

TEST(Config, DigestTracksContent) {
  const RunConfig a = synthetic_config();
  RunConfig b = a;
  EXPECT_EQ(a.digest(), b.digest());
  b.train.seed = 99;
  EXPECT_NE(a.digest(), b.digest());
  EXPECT_EQ(a.digest().size(), 16U);
}

TEST(Gradcheck, TinyModelAgrees) {
  GradcheckOptions opts;
  opts.num_params = 24;
  const GradcheckReport r = run_gradcheck(opts);
  EXPECT_EQ(r.entries.size(), 24U);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst()->name;
  EXPECT_TRUE(std::isfinite(r.loss));
}

class TinyRun : public ::testing::Test {
 protected:
  static RunConfig config() {
    RunConfig c = btdnet::testing::tiny_config(3, 10);
    c.train.lr_phase1 = 0.01;
    c.train.lr_phase2 = 0.001;
    c.train.epochs_phase1 = 1;
    c.train.epochs_phase2 = 1;
    c.train.folds = 2;
    return c;
  }
};

TEST_F(TinyRun, ZeroEpochsKeepsInitialisation) {
  RunConfig c = config();
  c.train.epochs_phase1 = 0;
  c.train.epochs_phase2 = 0;
  const data::PreparedDataset ds = synth::prepared_synthetic(c.synth, c.data);
  const FoldSplit split = stratified_kfold(ds.labels(), c.train.folds, c.train.seed);
  FoldContext ctx{&ds, &split, 0, c, {}, nullptr};
  const PhaseResult r = train_phase1(Modality::kFlair, ctx);
  EXPECT_EQ(r.best_epoch, 0);
  EXPECT_TRUE(r.history.empty());
  EXPECT_GE(r.best_val_f1, 0.0);
  EXPECT_EQ(r.best.meta.at("phase"), 1);
}

TEST_F(TinyRun, CrossValidationIsDeterministic) {
  const RunConfig c = config();
  const data::PreparedDataset ds = synth::prepared_synthetic(c.synth, c.data);
  btdnet::testing::TempDir tmp("cv");
  const CrossValidation a = cross_validate(ds, c, tmp.path(), 0);
  const CrossValidation b = cross_validate(ds, c, {}, 0);
  ASSERT_EQ(a.folds.size(), 1U);
  EXPECT_EQ(a.folds[0].phase1_f1, b.folds[0].phase1_f1);
  EXPECT_EQ(a.folds[0].phase2_f1, b.folds[0].phase2_f1);
  EXPECT_TRUE(fs::exists(tmp.path() / "run_meta.json"));
  EXPECT_TRUE(fs::exists(checkpoint_path(tmp.path(), 0, 2)));
  EXPECT_TRUE(fs::exists(checkpoint_path(tmp.path(), 0, 1, Modality::kT2)));
  std::ifstream log(tmp.path() / "train_log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("val_f1"));
    EXPECT_TRUE(j.contains("timestamp"));
    ++lines;
  }
  EXPECT_EQ(lines, 5);
}

TEST_F(TinyRun, AssembleFromBestStream) {
  const RunConfig c = config();
  std::array<network::Checkpoint, 4> streams;
  for (int m = 0; m < 4; ++m) {
    nn::Rng rng(100 + m);
    network::BtdNet<float> model(c.network);
    model.init(rng);
    streams[m] = network::snapshot(model);
  }
  const std::array<double, 4> f1 = {0.2, 0.9, 0.5, 0.1};
  network::BtdNet<float> fused = assemble_phase2(c, streams, f1, 7);
  const auto* src = streams[1].find("rnn.w_hh");
  ASSERT_NE(src, nullptr);
  const auto& got = fused.find("rnn.w_hh")->value;
  for (Eigen::Index i = 0; i < got.size(); ++i) ASSERT_EQ(got.data()[i], static_cast<float>(src->values[i]));
  const auto* conv = streams[1].find("cnn.conv2.weight");
  EXPECT_EQ(fused.find("cnn.conv2.weight")->value.data()[3], static_cast<float>(conv->values[3]));

  RunConfig other = c;
  other.network.rnn_units = c.network.rnn_units + 1;
  nn::Rng rng(1);
  network::BtdNet<float> wrong(other.network);
  wrong.init(rng);
  auto bad = streams;
  bad[2] = network::snapshot(wrong);
  try {
    assemble_phase2(c, bad, f1, 7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheckpointMismatch);
  }
}
