#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "btdnet/data/dataset.hpp"
#include "btdnet/evaluation/evaluate.hpp"
#include "btdnet/network/checkpoint.hpp"
#include "btdnet/training/config.hpp"
#include "btdnet/training/kfold.hpp"
#include "btdnet/training/optim.hpp"

namespace btdnet::training {

struct EpochRecord {
  int epoch = 0;
  int phase = 1;
  int fold = 0;
  std::string stream;  // modality name in phase 1, empty in phase 2
  double train_loss = 0.0;
  double val_f1 = 0.0;
  double lr = 0.0;
  std::string timestamp;
};

/// Newline-delimited JSON training log. A default-constructed log discards.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::filesystem::path& path);
  void write(const EpochRecord& record);

 private:
  std::ofstream out_;
};

struct PhaseResult {
  double best_val_f1 = -1.0;
  int best_epoch = -1;  // 0 is the initialisation
  network::Checkpoint best;
  std::vector<EpochRecord> history;
};

struct FoldContext {
  const data::PreparedDataset* dataset = nullptr;
  const FoldSplit* split = nullptr;
  int fold = 0;
  RunConfig config;
  std::filesystem::path out_dir;  // checkpoints go under <out_dir>/ckpt when set
  TrainLog* log = nullptr;
};

/// Per-step inputs drawn before the loss closure runs, so both SAM passes see
/// the same virtual batch.
struct MixBatch {
  std::vector<data::Scan> real;
  std::vector<data::Scan> virtual_scans;
  std::vector<int> pairing;  // virtual b mixes real b with real pairing[b]
  std::vector<double> lambdas;
};

MixBatch make_mix_batch(std::vector<data::Scan> real, const RunConfig& config, augment::Rng& rng);

/// Total loss of one MixBatch; accumulates gradients into the model.
template <typename T>
double mix_loss_and_grad(network::BtdNet<T>& model, const MixBatch& batch, std::optional<data::Modality> stream,
                         const objective::FocalParams& params, bool update_bn_stats);

/// The same total loss without gradients or running-statistics updates.
template <typename T>
double mix_loss(network::BtdNet<T>& model, const MixBatch& batch, std::optional<data::Modality> stream,
                const objective::FocalParams& params);

/// One pass over `train_indices` in shuffled batches. Returns the mean step loss.
double train_epoch(network::BtdNet<float>& model, std::optional<data::Modality> stream, const data::PreparedDataset& dataset,
                   std::span<const int> train_indices, const RunConfig& config, SgdMomentum<float>& optimizer,
                   augment::Rng& rng);

/// Batches of size batch_size, except that a trailing single scan joins the
/// previous batch.
std::vector<std::vector<int>> make_batches(std::vector<int> indices, int batch_size, augment::Rng& rng);

/// Trains one modality stream through its temporary head. Throws kEmptyFold.
PhaseResult train_phase1(data::Modality modality, const FoldContext& ctx);

/// Builds the fused model from the phase-1 streams (per train.phase2_init)
/// and trains it end to end. Throws kEmptyFold and kCheckpointMismatch.
PhaseResult train_phase2(const FoldContext& ctx, const std::array<network::Checkpoint, data::kNumModalities>& streams,
                         const std::array<double, data::kNumModalities>& stream_f1);

/// Initial phase-2 model assembled from stream checkpoints.
network::BtdNet<float> assemble_phase2(const RunConfig& config,
                                       const std::array<network::Checkpoint, data::kNumModalities>& streams,
                                       const std::array<double, data::kNumModalities>& stream_f1, uint64_t seed);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, int fold, int phase,
                                      std::optional<data::Modality> stream = std::nullopt);

struct FoldResult {
  int fold = 0;
  std::array<double, data::kNumModalities> phase1_f1{};
  double phase2_f1 = 0.0;
  double best_stream_f1() const;
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  evaluation::FoldReport phase1_best;  // best stream per fold
  evaluation::FoldReport phase2;
};

/// Two-phase training on every fold (or only `only_fold`). Writes
/// run_meta.json, train_log.jsonl and checkpoints when out_dir is set.
CrossValidation cross_validate(const data::PreparedDataset& dataset, const RunConfig& config,
                               const std::filesystem::path& out_dir, std::optional<int> only_fold = std::nullopt);

nlohmann::json run_metadata(const RunConfig& config);

}  // namespace btdnet::training
