#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "btdnet/augment/augment.hpp"
#include "btdnet/data/dataset.hpp"
#include "btdnet/network/model.hpp"

namespace btdnet::evaluation {

using Logits = std::array<double, 2>;
/// Logits of one padded scan.
using LogitFn = std::function<Logits(const data::Scan&)>;

/// Mean of the two per-class F1 scores; a class with P + R = 0 scores 0.
/// Throws kShapeMismatch for unequal lengths and kEmptyInput for no samples.
double macro_f1(std::span<const int> predicted, std::span<const int> truth);

/// Class 1 only when its logit is strictly larger.
inline int argmax(const Logits& z) { return z[1] > z[0] ? 1 : 0; }

struct TtaResult {
  std::array<Logits, 4> versions{};
  Logits p_final{};
  int label = 0;
};

/// Forwards {X, F_X, R_X, FR_X} and sums the four logit vectors.
TtaResult tta_predict(const LogitFn& model, const data::Scan& scan, double rotation_deg);

struct ScanPrediction {
  std::string scan_id;
  std::vector<Logits> versions;  // 4 with TTA, otherwise the single forward
  Logits p_final{};
  int label = 0;
  int truth = 0;
};

struct FoldEvaluation {
  double macro_f1 = 0.0;
  std::vector<ScanPrediction> predictions;
};

struct EvalOptions {
  bool use_tta = false;
  double tta_angle = 0.0;
  std::array<int, data::kNumModalities> lengths{};
  data::LengthPolicy policy = data::LengthPolicy::kPermissive;
  std::optional<data::Modality> only;  // materialize a single modality
};

/// Throws kEmptyFold for an empty index list.
FoldEvaluation evaluate_fold(const LogitFn& model, const data::PreparedDataset& dataset, std::span<const int> indices,
                             const EvalOptions& options);

/// One JSON object per scan: scan_id, versions, p_final, label, truth.
void write_predictions(const FoldEvaluation& evaluation, const std::filesystem::path& path);

struct FoldReport {
  std::vector<double> per_fold;
  double mean = 0.0;
  double spread = 0.0;  // max - min
};

/// Throws kEmptyInput for an empty list.
FoldReport aggregate_folds(std::span<const double> scores);

/// Eval-mode forward of one scan; `stream` selects a phase-1 head.
LogitFn model_logits(network::BtdNet<float>& model, std::optional<data::Modality> stream = std::nullopt);

}  // namespace btdnet::evaluation
