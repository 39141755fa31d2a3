#include "btdnet/evaluation/evaluate.hpp"

#include <algorithm>
#include <fstream>

#include "btdnet/error.hpp"

namespace btdnet::evaluation {

using nlohmann::json;

double macro_f1(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(predicted.size()) + " predictions vs " +
                                               std::to_string(truth.size()) + " labels");
  }
  if (predicted.empty()) throw Error(ErrorCode::kEmptyInput, "macro F1 of no samples");
  long confusion[2][2] = {{0, 0}, {0, 0}};  // [truth][predicted]
  for (size_t i = 0; i < truth.size(); ++i) {
    if ((truth[i] != 0 && truth[i] != 1) || (predicted[i] != 0 && predicted[i] != 1)) {
      throw Error(ErrorCode::kInvalidParameter, "labels must be 0 or 1");
    }
    ++confusion[truth[i]][predicted[i]];
  }
  double sum = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(confusion[c][c]);
    const double fp = static_cast<double>(confusion[1 - c][c]);
    const double fn = static_cast<double>(confusion[c][1 - c]);
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / 2.0;
}

TtaResult tta_predict(const LogitFn& model, const data::Scan& scan, double rotation_deg) {
  const std::array<data::Scan, 4> versions = augment::tta_versions(scan, rotation_deg);
  TtaResult out;
  for (int v = 0; v < 4; ++v) out.versions[v] = model(versions[v]);
  for (int c = 0; c < 2; ++c) {
    out.p_final[c] = (out.versions[0][c] + out.versions[1][c]) + (out.versions[2][c] + out.versions[3][c]);
  }
  out.label = argmax(out.p_final);
  return out;
}

FoldEvaluation evaluate_fold(const LogitFn& model, const data::PreparedDataset& dataset, std::span<const int> indices,
                             const EvalOptions& options) {
  if (indices.empty()) throw Error(ErrorCode::kEmptyFold, "empty validation fold");
  FoldEvaluation out;
  std::vector<int> predicted;
  std::vector<int> truth;
  for (int idx : indices) {
    const data::Scan scan = dataset.materialize(static_cast<size_t>(idx), options.lengths, options.policy, options.only);
    ScanPrediction p;
    p.scan_id = scan.scan_id;
    p.truth = scan.label;
    if (options.use_tta) {
      const TtaResult r = tta_predict(model, scan, options.tta_angle);
      p.versions.assign(r.versions.begin(), r.versions.end());
      p.p_final = r.p_final;
      p.label = r.label;
    } else {
      p.p_final = model(scan);
      p.versions = {p.p_final};
      p.label = argmax(p.p_final);
    }
    predicted.push_back(p.label);
    truth.push_back(p.truth);
    out.predictions.push_back(std::move(p));
  }
  out.macro_f1 = macro_f1(predicted, truth);
  return out;
}

void write_predictions(const FoldEvaluation& evaluation, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const ScanPrediction& p : evaluation.predictions) {
    out << json{{"scan_id", p.scan_id}, {"versions", p.versions}, {"p_final", p.p_final}, {"label", p.label}, {"truth", p.truth}}.dump()
        << '\n';
  }
}

FoldReport aggregate_folds(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::kEmptyInput, "no fold scores to aggregate");
  FoldReport r;
  r.per_fold.assign(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += s;
  r.mean = sum / static_cast<double>(scores.size());
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  r.spread = *hi - *lo;
  return r;
}

LogitFn model_logits(network::BtdNet<float>& model, std::optional<data::Modality> stream) {
  return [&model, stream](const data::Scan& scan) {
    network::ForwardOptions opts;
    opts.mode = network::Mode::kEval;
    opts.stream = stream;
    const data::Scan* ptr = &scan;
    const network::Matrix<float> z = model.forward(std::span<const data::Scan* const>(&ptr, 1), opts);
    return Logits{static_cast<double>(z(0, 0)), static_cast<double>(z(0, 1))};
  };
}

}  // namespace btdnet::evaluation
