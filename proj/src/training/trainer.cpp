#include "btdnet/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>

#include <spdlog/spdlog.h>

#include "btdnet/error.hpp"

namespace btdnet::training {

namespace fs = std::filesystem;
using data::Modality;
using network::Matrix;
using nlohmann::json;

namespace {

constexpr const char* kCodeVersion = "btdnet 0.1.0";

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

augment::Rng seeded(uint64_t seed, int fold, int phase, int stream) {
  std::seed_seq seq{seed, static_cast<uint64_t>(fold), static_cast<uint64_t>(phase), static_cast<uint64_t>(stream)};
  return augment::Rng(seq);
}

data::LengthPolicy length_policy(const RunConfig& config) {
  return config.strict_length ? data::LengthPolicy::kStrict : data::LengthPolicy::kPermissive;
}

bool has_prefix(const std::string& name, const std::string& prefix) { return name.rfind(prefix, 0) == 0; }

bool is_shared(const std::string& name) { return has_prefix(name, "cnn.") || has_prefix(name, "rnn."); }

void load_backbone_weights(network::BtdNet<float>& model) {
  const std::string& path = model.config().backbone.weights_path;
  if (path.empty()) return;
  const network::Checkpoint ckpt = network::read_checkpoint(path);
  network::apply_checkpoint(ckpt, model, [](const std::string& n) { return has_prefix(n, "cnn."); });
}

double evaluate_plain(network::BtdNet<float>& model, std::optional<Modality> stream, const FoldContext& ctx,
                      std::span<const int> indices) {
  evaluation::EvalOptions opts;
  opts.lengths = ctx.config.network.lengths;
  opts.policy = length_policy(ctx.config);
  opts.only = stream;
  return evaluation::evaluate_fold(evaluation::model_logits(model, stream), *ctx.dataset, indices, opts).macro_f1;
}

struct PhaseSpec {
  int phase = 1;
  std::optional<Modality> stream;
  double lr = 0.0;
  int epochs = 0;
};

PhaseResult run_phase(network::BtdNet<float>& model, const PhaseSpec& spec, const FoldContext& ctx, augment::Rng& rng) {
  const std::vector<int>& val = ctx.split->validation(ctx.fold);
  const std::vector<int> train = ctx.split->training(ctx.fold);
  if (train.empty() || val.empty()) throw Error(ErrorCode::kEmptyFold, "fold " + std::to_string(ctx.fold) + " is empty");
  const std::string stream_name = spec.stream ? std::string(data::modality_name(*spec.stream)) : "";
  const json meta = {{"fold", ctx.fold}, {"phase", spec.phase}, {"stream", stream_name}};

  PhaseResult result;
  result.best_val_f1 = evaluate_plain(model, spec.stream, ctx, val);
  result.best_epoch = 0;
  result.best = network::snapshot(model, meta);

  SgdMomentum<float> optimizer(spec.lr, ctx.config.train.momentum);
  int since_best = 0;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = spec.phase;
    rec.fold = ctx.fold;
    rec.stream = stream_name;
    rec.lr = spec.lr;
    rec.train_loss = train_epoch(model, spec.stream, *ctx.dataset, train, ctx.config, optimizer, rng);
    rec.val_f1 = evaluate_plain(model, spec.stream, ctx, val);
    rec.timestamp = utc_timestamp();
    spdlog::info("fold {} phase {}{}{} epoch {}: loss {:.4f} val F1 {:.4f}", ctx.fold, spec.phase,
                 stream_name.empty() ? "" : " ", stream_name, epoch, rec.train_loss, rec.val_f1);
    if (ctx.log != nullptr) ctx.log->write(rec);
    result.history.push_back(rec);
    if (rec.val_f1 > result.best_val_f1) {
      result.best_val_f1 = rec.val_f1;
      result.best_epoch = epoch;
      result.best = network::snapshot(model, meta);
      since_best = 0;
    } else if (++since_best >= ctx.config.train.patience) {
      break;
    }
  }
  result.best.meta["best_epoch"] = result.best_epoch;
  result.best.meta["val_f1"] = result.best_val_f1;
  if (!ctx.out_dir.empty()) network::write_checkpoint(result.best, checkpoint_path(ctx.out_dir, ctx.fold, spec.phase, spec.stream));
  return result;
}

}  // namespace

// ---------------------------------------------------------------- log

TrainLog::TrainLog(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
}

void TrainLog::write(const EpochRecord& r) {
  if (!out_.is_open()) return;
  json j = {{"epoch", r.epoch}, {"phase", r.phase},   {"fold", r.fold}, {"train_loss", r.train_loss},
            {"val_f1", r.val_f1}, {"lr", r.lr},       {"timestamp", r.timestamp}};
  if (!r.stream.empty()) j["stream"] = r.stream;
  out_ << j.dump() << '\n';
  out_.flush();
}

// ---------------------------------------------------------------- steps

MixBatch make_mix_batch(std::vector<data::Scan> real, const RunConfig& config, augment::Rng& rng) {
  MixBatch batch;
  batch.real = std::move(real);
  if (config.train.geometric) {
    for (data::Scan& s : batch.real) augment::geometric_transform(s, config.augment, rng);
  }
  if (!config.train.mix_augment) return batch;
  const int n = static_cast<int>(batch.real.size());
  batch.pairing = augment::derangement(n, rng);
  for (int b = 0; b < n; ++b) {
    const double lambda = augment::sample_lambda(config.augment.mix_alpha, rng);
    batch.lambdas.push_back(lambda);
    batch.virtual_scans.push_back(augment::mix_scans(batch.real[b], batch.real[batch.pairing[b]], lambda, b, batch.pairing[b]).mixed);
  }
  return batch;
}

namespace {

template <typename T>
double mix_loss_impl(network::BtdNet<T>& model, const MixBatch& batch, std::optional<Modality> stream,
                     const objective::FocalParams& params, bool update_bn_stats, bool with_grad) {
  const int n = static_cast<int>(batch.real.size());
  std::vector<const data::Scan*> ptrs;
  for (const data::Scan& s : batch.real) ptrs.push_back(&s);
  for (const data::Scan& s : batch.virtual_scans) ptrs.push_back(&s);
  std::vector<int> labels;
  for (const data::Scan& s : batch.real) labels.push_back(s.label);

  network::ForwardOptions opts;
  opts.mode = network::Mode::kTrain;
  opts.stream = stream;
  opts.update_bn_stats = update_bn_stats;
  typename network::BtdNet<T>::TapePtr tape;
  const Matrix<T> logits = model.forward(ptrs, opts, with_grad ? &tape : nullptr);

  Matrix<T> d_logits;
  double loss = 0.0;
  if (batch.virtual_scans.empty()) {
    loss = objective::focal_loss(logits, std::span<const int>(labels), params, with_grad ? &d_logits : nullptr);
  } else {
    const Matrix<T> ri = logits.topRows(n);
    const Matrix<T> v = logits.bottomRows(n);
    Matrix<T> rj(n, 2);
    std::vector<int> labels_j(n);
    for (int b = 0; b < n; ++b) {
      rj.row(b) = ri.row(batch.pairing[b]);
      labels_j[b] = labels[batch.pairing[b]];
    }
    Matrix<T> d_v;
    Matrix<T> d_ri;
    Matrix<T> d_rj;
    loss = objective::total_loss(v, ri, rj, std::span<const int>(labels), std::span<const int>(labels_j),
                                 std::span<const double>(batch.lambdas), params, with_grad ? &d_v : nullptr,
                                 with_grad ? &d_ri : nullptr, with_grad ? &d_rj : nullptr)
               .total;
    if (!with_grad) return loss;
    d_logits.resize(2 * n, 2);
    d_logits.topRows(n) = d_ri;
    for (int b = 0; b < n; ++b) d_logits.row(batch.pairing[b]) += d_rj.row(b);
    d_logits.bottomRows(n) = d_v;
  }
  if (with_grad) model.backward(*tape, d_logits);
  return loss;
}

}  // namespace

template <typename T>
double mix_loss_and_grad(network::BtdNet<T>& model, const MixBatch& batch, std::optional<Modality> stream,
                         const objective::FocalParams& params, bool update_bn_stats) {
  return mix_loss_impl(model, batch, stream, params, update_bn_stats, true);
}

template <typename T>
double mix_loss(network::BtdNet<T>& model, const MixBatch& batch, std::optional<Modality> stream,
                const objective::FocalParams& params) {
  return mix_loss_impl(model, batch, stream, params, false, false);
}

std::vector<std::vector<int>> make_batches(std::vector<int> indices, int batch_size, augment::Rng& rng) {
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < indices.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(indices.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i), indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

double train_epoch(network::BtdNet<float>& model, std::optional<Modality> stream, const data::PreparedDataset& dataset,
                   std::span<const int> train_indices, const RunConfig& config, SgdMomentum<float>& optimizer,
                   augment::Rng& rng) {
  const auto batches = make_batches(std::vector<int>(train_indices.begin(), train_indices.end()), config.train.batch_size, rng);
  const nn::ParamList<float> params = model.trainable_parameters();
  double total = 0.0;
  int steps = 0;
  for (const std::vector<int>& idx : batches) {
    if (idx.size() < 2) continue;
    std::vector<data::Scan> real;
    for (int i : idx) real.push_back(dataset.materialize(static_cast<size_t>(i), config.network.lengths, length_policy(config), stream));
    const MixBatch batch = make_mix_batch(std::move(real), config, rng);
    const Closure closure = [&](bool first) { return mix_loss_and_grad(model, batch, stream, config.loss, first); };
    total += sam_step(params, closure, optimizer, config.train.sam_rho);
    ++steps;
  }
  return steps > 0 ? total / steps : 0.0;
}

// ---------------------------------------------------------------- phases

fs::path checkpoint_path(const fs::path& out_dir, int fold, int phase, std::optional<Modality> stream) {
  std::string name = "phase" + std::to_string(phase);
  if (stream) name += "_" + std::string(data::modality_name(*stream));
  return out_dir / "ckpt" / ("fold" + std::to_string(fold)) / (name + "_best.bin");
}

PhaseResult train_phase1(Modality modality, const FoldContext& ctx) {
  augment::Rng rng = seeded(ctx.config.train.seed, ctx.fold, 1, data::index_of(modality));
  network::BtdNet<float> model(ctx.config.network);
  model.init(rng);
  load_backbone_weights(model);
  return run_phase(model, {1, modality, ctx.config.train.lr_phase1, ctx.config.train.epochs_phase1}, ctx, rng);
}

network::BtdNet<float> assemble_phase2(const RunConfig& config, const std::array<network::Checkpoint, data::kNumModalities>& streams,
                                       const std::array<double, data::kNumModalities>& stream_f1, uint64_t seed) {
  augment::Rng rng(seed);
  network::BtdNet<float> model(config.network);
  model.init(rng);
  load_backbone_weights(model);
  if (config.train.phase2_init == Phase2Init::kFresh) return model;
  for (const network::Checkpoint& c : streams) network::require_compatible(config.network, c.config);

  const int best = static_cast<int>(std::max_element(stream_f1.begin(), stream_f1.end()) - stream_f1.begin());
  if (config.train.phase2_init == Phase2Init::kBestStream) {
    network::apply_checkpoint(streams[best], model, is_shared);
  } else {
    for (nn::Parameter<float>* p : model.parameters()) {
      if (!is_shared(p->name)) continue;
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
      for (const network::Checkpoint& c : streams) {
        const network::TensorRecord* t = c.find(p->name);
        if (t == nullptr || t->rows != p->value.rows() || t->cols != p->value.cols()) {
          throw Error(ErrorCode::kCheckpointMismatch, "stream checkpoint lacks " + p->name);
        }
        sum += Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t->values.data(), t->rows, t->cols);
      }
      p->value = (sum / static_cast<double>(streams.size())).cast<float>();
    }
  }
  for (const std::string& group : config.network.routing_groups()) {
    int source = -1;
    for (Modality m : data::kModalities) {
      if (config.network.routing_group(m) != group) continue;
      const int mi = data::index_of(m);
      if (source < 0 || stream_f1[mi] > stream_f1[source]) source = mi;
    }
    const std::string prefix = group + ".";
    network::apply_checkpoint(streams[source], model, [&prefix](const std::string& n) { return has_prefix(n, prefix); });
  }
  return model;
}

PhaseResult train_phase2(const FoldContext& ctx, const std::array<network::Checkpoint, data::kNumModalities>& streams,
                         const std::array<double, data::kNumModalities>& stream_f1) {
  augment::Rng rng = seeded(ctx.config.train.seed, ctx.fold, 2, 0);
  network::BtdNet<float> model = assemble_phase2(ctx.config, streams, stream_f1, rng());
  return run_phase(model, {2, std::nullopt, ctx.config.train.lr_phase2, ctx.config.train.epochs_phase2}, ctx, rng);
}

// ---------------------------------------------------------------- cross-validation

double FoldResult::best_stream_f1() const { return *std::max_element(phase1_f1.begin(), phase1_f1.end()); }

json run_metadata(const RunConfig& config) {
  return {{"config", config.to_json()},
          {"config_digest", config.digest()},
          {"seeds", {{"train", config.train.seed}, {"tta", config.augment.tta_seed}, {"synth", config.synth.seed}}},
          {"tta_angle", augment::sample_tta_angle(config.augment)},
          {"code_version", kCodeVersion}};
}

CrossValidation cross_validate(const data::PreparedDataset& dataset, const RunConfig& config, const fs::path& out_dir,
                               std::optional<int> only_fold) {
  config.validate();
  const std::vector<int> labels = dataset.labels();
  const FoldSplit split = stratified_kfold(labels, config.train.folds, config.train.seed);
  if (only_fold && (*only_fold < 0 || *only_fold >= split.k())) {
    throw Error(ErrorCode::kInvalidParameter, "fold " + std::to_string(*only_fold) + " outside [0, " + std::to_string(split.k()) + ")");
  }

  TrainLog log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream meta(out_dir / "run_meta.json");
    if (!meta) throw Error(ErrorCode::kIoError, "cannot write run_meta.json under " + out_dir.string());
    json m = run_metadata(config);
    json folds = json::array();
    for (const auto& f : split.folds) {
      json ids = json::array();
      for (int i : f) ids.push_back(dataset.packed(static_cast<size_t>(i)).scan_id);
      folds.push_back(ids);
    }
    m["folds"] = folds;
    meta << m.dump(1) << '\n';
    log = TrainLog(out_dir / "train_log.jsonl");
  }

  CrossValidation cv;
  std::vector<double> best_stream;
  std::vector<double> fused;
  for (int f = 0; f < split.k(); ++f) {
    if (only_fold && f != *only_fold) continue;
    FoldContext ctx{&dataset, &split, f, config, out_dir, &log};
    FoldResult fr;
    fr.fold = f;
    std::array<network::Checkpoint, data::kNumModalities> streams;
    for (Modality m : data::kModalities) {
      PhaseResult r = train_phase1(m, ctx);
      fr.phase1_f1[data::index_of(m)] = r.best_val_f1;
      streams[data::index_of(m)] = std::move(r.best);
    }
    fr.phase2_f1 = train_phase2(ctx, streams, fr.phase1_f1).best_val_f1;
    spdlog::info("fold {}: best stream F1 {:.4f}, fused F1 {:.4f}", f, fr.best_stream_f1(), fr.phase2_f1);
    best_stream.push_back(fr.best_stream_f1());
    fused.push_back(fr.phase2_f1);
    cv.folds.push_back(fr);
  }
  cv.phase1_best = evaluation::aggregate_folds(best_stream);
  cv.phase2 = evaluation::aggregate_folds(fused);
  return cv;
}

template double mix_loss_and_grad<float>(network::BtdNet<float>&, const MixBatch&, std::optional<Modality>,
                                         const objective::FocalParams&, bool);
template double mix_loss_and_grad<double>(network::BtdNet<double>&, const MixBatch&, std::optional<Modality>,
                                          const objective::FocalParams&, bool);
template double mix_loss<float>(network::BtdNet<float>&, const MixBatch&, std::optional<Modality>,
                                const objective::FocalParams&);
template double mix_loss<double>(network::BtdNet<double>&, const MixBatch&, std::optional<Modality>,
                                 const objective::FocalParams&);

}  // namespace btdnet::training
