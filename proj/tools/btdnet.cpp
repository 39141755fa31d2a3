#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "btdnet/data/ingest.hpp"
#include "btdnet/data/preprocess.hpp"
#include "btdnet/data/stats.hpp"
#include "btdnet/error.hpp"
#include "btdnet/evaluation/evaluate.hpp"
#include "btdnet/network/checkpoint.hpp"
#include "btdnet/selftest.hpp"
#include "btdnet/synth/synth.hpp"
#include "btdnet/training/config.hpp"
#include "btdnet/training/gradcheck.hpp"
#include "btdnet/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace btdnet;
using nlohmann::json;

namespace {

struct Flags {
  std::string root;
  std::string out;
  std::string config;
  std::string backbone;
  std::string ckpt;
  std::optional<uint64_t> seed;
  std::optional<int> n;
  std::optional<int> fold;
  bool tta = false;
  bool strict_length = false;
};

training::RunConfig resolve_config(const Flags& f, training::RunConfig base) {
  training::RunConfig c = f.config.empty() ? std::move(base) : training::load_config(f.config, std::move(base));
  if (!f.backbone.empty()) {
    c.network.backbone.kind = nn::parse_backbone(f.backbone);
    c.network.backbone.feature_dim = nn::backbone_feature_dim(c.network.backbone.kind);
  }
  if (f.strict_length) c.strict_length = true;
  c.validate();
  return c;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIoError, path.string() + ": " + e.what());
  }
}

json report_json(const evaluation::FoldReport& r) {
  return {{"per_fold", r.per_fold}, {"mean", r.mean}, {"spread", r.spread}};
}

// A prepared root is used as is; a raw root falls back to its sibling cache.
fs::path prepared_root(const fs::path& root) {
  if (fs::exists(root / "prep_meta.json")) return root;
  const fs::path sibling = data::default_prep_root(root);
  if (fs::exists(sibling / "prep_meta.json")) return sibling;
  throw Error(ErrorCode::kIoError, "no prepared data at " + root.string() + " or " + sibling.string() + "; run prep first");
}

int cmd_synth(const Flags& f) {
  training::RunConfig c = resolve_config(f, training::synthetic_config());
  if (f.n) c.synth.num_scans = *f.n;
  if (f.seed) c.synth.seed = *f.seed;
  const data::Manifest m = synth::generate_synthetic(c.synth, f.out);
  std::cout << "wrote " << m.entries.size() << " scans to " << f.out << '\n';
  return 0;
}

int cmd_prep(const Flags& f) {
  const training::RunConfig c = resolve_config(f, training::default_config());
  const data::Manifest raw = data::load_manifest(f.root);
  data::validate_dataset(raw);
  const fs::path out = f.out.empty() ? data::default_prep_root(f.root) : fs::path(f.out);
  const data::PrepSummary s = data::prep_dataset(raw, out, c.data);
  std::cout << "prepared " << s.volumes << " volumes, kept " << s.slices_out << " of " << s.slices_in << " slices in "
            << out.string() << '\n';
  return 0;
}

int cmd_report(const Flags& f) {
  const data::Manifest m = data::load_manifest(f.root);
  const data::SliceCountTable table = data::dataset_stats(m);
  const fs::path out = f.out.empty() ? fs::path(f.root) : fs::path(f.out);
  fs::create_directories(out);
  data::write_slice_report(table, out, true);
  for (data::Modality mod : data::kModalities) {
    std::cout << data::modality_name(mod) << ' ' << table.totals[data::index_of(mod)] << '\n';
  }
  return 0;
}

int cmd_train(const Flags& f) {
  training::RunConfig c = resolve_config(f, training::default_config());
  if (f.seed) c.train.seed = *f.seed;
  const fs::path out = f.out.empty() ? fs::path("run") : fs::path(f.out);
  const data::PreparedDataset ds = data::PreparedDataset::load(prepared_root(f.root));
  const training::CrossValidation cv = training::cross_validate(ds, c, out, f.fold);
  json folds = json::array();
  for (const training::FoldResult& r : cv.folds) {
    json p1 = json::object();
    for (data::Modality m : data::kModalities) p1[std::string(data::modality_name(m))] = r.phase1_f1[data::index_of(m)];
    folds.push_back({{"fold", r.fold}, {"phase1", p1}, {"phase2", r.phase2_f1}});
  }
  write_json(out / "train_summary.json",
             {{"folds", folds}, {"best_stream", report_json(cv.phase1_best)}, {"phase2", report_json(cv.phase2)},
              {"config_digest", c.digest()}});
  std::cout << "phase 2 macro-F1 " << cv.phase2.mean << " (spread " << cv.phase2.spread << "), best stream "
            << cv.phase1_best.mean << '\n';
  return 0;
}

int cmd_eval(const Flags& f) {
  // The checkpoint is opened first so a bad path fails before any data work.
  std::optional<network::Checkpoint> single;
  if (!f.ckpt.empty()) single = network::read_checkpoint(f.ckpt);
  if (f.root.empty()) throw Error(ErrorCode::kInvalidParameter, "eval needs --root");

  const fs::path out = f.out.empty() ? fs::path("run") : fs::path(f.out);
  training::RunConfig c = resolve_config(f, training::default_config());
  const data::PreparedDataset ds = data::PreparedDataset::load(prepared_root(f.root));

  json meta;
  if (fs::exists(out / "run_meta.json")) meta = read_json(out / "run_meta.json");
  const double angle = meta.contains("tta_angle") ? meta["tta_angle"].get<double>() : augment::sample_tta_angle(c.augment);
  const std::string digest = meta.contains("config_digest") ? meta["config_digest"].get<std::string>() : c.digest();
  if (meta.contains("config") && meta["config"].contains("data")) {
    c.strict_length = meta["config"]["data"].value("strict_length", c.strict_length);
  }

  std::vector<std::vector<int>> folds;
  if (meta.contains("folds")) {
    for (const json& ids : meta["folds"]) {
      std::vector<int> idx;
      for (const json& id : ids) {
        const int i = ds.index_of_id(id.get<std::string>());
        if (i < 0) throw Error(ErrorCode::kManifestMismatch, "scan " + id.get<std::string>() + " of the run is not in the dataset");
        idx.push_back(i);
      }
      folds.push_back(std::move(idx));
    }
  } else {
    folds = training::stratified_kfold(ds.labels(), c.train.folds, c.train.seed).folds;
  }

  std::vector<int> which;
  if (f.fold) {
    which = {*f.fold};
  } else if (single && single->meta.contains("fold")) {
    which = {single->meta["fold"].get<int>()};
  } else {
    for (int i = 0; i < static_cast<int>(folds.size()); ++i) which.push_back(i);
  }

  std::vector<double> scores;
  json per_fold = json::array();
  for (int fold : which) {
    if (fold < 0 || fold >= static_cast<int>(folds.size())) {
      throw Error(ErrorCode::kInvalidParameter, "fold " + std::to_string(fold) + " outside [0, " + std::to_string(folds.size()) + ")");
    }
    const network::Checkpoint ckpt = single ? *single : network::read_checkpoint(training::checkpoint_path(out, fold, 2));
    network::BtdNet<float> model(ckpt.config);
    network::apply_checkpoint(ckpt, model);
    std::optional<data::Modality> stream;
    const std::string name = ckpt.meta.value("stream", std::string());
    if (!name.empty()) stream = data::parse_modality(name);

    evaluation::EvalOptions opts;
    opts.use_tta = f.tta;
    opts.tta_angle = angle;
    opts.lengths = ckpt.config.lengths;
    opts.policy = c.strict_length ? data::LengthPolicy::kStrict : data::LengthPolicy::kPermissive;
    opts.only = stream;
    const evaluation::FoldEvaluation e =
        evaluation::evaluate_fold(evaluation::model_logits(model, stream), ds, folds[static_cast<size_t>(fold)], opts);
    evaluation::write_predictions(e, out / ("preds_fold" + std::to_string(fold) + ".jsonl"));
    scores.push_back(e.macro_f1);
    std::cout << "fold " << fold << " macro-F1 " << e.macro_f1 << '\n';
  }
  const evaluation::FoldReport r = evaluation::aggregate_folds(scores);
  json report = report_json(r);
  report["folds"] = which;
  report["config_digest"] = digest;
  report["tta"] = f.tta;
  report["tta_seed"] = c.augment.tta_seed;
  report["tta_angle"] = angle;
  write_json(out / "eval_report.json", report);
  std::cout << "mean macro-F1 " << r.mean << " (spread " << r.spread << ")\n";
  return 0;
}

int cmd_gradcheck(const Flags& f) {
  training::GradcheckOptions opts;
  if (f.seed) opts.seed = *f.seed;
  const training::GradcheckReport r = training::run_gradcheck(opts);
  const training::GradcheckEntry* w = r.worst();
  std::cout << "checked " << r.entries.size() << " parameters, max relative error " << r.max_rel_error;
  if (w != nullptr) std::cout << " at " << w->name << '[' << w->index << ']';
  std::cout << '\n';
  return r.max_rel_error < 1e-4 ? 0 : 1;
}

int cmd_selftest(const Flags& f) {
  int failed = 0;
  for (const InvariantResult& r : run_selftest(f.seed.value_or(0))) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    failed += r.passed ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"btdnet: multimodal MRI sequence classifier"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", f.out, "output root")->required();
  synth->add_option("--n", f.n, "number of scans");
  synth->add_option("--seed", f.seed, "generator seed");
  synth->add_option("--config", f.config, "config file (synth.* keys)");

  auto* prep = app.add_subcommand("prep", "crop, resize and normalize a raw dataset");
  prep->add_option("--root", f.root, "raw dataset root")->required();
  prep->add_option("--out", f.out, "prepared root (default <root>_prep)");
  prep->add_option("--config", f.config, "config file (data.* keys)");

  auto* report = app.add_subcommand("report", "slice-count tables and plot");
  report->add_option("--root", f.root, "dataset root")->required();
  report->add_option("--out", f.out, "output directory (default root)");

  auto* train = app.add_subcommand("train", "two-phase k-fold training");
  train->add_option("--root", f.root, "prepared (or raw, with a prepared sibling) root")->required();
  train->add_option("--out", f.out, "run directory (default run)");
  train->add_option("--config", f.config, "config file");
  train->add_option("--seed", f.seed, "training seed");
  train->add_option("--fold", f.fold, "train a single fold");
  train->add_option("--backbone", f.backbone, "tiny_cnn or resnet18_gap")->check(CLI::IsMember({"tiny_cnn", "resnet18_gap"}));
  train->add_flag("--strict-length", f.strict_length, "reject volumes longer than t");

  auto* eval = app.add_subcommand("eval", "evaluate phase-2 checkpoints on their validation folds");
  eval->add_option("--root", f.root, "prepared root");
  eval->add_option("--out", f.out, "run directory (default run)");
  eval->add_option("--ckpt", f.ckpt, "evaluate this checkpoint instead");
  eval->add_option("--config", f.config, "config file");
  eval->add_option("--fold", f.fold, "evaluate a single fold");
  eval->add_flag("--tta", f.tta, "four-view test-time augmentation");
  eval->add_option("--backbone", f.backbone, "tiny_cnn or resnet18_gap")->check(CLI::IsMember({"tiny_cnn", "resnet18_gap"}));
  eval->add_flag("--strict-length", f.strict_length, "reject volumes longer than t");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the total loss gradient");
  gradcheck->add_option("--seed", f.seed, "seed");

  auto* selftest = app.add_subcommand("selftest", "run the invariant suite");
  selftest->add_option("--seed", f.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(f);
    if (prep->parsed()) return cmd_prep(f);
    if (report->parsed()) return cmd_report(f);
    if (train->parsed()) return cmd_train(f);
    if (eval->parsed()) return cmd_eval(f);
    if (gradcheck->parsed()) return cmd_gradcheck(f);
    if (selftest->parsed()) return cmd_selftest(f);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
