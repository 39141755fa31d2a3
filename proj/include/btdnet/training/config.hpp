#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "btdnet/augment/augment.hpp"
#include "btdnet/data/preprocess.hpp"
#include "btdnet/network/model.hpp"
#include "btdnet/objective/focal.hpp"
#include "btdnet/synth/synth.hpp"

namespace btdnet::training {

enum class Phase2Init { kBestStream, kMeanStreams, kFresh };

struct TrainConfig {
  int batch_size = 4;
  double lr_phase1 = 1e-4;
  double lr_phase2 = 1e-5;
  double momentum = 0.9;
  double sam_rho = 0.05;
  int epochs_phase1 = 30;
  int epochs_phase2 = 20;
  int patience = 7;
  uint64_t seed = 0;
  int folds = 5;
  /// Where the shared CNN/RNN weights of phase 2 come from.
  Phase2Init phase2_init = Phase2Init::kBestStream;
  bool mix_augment = true;
  bool geometric = true;

  void validate() const;
};

struct RunConfig {
  augment::AugmentConfig augment;
  objective::FocalParams loss;
  TrainConfig train;
  network::ModelConfig network;
  data::PrepOptions data;
  bool strict_length = false;
  synth::SynthConfig synth;

  void validate() const;
  nlohmann::json to_json() const;
  /// Stable hex digest of to_json().
  std::string digest() const;
};

/// Full-scale defaults: resnet18_gap, t = 250/200/200/250.
RunConfig default_config();
/// Desk-scale defaults for synthetic data: tiny_cnn, t = 32 everywhere, short
/// schedules at larger learning rates and alpha = 0.5.
RunConfig synthetic_config();

/// Applies `key = value` lines ('#' starts a comment) on top of `base`. A
/// leading `preset = default|synthetic` replaces `base` first.
/// Unknown keys and malformed values throw kConfigError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base);
RunConfig load_config(const std::filesystem::path& path, RunConfig base);

}  // namespace btdnet::training
