#include "btdnet/training/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <utility>

#include "btdnet/error.hpp"

namespace btdnet::training {

using data::Modality;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

double to_double(const std::string& v) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("expected a number");
  return out;
}

template <typename I>
I to_integer(const std::string& v) {
  I out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw std::invalid_argument("expected an integer");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

std::map<std::string, Setter> setters() {
  std::map<std::string, Setter> s;
  s["augment.rotation_deg"] = [](RunConfig& c, const std::string& v) { c.augment.rotation_deg = to_double(v); };
  s["augment.hflip_prob"] = [](RunConfig& c, const std::string& v) { c.augment.hflip_prob = to_double(v); };
  s["augment.mix_alpha"] = [](RunConfig& c, const std::string& v) { c.augment.mix_alpha = to_double(v); };
  s["augment.tta_seed"] = [](RunConfig& c, const std::string& v) { c.augment.tta_seed = to_integer<uint64_t>(v); };

  s["loss.alpha"] = [](RunConfig& c, const std::string& v) { c.loss.alpha = to_double(v); };
  s["loss.gamma"] = [](RunConfig& c, const std::string& v) { c.loss.gamma = to_double(v); };
  s["loss.literal_eq2"] = [](RunConfig& c, const std::string& v) { c.loss.literal_eq2 = to_bool(v); };
  s["loss.reduction"] = [](RunConfig& c, const std::string& v) {
    if (v == "sum") {
      c.loss.reduction = objective::Reduction::kSum;
    } else if (v == "mean") {
      c.loss.reduction = objective::Reduction::kMean;
    } else {
      throw std::invalid_argument("expected sum or mean");
    }
  };

  s["train.batch_size"] = [](RunConfig& c, const std::string& v) { c.train.batch_size = to_integer<int>(v); };
  s["train.lr_phase1"] = [](RunConfig& c, const std::string& v) { c.train.lr_phase1 = to_double(v); };
  s["train.lr_phase2"] = [](RunConfig& c, const std::string& v) { c.train.lr_phase2 = to_double(v); };
  s["train.momentum"] = [](RunConfig& c, const std::string& v) { c.train.momentum = to_double(v); };
  s["train.sam_rho"] = [](RunConfig& c, const std::string& v) { c.train.sam_rho = to_double(v); };
  s["train.epochs_phase1"] = [](RunConfig& c, const std::string& v) { c.train.epochs_phase1 = to_integer<int>(v); };
  s["train.epochs_phase2"] = [](RunConfig& c, const std::string& v) { c.train.epochs_phase2 = to_integer<int>(v); };
  s["train.patience"] = [](RunConfig& c, const std::string& v) { c.train.patience = to_integer<int>(v); };
  s["train.seed"] = [](RunConfig& c, const std::string& v) { c.train.seed = to_integer<uint64_t>(v); };
  s["train.folds"] = [](RunConfig& c, const std::string& v) { c.train.folds = to_integer<int>(v); };
  s["train.mix_augment"] = [](RunConfig& c, const std::string& v) { c.train.mix_augment = to_bool(v); };
  s["train.geometric"] = [](RunConfig& c, const std::string& v) { c.train.geometric = to_bool(v); };
  s["train.phase2_init"] = [](RunConfig& c, const std::string& v) {
    if (v == "best_stream") {
      c.train.phase2_init = Phase2Init::kBestStream;
    } else if (v == "mean") {
      c.train.phase2_init = Phase2Init::kMeanStreams;
    } else if (v == "fresh") {
      c.train.phase2_init = Phase2Init::kFresh;
    } else {
      throw std::invalid_argument("expected best_stream, mean or fresh");
    }
  };

  s["network.backbone"] = [](RunConfig& c, const std::string& v) {
    c.network.backbone.kind = nn::parse_backbone(v);
    c.network.backbone.feature_dim = nn::backbone_feature_dim(c.network.backbone.kind);
  };
  s["network.backbone_weights"] = [](RunConfig& c, const std::string& v) { c.network.backbone.weights_path = v; };
  s["network.rnn_units"] = [](RunConfig& c, const std::string& v) { c.network.rnn_units = to_integer<int>(v); };
  s["network.routing_units"] = [](RunConfig& c, const std::string& v) { c.network.routing_units = to_integer<int>(v); };
  s["network.fusion_units"] = [](RunConfig& c, const std::string& v) { c.network.fusion_units = to_integer<int>(v); };
  s["network.per_modality_routing"] = [](RunConfig& c, const std::string& v) {
    c.network.per_modality_routing = to_bool(v);
  };
  s["network.t"] = [](RunConfig& c, const std::string& v) { c.network.lengths.fill(to_integer<int>(v)); };
  for (Modality m : data::kModalities) {
    s["network.t_" + std::string(data::modality_name(m))] = [m](RunConfig& c, const std::string& v) {
      c.network.lengths[data::index_of(m)] = to_integer<int>(v);
    };
  }

  s["data.min_area_frac"] = [](RunConfig& c, const std::string& v) { c.data.min_area_frac = to_double(v); };
  s["data.strict_length"] = [](RunConfig& c, const std::string& v) { c.strict_length = to_bool(v); };

  s["synth.num_scans"] = [](RunConfig& c, const std::string& v) { c.synth.num_scans = to_integer<int>(v); };
  s["synth.image_size"] = [](RunConfig& c, const std::string& v) { c.synth.image_size = to_integer<int>(v); };
  s["synth.separability"] = [](RunConfig& c, const std::string& v) { c.synth.separability = to_double(v); };
  s["synth.positive_fraction"] = [](RunConfig& c, const std::string& v) { c.synth.positive_fraction = to_double(v); };
  s["synth.seed"] = [](RunConfig& c, const std::string& v) { c.synth.seed = to_integer<uint64_t>(v); };
  for (Modality m : data::kModalities) {
    const std::string name(data::modality_name(m));
    s["synth.min_slices_" + name] = [m](RunConfig& c, const std::string& v) {
      c.synth.slice_range[data::index_of(m)].first = to_integer<int>(v);
    };
    s["synth.max_slices_" + name] = [m](RunConfig& c, const std::string& v) {
      c.synth.slice_range[data::index_of(m)].second = to_integer<int>(v);
    };
  }
  return s;
}

const char* phase2_init_name(Phase2Init p) {
  switch (p) {
    case Phase2Init::kBestStream: return "best_stream";
    case Phase2Init::kMeanStreams: return "mean";
    case Phase2Init::kFresh: return "fresh";
  }
  return "?";
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::kConfigError, what);
  };
  require(batch_size >= 2, "train.batch_size must be >= 2");
  require(lr_phase1 > 0 && lr_phase2 > 0, "learning rates must be positive");
  require(momentum >= 0 && momentum < 1, "train.momentum must lie in [0, 1)");
  require(sam_rho >= 0, "train.sam_rho must be >= 0");
  require(epochs_phase1 >= 0 && epochs_phase2 >= 0, "epoch budgets must be >= 0");
  require(patience >= 1, "train.patience must be >= 1");
  require(folds >= 2, "train.folds must be >= 2");
}

void RunConfig::validate() const {
  train.validate();
  network.validate();
  try {
    loss.validate();
    synth.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
  if (augment.mix_alpha <= 0) throw Error(ErrorCode::kConfigError, "augment.mix_alpha must be positive");
  if (augment.hflip_prob < 0 || augment.hflip_prob > 1) throw Error(ErrorCode::kConfigError, "augment.hflip_prob must lie in [0, 1]");
  if (augment.rotation_deg < 0) throw Error(ErrorCode::kConfigError, "augment.rotation_deg must be >= 0");
}

json RunConfig::to_json() const {
  return {
      {"augment",
       {{"rotation_deg", augment.rotation_deg},
        {"hflip_prob", augment.hflip_prob},
        {"mix_alpha", augment.mix_alpha},
        {"tta_seed", augment.tta_seed}}},
      {"loss",
       {{"alpha", loss.alpha},
        {"gamma", loss.gamma},
        {"literal_eq2", loss.literal_eq2},
        {"reduction", loss.reduction == objective::Reduction::kSum ? "sum" : "mean"}}},
      {"train",
       {{"batch_size", train.batch_size},
        {"lr_phase1", train.lr_phase1},
        {"lr_phase2", train.lr_phase2},
        {"momentum", train.momentum},
        {"sam_rho", train.sam_rho},
        {"epochs_phase1", train.epochs_phase1},
        {"epochs_phase2", train.epochs_phase2},
        {"patience", train.patience},
        {"seed", train.seed},
        {"folds", train.folds},
        {"phase2_init", phase2_init_name(train.phase2_init)},
        {"mix_augment", train.mix_augment},
        {"geometric", train.geometric}}},
      {"network", network.to_json()},
      {"data", {{"min_area_frac", data.min_area_frac}, {"strict_length", strict_length}}},
      {"synth", synth.to_json()},
      {"init", {{"dense_conv", "fan_in_uniform"}, {"recurrent", "orthogonal"}, {"forget_bias", 1.0}}},
  };
}

std::string RunConfig::digest() const {
  const std::string text = to_json().dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig default_config() {
  RunConfig c;
  c.network.backbone.kind = nn::BackboneKind::kResNet18Gap;
  c.network.backbone.feature_dim = 512;
  return c;
}

RunConfig synthetic_config() {
  RunConfig c;
  c.network.backbone.kind = nn::BackboneKind::kTinyCnn;
  c.network.backbone.feature_dim = 32;
  c.network.lengths.fill(32);
  c.train.lr_phase1 = 0.01;
  c.train.lr_phase2 = 0.001;
  c.train.epochs_phase1 = 3;
  c.train.epochs_phase2 = 3;
  c.loss.alpha = 0.5;  // synthetic classes are balanced
  return c;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  static const std::map<std::string, Setter> table = setters();
  std::istringstream in(text);
  std::string line;
  int number = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfigError, "line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = unquote(trim(line.substr(eq + 1)));
    const bool leading = std::exchange(first, false);
    if (key == "preset") {
      if (!leading) throw Error(ErrorCode::kConfigError, "line " + std::to_string(number) + ": preset must be the first entry");
      if (value == "default") {
        base = default_config();
      } else if (value == "synthetic") {
        base = synthetic_config();
      } else {
        throw Error(ErrorCode::kConfigError, "line " + std::to_string(number) + ": unknown preset '" + value + "'");
      }
      continue;
    }
    const auto it = table.find(key);
    if (it == table.end()) throw Error(ErrorCode::kConfigError, "line " + std::to_string(number) + ": unknown key '" + key + "'");
    try {
      it->second(base, value);
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorCode::kConfigError, "line " + std::to_string(number) + ": " + key + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfigError, "line " + std::to_string(number) + ": " + key + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

}  // namespace btdnet::training
