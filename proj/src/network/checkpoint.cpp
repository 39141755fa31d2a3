#include "btdnet/network/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "btdnet/error.hpp"

namespace btdnet::network {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "btdnet-ckpt-v1\n";

size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw Error(ErrorCode::kCheckpointMismatch, "unknown tensor dtype '" + dtype + "'");
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorCode::kCheckpointMismatch, path.string() + ": " + why);
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const TensorRecord& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
Checkpoint snapshot(BtdNet<T>& model, const json& meta) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.meta = meta;
  for (nn::Parameter<T>* p : model.parameters()) {
    TensorRecord rec;
    rec.name = p->name;
    rec.dtype = std::is_same_v<T, float> ? "f32" : "f64";
    rec.rows = p->value.rows();
    rec.cols = p->value.cols();
    rec.values.assign(p->value.data(), p->value.data() + p->value.size());
    ckpt.tensors.push_back(std::move(rec));
  }
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json index = json::array();
  uint64_t offset = 0;
  for (const TensorRecord& t : ckpt.tensors) {
    index.push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", {t.rows, t.cols}}, {"offset", offset}});
    offset += t.values.size() * dtype_size(t.dtype);
  }
  const json header = {{"format", kCheckpointFormat}, {"config", ckpt.config.to_json()}, {"meta", ckpt.meta}, {"tensors", index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  static_assert(std::endian::native == std::endian::little);
  const uint64_t size = text.size();
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  out.write(reinterpret_cast<const char*>(&size), sizeof(size));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const TensorRecord& t : ckpt.tensors) {
    if (t.dtype == "f32") {
      std::vector<float> buf(t.values.begin(), t.values.end());
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else {
      out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
  }
  if (!out) throw Error(ErrorCode::kIoError, "failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) corrupt(path, "cannot open checkpoint");
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) corrupt(path, std::string("not a ") + kCheckpointFormat + " file");
  uint64_t size = 0;
  in.read(reinterpret_cast<char*>(&size), sizeof(size));
  if (!in || size > (1ULL << 32)) corrupt(path, "bad header size");
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) corrupt(path, "truncated header");

  Checkpoint ckpt;
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    const json header = json::parse(text);
    if (header.at("format").get<std::string>() != kCheckpointFormat) corrupt(path, "unsupported format");
    ckpt.config = ModelConfig::from_json(header.at("config"));
    ckpt.meta = header.value("meta", json::object());
    for (const json& entry : header.at("tensors")) {
      TensorRecord t;
      t.name = entry.at("name").get<std::string>();
      t.dtype = entry.at("dtype").get<std::string>();
      t.rows = entry.at("shape").at(0).get<Eigen::Index>();
      t.cols = entry.at("shape").at(1).get<Eigen::Index>();
      const uint64_t offset = entry.at("offset").get<uint64_t>();
      const size_t count = static_cast<size_t>(t.rows * t.cols);
      const size_t bytes = count * dtype_size(t.dtype);
      if (offset + bytes > payload.size()) corrupt(path, "truncated tensor " + t.name);
      t.values.resize(count);
      if (t.dtype == "f32") {
        std::vector<float> buf(count);
        std::memcpy(buf.data(), payload.data() + offset, bytes);
        std::copy(buf.begin(), buf.end(), t.values.begin());
      } else {
        std::memcpy(t.values.data(), payload.data() + offset, bytes);
      }
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCheckpointMismatch) throw;
    corrupt(path, e.what());
  }
  return ckpt;
}

void require_compatible(const ModelConfig& expected, const ModelConfig& found) {
  ModelConfig a = expected;
  ModelConfig b = found;
  a.backbone.weights_path.clear();
  b.backbone.weights_path.clear();
  if (!(a == b)) {
    throw Error(ErrorCode::kCheckpointMismatch, "checkpoint architecture " + found.to_json().dump() +
                                                    " does not match " + expected.to_json().dump());
  }
}

template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, BtdNet<T>& model, const TensorFilter& filter) {
  for (nn::Parameter<T>* p : model.parameters()) {
    if (filter && !filter(p->name)) continue;
    const TensorRecord* t = ckpt.find(p->name);
    if (t == nullptr) throw Error(ErrorCode::kCheckpointMismatch, "checkpoint lacks tensor " + p->name);
    if (t->rows != p->value.rows() || t->cols != p->value.cols()) {
      throw Error(ErrorCode::kCheckpointMismatch, "tensor " + p->name + " has shape " + std::to_string(t->rows) + "x" +
                                                      std::to_string(t->cols) + ", model expects " +
                                                      std::to_string(p->value.rows()) + "x" +
                                                      std::to_string(p->value.cols()));
    }
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<T>(t->values[static_cast<size_t>(i)]);
  }
}

template <typename T>
BtdNet<T> load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  BtdNet<T> model(ckpt.config);
  apply_checkpoint(ckpt, model);
  return model;
}

template Checkpoint snapshot<float>(BtdNet<float>&, const json&);
template Checkpoint snapshot<double>(BtdNet<double>&, const json&);
template void apply_checkpoint<float>(const Checkpoint&, BtdNet<float>&, const TensorFilter&);
template void apply_checkpoint<double>(const Checkpoint&, BtdNet<double>&, const TensorFilter&);
template BtdNet<float> load_model<float>(const std::filesystem::path&);
template BtdNet<double> load_model<double>(const std::filesystem::path&);

}  // namespace btdnet::network
