#include "cp2/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cp2/config.hpp"

namespace cp2 {

namespace {

using nlohmann::json;

json blob_to_json(const ParamBlob& b) {
  std::vector<std::uint8_t> bytes(b.data.size() * sizeof(double));
  std::memcpy(bytes.data(), b.data.data(), bytes.size());
  json j;
  j["name"] = b.name;
  j["shape"] = b.shape;
  j["data"] = json::binary(std::move(bytes));
  return j;
}

ParamBlob blob_from_json(const json& j) {
  ParamBlob b;
  b.name = j.at("name").get<std::string>();
  b.shape = j.at("shape").get<std::vector<int>>();
  const auto& bytes = j.at("data").get_binary();
  if (bytes.size() % sizeof(double) != 0)
    throw IncompatibleCheckpoint("parameter blob has a truncated payload");
  b.data.resize(bytes.size() / sizeof(double));
  std::memcpy(b.data.data(), bytes.data(), bytes.size());
  return b;
}

json blobs_to_json(const std::vector<ParamBlob>& blobs) {
  json arr = json::array();
  for (const auto& b : blobs) arr.push_back(blob_to_json(b));
  return arr;
}

std::vector<ParamBlob> blobs_from_json(const json& arr) {
  std::vector<ParamBlob> out;
  for (const auto& j : arr) out.push_back(blob_from_json(j));
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json j;
  j["format"] = "cp2-checkpoint";
  j["version"] = ckpt.version;
  j["phase"] = ckpt.phase;
  j["step"] = ckpt.step;
  j["model"] = model_config_to_json(ckpt.model_cfg);
  j["num_classes"] = ckpt.num_classes;
  j["params"] = blobs_to_json(ckpt.params);
  j["buffers"] = blobs_to_json(ckpt.buffers);
  j["config_echo"] = ckpt.config_echo;
  if (ckpt.train_state) {
    const auto& ts = *ckpt.train_state;
    json t;
    t["key_params"] = blobs_to_json(ts.key_params);
    t["opt_velocity"] = blobs_to_json(ts.opt_velocity);
    t["bank_vectors"] = blob_to_json(ts.bank_vectors);
    t["bank_head"] = ts.bank_head;
    t["bank_filled"] = ts.bank_filled;
    t["momentum_m"] = ts.momentum_m;
    t["rng_state"] = ts.rng_state;
    j["train_state"] = std::move(t);
  }

  const std::vector<std::uint8_t> packed = json::to_msgpack(j);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IOFailure("cannot open checkpoint for writing: " + tmp);
    os.write(reinterpret_cast<const char*>(packed.data()),
             static_cast<std::streamsize>(packed.size()));
    if (!os) throw IOFailure("short write to checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOFailure("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> packed((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::from_msgpack(packed);
  } catch (const json::exception& e) {
    throw IncompatibleCheckpoint("not a readable checkpoint: " + path + " (" + e.what() + ")");
  }
  if (j.value("format", "") != "cp2-checkpoint")
    throw IncompatibleCheckpoint("not a cp2 checkpoint: " + path);
  Checkpoint ckpt;
  ckpt.version = j.at("version").get<int>();
  if (ckpt.version != 1)
    throw IncompatibleCheckpoint("unsupported checkpoint version " +
                                 std::to_string(ckpt.version));
  ckpt.phase = j.at("phase").get<std::string>();
  ckpt.step = j.at("step").get<std::int64_t>();
  ckpt.model_cfg = model_config_from_json(j.at("model"));
  ckpt.num_classes = j.at("num_classes").get<int>();
  ckpt.params = blobs_from_json(j.at("params"));
  ckpt.buffers = blobs_from_json(j.at("buffers"));
  ckpt.config_echo = j.value("config_echo", "");
  if (j.contains("train_state")) {
    const json& t = j.at("train_state");
    TrainStateBlob ts;
    ts.key_params = blobs_from_json(t.at("key_params"));
    ts.opt_velocity = blobs_from_json(t.at("opt_velocity"));
    ts.bank_vectors = blob_from_json(t.at("bank_vectors"));
    ts.bank_head = t.at("bank_head").get<int>();
    ts.bank_filled = t.at("bank_filled").get<int>();
    ts.momentum_m = t.at("momentum_m").get<double>();
    ts.rng_state = t.at("rng_state").get<std::string>();
    ckpt.train_state = std::move(ts);
  }
  return ckpt;
}

std::vector<ParamBlob> snapshot_params(SegModel& model) {
  std::vector<ParamBlob> out;
  for (const auto& p : model.params()) {
    ParamBlob b;
    b.name = p.name;
    b.shape = p.value->shape();
    b.data.assign(p.value->data(), p.value->data() + p.value->numel());
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<ParamBlob> snapshot_buffers(SegModel& model) {
  std::vector<ParamBlob> out;
  for (const auto& b : model.buffers()) {
    ParamBlob blob;
    blob.name = b.name;
    blob.shape = b.value->shape();
    blob.data.assign(b.value->data(), b.value->data() + b.value->numel());
    out.push_back(std::move(blob));
  }
  return out;
}

namespace {

void load_into(const std::vector<ParamBlob>& blobs,
               const std::vector<std::string>& names,
               const std::vector<Tensor*>& targets) {
  if (blobs.size() != targets.size())
    throw IncompatibleCheckpoint("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (blobs[i].name != names[i])
      throw IncompatibleCheckpoint("checkpoint parameter order mismatch at " + blobs[i].name +
                                   " vs " + names[i]);
    if (blobs[i].shape != targets[i]->shape())
      throw IncompatibleCheckpoint("checkpoint shape mismatch for " + blobs[i].name);
    std::copy(blobs[i].data.begin(), blobs[i].data.end(), targets[i]->data());
  }
}

}  // namespace

void load_params(SegModel& model, const std::vector<ParamBlob>& params) {
  std::vector<std::string> names;
  std::vector<Tensor*> targets;
  for (const auto& p : model.params()) {
    names.push_back(p.name);
    targets.push_back(p.value);
  }
  load_into(params, names, targets);
}

void load_buffers(SegModel& model, const std::vector<ParamBlob>& buffers) {
  std::vector<std::string> names;
  std::vector<Tensor*> targets;
  for (const auto& b : model.buffers()) {
    names.push_back(b.name);
    targets.push_back(b.value);
  }
  load_into(buffers, names, targets);
}

SegModel model_from_checkpoint(const Checkpoint& ckpt) {
  Rng scratch(0);  // weights are overwritten by the blobs below
  SegModel model(ckpt.model_cfg, scratch);
  if (ckpt.num_classes > 0) model.replace_projection_with_classifier(ckpt.num_classes, scratch);
  load_params(model, ckpt.params);
  load_buffers(model, ckpt.buffers);
  return model;
}

std::uint64_t params_hash(const std::vector<ParamBlob>& params) {
  std::uint64_t h = 1469598103934665603ull;
  const auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& b : params) {
    feed(b.name.data(), b.name.size());
    feed(b.data.data(), b.data.size() * sizeof(double));
  }
  return h;
}

}  // namespace cp2
