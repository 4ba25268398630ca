#include "cp2/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cp2 {

namespace {

using nlohmann::json;

// Tracks which keys a section parser consumed so leftovers can be reported
// by their full path.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidConfig("config section " + path_ + " must be an object");
  }

  ~Section() = default;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw InvalidConfig("config key " + path_ + "." + key + " has the wrong type");
    }
  }

  void get(const std::string& key, std::pair<double, double>& out) {
    if (!has(key)) return;
    auto v = j_.at(key);
    if (!v.is_array() || v.size() != 2)
      throw InvalidConfig("config key " + path_ + "." + key + " must be a 2-element array");
    out = {v[0].get<double>(), v[1].get<double>()};
  }

  void get(const std::string& key, std::pair<int, int>& out) {
    if (!has(key)) return;
    auto v = j_.at(key);
    if (!v.is_array() || v.size() != 2)
      throw InvalidConfig("config key " + path_ + "." + key + " must be a 2-element array");
    out = {v[0].get<int>(), v[1].get<int>()};
  }

  const json* sub(const std::string& key) {
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw InvalidConfig("unknown config key: " + (path_.empty() ? it.key() : path_ + "." + it.key()));
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_augment(const json& j, AugmentConfig& cfg) {
  Section s(j, "augment");
  s.get("target_size", cfg.target_size);
  s.get("crop_scale_range", cfg.crop_scale_range);
  s.get("crop_aspect_range", cfg.crop_aspect_range);
  if (const json* js = s.sub("jitter")) {
    Section sj(*js, "augment.jitter");
    sj.get("brightness", cfg.jitter.brightness);
    sj.get("contrast", cfg.jitter.contrast);
    sj.get("saturation", cfg.jitter.saturation);
    sj.get("hue", cfg.jitter.hue);
    sj.finish();
  }
  s.get("jitter_prob", cfg.jitter_prob);
  s.get("grayscale_prob", cfg.grayscale_prob);
  s.get("blur_prob", cfg.blur_prob);
  s.get("blur_sigma_range", cfg.blur_sigma_range);
  s.get("hflip_prob", cfg.hflip_prob);
  s.finish();
}

void parse_masks(const json& j, MaskConfig& cfg, std::string& external_dir) {
  Section s(j, "masks");
  if (s.has("family")) cfg.family = mask_family_from_name(j.at("family").get<std::string>());
  std::pair<double, double> ratio{cfg.ratio.lo, cfg.ratio.hi};
  s.get("ratio_range", ratio);
  cfg.ratio = {ratio.first, ratio.second};
  s.get("polygon_vertices", cfg.polygon_vertices);
  s.get("block_size_range", cfg.block_size_range);
  s.get("patch", cfg.patch);
  s.get("external_dir", external_dir);
  s.get("external_blur_sigma", cfg.external_blur_sigma);
  s.get("external_threshold", cfg.external_threshold);
  s.get("independent_masks", cfg.independent_masks);
  s.get("retry_cap", cfg.retry_cap);
  s.finish();
}

void parse_model(const json& j, ModelConfig& cfg) {
  Section s(j, "model");
  s.get("backbone_widths", cfg.backbone_widths);
  s.get("stride", cfg.stride);
  if (s.has("head_kind")) cfg.head_kind = head_kind_from_name(j.at("head_kind").get<std::string>());
  s.get("head_width", cfg.head_width);
  s.get("proj_dim", cfg.proj_dim);
  s.get("atrous_last_stage", cfg.atrous_last_stage);
  s.get("fcn_atrous_rate", cfg.fcn_atrous_rate);
  s.get("aspp_rates", cfg.aspp_rates);
  if (s.has("norm")) cfg.norm = norm_kind_from_name(j.at("norm").get<std::string>());
  s.finish();
}

void parse_losses(const json& j, LossConfig& cfg) {
  Section s(j, "losses");
  s.get("tau_dense", cfg.tau_dense);
  s.get("tau_ins", cfg.tau_ins);
  s.get("alpha", cfg.alpha);
  if (s.has("mode")) cfg.mode = loss_mode_from_name(j.at("mode").get<std::string>());
  s.finish();
}

void parse_trainer(const json& j, TrainerConfig& cfg) {
  Section s(j, "trainer");
  s.get("epochs", cfg.epochs);
  s.get("batch_size", cfg.batch_size);
  s.get("momentum_m", cfg.momentum_m);
  s.get("lr", cfg.lr);
  s.get("sgd_momentum", cfg.sgd_momentum);
  s.get("weight_decay", cfg.weight_decay);
  s.get("cosine_lr", cfg.cosine_lr);
  s.get("bank_size", cfg.bank_size);
  s.get("bank_prefill_random", cfg.bank_prefill_random);
  s.get("checkpoint_every", cfg.checkpoint_every);
  s.get("workers", cfg.workers);
  if (const json* jc = s.sub("corpus")) {
    Section sc(*jc, "trainer.corpus");
    sc.get("kind", cfg.corpus.kind);
    sc.get("n_images", cfg.corpus.n_images);
    sc.get("dir", cfg.corpus.dir);
    sc.finish();
  }
  s.finish();
}

void parse_quicktune(const json& j, QuickTuneConfig& cfg) {
  Section s(j, "quicktune");
  s.get("init_checkpoint", cfg.init_checkpoint);
  s.get("epochs", cfg.epochs);
  s.get("lr", cfg.lr);
  s.get("batch_size", cfg.batch_size);
  s.finish();
}

void parse_evalseg(const json& j, EvalsegConfig& cfg) {
  Section s(j, "evalseg");
  s.get("num_classes", cfg.num_classes);
  s.get("train_samples", cfg.train_samples);
  s.get("val_samples", cfg.val_samples);
  s.get("finetune_steps", cfg.finetune_steps);
  s.get("finetune_batch", cfg.finetune_batch);
  s.get("finetune_lr", cfg.finetune_lr);
  s.get("finetune_momentum", cfg.finetune_momentum);
  s.get("finetune_weight_decay", cfg.finetune_weight_decay);
  s.get("cosine_lr", cfg.cosine_lr);
  s.get("plots", cfg.plots);
  s.finish();
}

}  // namespace

void TrainerConfig::validate() const {
  if (epochs < 1) throw InvalidConfig("trainer: epochs must be positive");
  if (batch_size < 1) throw InvalidConfig("trainer: batch_size must be positive");
  if (momentum_m < 0.0 || momentum_m > 1.0)
    throw InvalidConfig("trainer: momentum_m must be in [0,1]");
  if (lr <= 0.0) throw InvalidConfig("trainer: lr must be positive");
  if (sgd_momentum < 0.0 || sgd_momentum >= 1.0)
    throw InvalidConfig("trainer: sgd_momentum must be in [0,1)");
  if (weight_decay < 0.0) throw InvalidConfig("trainer: weight_decay must be nonnegative");
  if (bank_size < 1) throw InvalidConfig("trainer: bank_size must be positive");
  if (workers < 0) throw InvalidConfig("trainer: workers must be nonnegative");
  if (corpus.kind != "synthetic" && corpus.kind != "dir")
    throw InvalidConfig("trainer.corpus.kind must be 'synthetic' or 'dir'");
  if (corpus.kind == "synthetic" && corpus.n_images < 3)
    throw InvalidConfig("trainer.corpus.n_images must be at least 3");
  if (corpus.kind == "dir" && corpus.dir.empty())
    throw InvalidConfig("trainer.corpus.dir must be set for kind 'dir'");
}

void QuickTuneConfig::validate() const {
  if (epochs < 1) throw InvalidConfig("quicktune: epochs must be positive");
  if (lr <= 0.0) throw InvalidConfig("quicktune: lr must be positive");
  if (batch_size < 1) throw InvalidConfig("quicktune: batch_size must be positive");
}

void EvalsegConfig::validate() const {
  if (num_classes < 2 || num_classes > 6)
    throw InvalidConfig("evalseg: num_classes must be in [2,6]");
  if (train_samples < 1 || val_samples < 1)
    throw InvalidConfig("evalseg: dataset sizes must be positive");
  if (finetune_steps < 1) throw InvalidConfig("evalseg: finetune_steps must be positive");
  if (finetune_batch < 1) throw InvalidConfig("evalseg: finetune_batch must be positive");
  if (finetune_lr <= 0.0) throw InvalidConfig("evalseg: finetune_lr must be positive");
  if (finetune_weight_decay < 0.0)
    throw InvalidConfig("evalseg: finetune_weight_decay must be nonnegative");
}

void ExperimentConfig::validate() const {
  if (run_dir.empty()) throw InvalidConfig("run_dir must be set");
  augment.validate();
  if (augment.target_size % model.stride != 0)
    throw InvalidConfig("augment.target_size must be divisible by model.stride");
  model.validate();
  losses.validate();
  trainer.validate();
  quicktune.validate();
  evalseg.validate();
  if (masks.family == MaskFamily::external && masks_external_dir.empty() &&
      masks.external_files.empty())
    throw InvalidConfig("masks.external_dir must be set for the external family");
  std::pair<double, double> r{masks.ratio.lo, masks.ratio.hi};
  if (!(r.first > 0.0 && r.first <= r.second && r.second <= 1.0))
    throw InvalidConfig("masks.ratio_range must satisfy 0 < lo <= hi <= 1");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "");
  root.get("master_seed", cfg.master_seed);
  root.get("run_dir", cfg.run_dir);
  if (const json* js = root.sub("augment")) parse_augment(*js, cfg.augment);
  if (const json* js = root.sub("masks")) parse_masks(*js, cfg.masks, cfg.masks_external_dir);
  if (const json* js = root.sub("model")) parse_model(*js, cfg.model);
  if (const json* js = root.sub("losses")) parse_losses(*js, cfg.losses);
  if (const json* js = root.sub("trainer")) parse_trainer(*js, cfg.trainer);
  if (const json* js = root.sub("quicktune")) parse_quicktune(*js, cfg.quicktune);
  if (const json* js = root.sub("evalseg")) parse_evalseg(*js, cfg.evalseg);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& source_name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into a line/column position.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::ostringstream os;
    os << source_name << ":" << line << ":" << col << ": " << e.what();
    throw InvalidConfig(os.str());
  }
  return config_from_json(j);
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidConfig("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

json apply_override(json doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidConfig("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value_text = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::parse_error&) {
    value = value_text;  // plain string
  }

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw InvalidConfig("override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw InvalidConfig("override path crosses a non-object value: " + path);
    start = dot + 1;
  }
  return doc;
}

json model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["backbone_widths"] = cfg.backbone_widths;
  j["stride"] = cfg.stride;
  j["head_kind"] = head_kind_name(cfg.head_kind);
  j["head_width"] = cfg.head_width;
  j["proj_dim"] = cfg.proj_dim;
  j["atrous_last_stage"] = cfg.atrous_last_stage;
  j["fcn_atrous_rate"] = cfg.fcn_atrous_rate;
  j["aspp_rates"] = cfg.aspp_rates;
  j["norm"] = norm_kind_name(cfg.norm);
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  parse_model(j, cfg);
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["master_seed"] = cfg.master_seed;
  j["run_dir"] = cfg.run_dir;
  j["augment"] = {
      {"target_size", cfg.augment.target_size},
      {"crop_scale_range", {cfg.augment.crop_scale_range.first, cfg.augment.crop_scale_range.second}},
      {"crop_aspect_range", {cfg.augment.crop_aspect_range.first, cfg.augment.crop_aspect_range.second}},
      {"jitter",
       {{"brightness", cfg.augment.jitter.brightness},
        {"contrast", cfg.augment.jitter.contrast},
        {"saturation", cfg.augment.jitter.saturation},
        {"hue", cfg.augment.jitter.hue}}},
      {"jitter_prob", cfg.augment.jitter_prob},
      {"grayscale_prob", cfg.augment.grayscale_prob},
      {"blur_prob", cfg.augment.blur_prob},
      {"blur_sigma_range", {cfg.augment.blur_sigma_range.first, cfg.augment.blur_sigma_range.second}},
      {"hflip_prob", cfg.augment.hflip_prob}};
  j["masks"] = {{"family", mask_family_name(cfg.masks.family)},
                {"ratio_range", {cfg.masks.ratio.lo, cfg.masks.ratio.hi}},
                {"polygon_vertices", {cfg.masks.polygon_vertices.first, cfg.masks.polygon_vertices.second}},
                {"block_size_range", {cfg.masks.block_size_range.first, cfg.masks.block_size_range.second}},
                {"patch", cfg.masks.patch},
                {"external_dir", cfg.masks_external_dir},
                {"external_blur_sigma", cfg.masks.external_blur_sigma},
                {"external_threshold", cfg.masks.external_threshold},
                {"independent_masks", cfg.masks.independent_masks},
                {"retry_cap", cfg.masks.retry_cap}};
  j["model"] = model_config_to_json(cfg.model);
  j["losses"] = {{"tau_dense", cfg.losses.tau_dense},
                 {"tau_ins", cfg.losses.tau_ins},
                 {"alpha", cfg.losses.alpha},
                 {"mode", loss_mode_name(cfg.losses.mode)}};
  j["trainer"] = {{"epochs", cfg.trainer.epochs},
                  {"batch_size", cfg.trainer.batch_size},
                  {"momentum_m", cfg.trainer.momentum_m},
                  {"lr", cfg.trainer.lr},
                  {"sgd_momentum", cfg.trainer.sgd_momentum},
                  {"weight_decay", cfg.trainer.weight_decay},
                  {"cosine_lr", cfg.trainer.cosine_lr},
                  {"bank_size", cfg.trainer.bank_size},
                  {"bank_prefill_random", cfg.trainer.bank_prefill_random},
                  {"checkpoint_every", cfg.trainer.checkpoint_every},
                  {"workers", cfg.trainer.workers},
                  {"corpus",
                   {{"kind", cfg.trainer.corpus.kind},
                    {"n_images", cfg.trainer.corpus.n_images},
                    {"dir", cfg.trainer.corpus.dir}}}};
  j["quicktune"] = {{"init_checkpoint", cfg.quicktune.init_checkpoint},
                    {"epochs", cfg.quicktune.epochs},
                    {"lr", cfg.quicktune.lr},
                    {"batch_size", cfg.quicktune.batch_size}};
  j["evalseg"] = {{"num_classes", cfg.evalseg.num_classes},
                  {"train_samples", cfg.evalseg.train_samples},
                  {"val_samples", cfg.evalseg.val_samples},
                  {"finetune_steps", cfg.evalseg.finetune_steps},
                  {"finetune_batch", cfg.evalseg.finetune_batch},
                  {"finetune_lr", cfg.evalseg.finetune_lr},
                  {"finetune_momentum", cfg.evalseg.finetune_momentum},
                  {"finetune_weight_decay", cfg.evalseg.finetune_weight_decay},
                  {"cosine_lr", cfg.evalseg.cosine_lr},
                  {"plots", cfg.evalseg.plots}};
  return j;
}

std::string config_echo_text(const ExperimentConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

void resolve_external_masks(ExperimentConfig& cfg) {
  if (cfg.masks.family != MaskFamily::external || !cfg.masks.external_files.empty()) return;
  namespace fs = std::filesystem;
  if (!fs::is_directory(cfg.masks_external_dir))
    throw InvalidConfig("masks.external_dir is not a directory: " + cfg.masks_external_dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(cfg.masks_external_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw InvalidConfig("masks.external_dir holds no raster files: " + cfg.masks_external_dir);
  cfg.masks.external_files = std::move(files);
}

}  // namespace cp2
