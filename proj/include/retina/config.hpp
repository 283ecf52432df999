#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retina/augment.hpp"
#include "retina/dataset.hpp"
#include "retina/errors.hpp"
#include "retina/imageops.hpp"
#include "retina/modelkit.hpp"
#include "retina/trainer.hpp"

namespace retina::config {

// Resolved experiment configuration. Every knob has a default; a config file
// only needs task, paths and whatever it wants to override.
struct ExperimentConfig {
  dataset::TaskKind task = dataset::TaskKind::Binary;
  std::uint64_t seed = 42;
  int jobs = 1;

  std::filesystem::path manifest_path;
  std::filesystem::path image_dir;
  std::filesystem::path output_dir = "runs/out";

  modelkit::BackboneSpec backbone{modelkit::BackboneName::Toy, 32, true,
                                  modelkit::WeightsOrigin::RandomHeUniform};
  std::vector<int> hidden_widths = {256, 64};

  int phase = 1;
  trainer::OptimizerConfig optimizer;
  bool learning_rate_overridden = false;

  double test_frac = 0.2;
  double val_frac = 0.2;
  bool stratified = false;

  imageops::PreprocessConfig preprocess;
  augment::AugmentConfig augment;

  int batch_size = 16;
  int max_epochs = 50;
  int patience = 1;
  std::string resume_from;
  bool cache_frozen_features = true;
  std::string phase2_reinit = "head";  // or "all"

  nlohmann::json raw;  // normalized source document, hashed into artifacts

  trainer::PhaseConfig phase_config() const {
    trainer::PhaseConfig pc =
        phase == 1 ? trainer::PhaseConfig::one() : trainer::PhaseConfig::two();
    pc.init = backbone.origin;
    if (learning_rate_overridden) pc.learning_rate = optimizer.learning_rate;
    return pc;
  }

  trainer::TrainConfig train_config() const {
    trainer::TrainConfig tc;
    tc.phase = phase_config();
    tc.optimizer = optimizer;
    tc.optimizer.learning_rate = tc.phase.learning_rate;
    tc.batch_size = batch_size;
    tc.max_epochs = max_epochs;
    tc.patience = patience;
    tc.seed = seed;
    tc.cache_frozen_features = cache_frozen_features;
    return tc;
  }
};

namespace detail {

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ConfigError, std::string("bad value for '") + key + "': " + e.what());
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) {
    fail(Errc::ConfigError, std::string("'") + key + "' must be an object");
  }
  return j.at(key);
}

}  // namespace detail

inline ExperimentConfig parse(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;

  cfg.task = dataset::task_from_name(detail::get_or<std::string>(j, "task", "binary"));
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 42);
  cfg.jobs = detail::get_or<int>(j, "jobs", 1);
  if (cfg.jobs < 1) fail(Errc::ConfigError, "jobs must be >= 1");

  const auto& paths = detail::section(j, "paths");
  cfg.manifest_path = detail::get_or<std::string>(paths, "manifest", "");
  cfg.image_dir = detail::get_or<std::string>(paths, "image_dir", "");
  cfg.output_dir = detail::get_or<std::string>(paths, "output_dir", "runs/out");

  const auto& backbone = detail::section(j, "backbone");
  cfg.backbone.name =
      modelkit::backbone_from_name(detail::get_or<std::string>(backbone, "name", "toy"));
  cfg.backbone.input_size = detail::get_or<int>(
      backbone, "input_size", cfg.backbone.name == modelkit::BackboneName::Toy ? 32 : 512);
  const std::string weights = detail::get_or<std::string>(
      backbone, "weights",
      cfg.backbone.name == modelkit::BackboneName::Toy ? "he_uniform" : "imagenet");
  if (weights == "imagenet") {
    cfg.backbone.origin = modelkit::WeightsOrigin::PretrainedImagenet;
  } else if (weights == "he_uniform") {
    cfg.backbone.origin = modelkit::WeightsOrigin::RandomHeUniform;
  } else {
    fail(Errc::ConfigError, "backbone.weights must be 'imagenet' or 'he_uniform'");
  }

  const auto& head = detail::section(j, "head");
  cfg.hidden_widths = detail::get_or<std::vector<int>>(head, "hidden_widths", {256, 64});
  for (int w : cfg.hidden_widths) {
    if (w < 1) fail(Errc::ConfigError, "head.hidden_widths entries must be >= 1");
  }

  cfg.phase = detail::get_or<int>(j, "phase", 1);
  if (cfg.phase != 1 && cfg.phase != 2) fail(Errc::ConfigError, "phase must be 1 or 2");

  const auto& opt = detail::section(j, "optimizer");
  const std::string kind = detail::get_or<std::string>(opt, "kind", "adam");
  if (kind == "adam") {
    cfg.optimizer.kind = trainer::OptimizerKind::Adam;
  } else if (kind == "sgd") {
    cfg.optimizer.kind = trainer::OptimizerKind::Sgd;
  } else {
    fail(Errc::ConfigError, "optimizer.kind must be 'adam' or 'sgd'");
  }
  if (opt.contains("learning_rate") && !opt.at("learning_rate").is_null()) {
    cfg.optimizer.learning_rate = opt.at("learning_rate").get<double>();
    cfg.learning_rate_overridden = true;
    if (!(cfg.optimizer.learning_rate > 0.0)) {
      fail(Errc::ConfigError, "optimizer.learning_rate must be > 0");
    }
  }
  cfg.optimizer.beta1 = detail::get_or<double>(opt, "beta1", 0.9);
  cfg.optimizer.beta2 = detail::get_or<double>(opt, "beta2", 0.999);
  cfg.optimizer.epsilon = detail::get_or<double>(opt, "epsilon", 1e-8);
  cfg.optimizer.momentum = detail::get_or<double>(opt, "momentum", 0.0);
  if (cfg.optimizer.beta1 < 0.0 || cfg.optimizer.beta1 >= 1.0 || cfg.optimizer.beta2 < 0.0 ||
      cfg.optimizer.beta2 >= 1.0) {
    fail(Errc::ConfigError, "Adam betas must lie in [0,1)");
  }

  const auto& split = detail::section(j, "split");
  cfg.test_frac = detail::get_or<double>(split, "test_frac", 0.2);
  cfg.val_frac = detail::get_or<double>(split, "val_frac", 0.2);
  cfg.stratified = detail::get_or<bool>(split, "stratified", false);
  if (!(cfg.test_frac > 0.0 && cfg.test_frac < 1.0 && cfg.val_frac > 0.0 && cfg.val_frac < 1.0)) {
    fail(Errc::ConfigError, "split fractions must lie in (0,1)");
  }

  const auto& pre = detail::section(j, "preprocess");
  cfg.preprocess.target_size = detail::get_or<int>(pre, "target_size", 512);
  cfg.preprocess.black_threshold = detail::get_or<int>(pre, "black_threshold", 7);
  cfg.preprocess.blend_alpha = detail::get_or<double>(pre, "blend_alpha", 4.0);
  cfg.preprocess.blend_bias = detail::get_or<int>(pre, "blend_bias", 128);
  cfg.preprocess.sigma_ratio = detail::get_or<double>(pre, "sigma_ratio", 1.0 / 30.0);
  imageops::validate(cfg.preprocess);

  const auto& aug = detail::section(j, "augment");
  cfg.augment.rotation_max = detail::get_or<double>(aug, "rotation_max", 360.0);
  cfg.augment.flip_prob = detail::get_or<double>(aug, "flip_prob", 0.5);
  cfg.augment.noise_sigma = detail::get_or<double>(aug, "noise_sigma", 10.0);
  augment::validate(cfg.augment);

  const auto& tr = detail::section(j, "trainer");
  cfg.batch_size = detail::get_or<int>(tr, "batch_size", 16);
  cfg.max_epochs = detail::get_or<int>(tr, "max_epochs", 50);
  cfg.patience = detail::get_or<int>(tr, "patience", 1);
  cfg.resume_from = detail::get_or<std::string>(tr, "resume_from", "");
  cfg.cache_frozen_features = detail::get_or<bool>(tr, "cache_frozen_features", true);
  cfg.phase2_reinit = detail::get_or<std::string>(tr, "phase2_reinit", "head");
  if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1) {
    fail(Errc::ConfigError, "trainer.batch_size/max_epochs/patience must be >= 1");
  }
  if (cfg.phase2_reinit != "head" && cfg.phase2_reinit != "all") {
    fail(Errc::ConfigError, "trainer.phase2_reinit must be 'head' or 'all'");
  }

  // Validate the (backbone, input size) pair against the feature table before
  // any work happens.
  modelkit::feature_shape(cfg.backbone.name, cfg.backbone.input_size);

  // Re-initializing pretrained weights would discard the transfer; reject the
  // combination outright.
  if (cfg.phase2_reinit == "all" &&
      cfg.backbone.origin == modelkit::WeightsOrigin::PretrainedImagenet) {
    fail(Errc::ConfigError,
         "phase2_reinit='all' requires backbone.weights='he_uniform'; re-initializing "
         "pretrained weights is contradictory");
  }
  if (cfg.backbone.name == modelkit::BackboneName::Toy &&
      cfg.backbone.origin == modelkit::WeightsOrigin::PretrainedImagenet) {
    fail(Errc::ConfigError, "the toy backbone has no pretrained weights");
  }
  return cfg;
}

// Dotted-path override: "trainer.max_epochs=5", "backbone.name=toy".
// The value parses as JSON when possible, else as a string.
inline void apply_override(nlohmann::json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(Errc::ConfigError, "--set expects key.path=value, got '" + spec + "'");
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (...) {
    parsed = value;  // plain string
  }

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) fail(Errc::ConfigError, "empty key segment in '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline ExperimentConfig load(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) fail(Errc::MissingFile, "config not found: " + path.string());
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::ConfigError, "config parse error in " + path.string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse(doc);
}

}  // namespace retina::config
