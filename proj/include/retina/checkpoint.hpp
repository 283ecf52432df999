#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "retina/errors.hpp"
#include "retina/modelkit.hpp"
#include "retina/tensor.hpp"

namespace retina::checkpoint {

// Archive format v1: "RTCK" magic, u32 version, u64 tensor count, then per
// tensor: u32 name length, name bytes, u8 trainable, u32 rank, u64 dims,
// f64 row-major payload. Little-endian throughout. The JSON sidecar carries
// the ModelSpec, seed and training phase.

constexpr char kMagic[4] = {'R', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

using modelkit::Activation;
using modelkit::BackboneName;
using modelkit::ModelSpec;
using modelkit::WeightsOrigin;

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["task"] = dataset::task_name(spec.task);
  j["backbone"] = {
      {"name", modelkit::backbone_name_str(spec.backbone.name)},
      {"input_size", spec.backbone.input_size},
      {"frozen", spec.backbone.frozen},
      {"weights_origin",
       spec.backbone.origin == WeightsOrigin::PretrainedImagenet ? "imagenet" : "he_uniform"},
  };
  j["head"] = {
      {"feature_count", spec.head.feature_count},
      {"hidden_widths", spec.head.hidden_widths},
      {"output_nodes", spec.head.output_nodes},
      {"activation", spec.head.output_activation == Activation::Sigmoid ? "sigmoid" : "softmax"},
  };
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.task = dataset::task_from_name(j.at("task").get<std::string>());
  const auto& b = j.at("backbone");
  spec.backbone.name = modelkit::backbone_from_name(b.at("name").get<std::string>());
  spec.backbone.input_size = b.at("input_size").get<int>();
  spec.backbone.frozen = b.at("frozen").get<bool>();
  spec.backbone.origin = b.at("weights_origin").get<std::string>() == "imagenet"
                             ? WeightsOrigin::PretrainedImagenet
                             : WeightsOrigin::RandomHeUniform;
  const auto& h = j.at("head");
  spec.head.feature_count = h.at("feature_count").get<long long>();
  spec.head.hidden_widths = h.at("hidden_widths").get<std::vector<int>>();
  spec.head.output_nodes = h.at("output_nodes").get<int>();
  spec.head.output_activation =
      h.at("activation").get<std::string>() == "sigmoid" ? Activation::Sigmoid
                                                         : Activation::Softmax;
  return spec;
}

namespace detail {

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(Errc::IoError, "truncated checkpoint archive");
  return v;
}

}  // namespace detail

struct NamedTensor {
  std::string name;
  bool trainable = true;
  Tensor value;
};

inline void save_archive(const std::filesystem::path& path,
                         const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out.write(kMagic, 4);
  detail::write_pod(out, kVersion);
  detail::write_pod(out, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::write_pod(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_pod(out, static_cast<std::uint8_t>(t.trainable ? 1 : 0));
    detail::write_pod(out, static_cast<std::uint32_t>(t.value.shape.size()));
    for (std::size_t d : t.value.shape) detail::write_pod(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.value.data.data()),
              static_cast<std::streamsize>(t.value.data.size() * sizeof(double)));
  }
  if (!out) fail(Errc::IoError, "failed writing " + path.string());
}

inline std::vector<NamedTensor> load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingFile, "checkpoint not found: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
    fail(Errc::CheckpointMismatch, path.string() + " is not a checkpoint archive");
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    fail(Errc::CheckpointMismatch,
         "unsupported archive version " + std::to_string(version));
  }
  const auto count = detail::read_pod<std::uint64_t>(in);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = detail::read_pod<std::uint32_t>(in);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    t.trainable = detail::read_pod<std::uint8_t>(in) != 0;
    const auto rank = detail::read_pod<std::uint32_t>(in);
    t.value.shape.resize(rank);
    for (auto& d : t.value.shape) {
      d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(in));
    }
    t.value.data.resize(Tensor::count(t.value.shape));
    in.read(reinterpret_cast<char*>(t.value.data.data()),
            static_cast<std::streamsize>(t.value.data.size() * sizeof(double)));
    if (!in) fail(Errc::IoError, "truncated checkpoint archive " + path.string());
    tensors.push_back(std::move(t));
  }
  return tensors;
}

// Writes <base>.ckpt plus <base>.json.
inline void save_model(const std::filesystem::path& base, modelkit::Model& model,
                       int phase, std::uint64_t seed) {
  std::vector<NamedTensor> tensors;
  for (modelkit::Parameter* p : model.parameters()) {
    tensors.push_back({p->name, p->trainable, p->value});
  }
  save_archive(base.string() + ".ckpt", tensors);

  nlohmann::json sidecar;
  sidecar["format_version"] = kVersion;
  sidecar["spec"] = spec_to_json(model.spec());
  sidecar["seed"] = seed;
  sidecar["phase"] = phase;
  std::ofstream out(base.string() + ".json");
  if (!out) fail(Errc::IoError, "cannot write sidecar for " + base.string());
  out << sidecar.dump(2) << '\n';
}

struct LoadedModel {
  modelkit::Model model;
  int phase = 1;
  std::uint64_t seed = 0;
};

inline LoadedModel load_model(const std::filesystem::path& base) {
  std::ifstream side(base.string() + ".json");
  if (!side) fail(Errc::MissingFile, "checkpoint sidecar not found: " + base.string() + ".json");
  nlohmann::json sidecar = nlohmann::json::parse(side);

  LoadedModel loaded{
      modelkit::Model(spec_from_json(sidecar.at("spec")), sidecar.at("seed").get<std::uint64_t>()),
      sidecar.at("phase").get<int>(),
      sidecar.at("seed").get<std::uint64_t>(),
  };

  std::map<std::string, Tensor> by_name;
  for (auto& t : load_archive(base.string() + ".ckpt")) by_name[t.name] = std::move(t.value);
  loaded.model.restore_parameters(by_name);
  return loaded;
}

}  // namespace retina::checkpoint
