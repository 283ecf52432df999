#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "retina/dataset.hpp"
#include "retina/errors.hpp"
#include "retina/image.hpp"
#include "retina/rng.hpp"
#include "retina/tensor.hpp"

namespace retina::modelkit {

using dataset::TaskKind;

enum class BackboneName { ResNet50, Vgg16, Vgg19, InceptionV3, InceptionResNetV2, Toy };
enum class WeightsOrigin { PretrainedImagenet, RandomHeUniform };
enum class Activation { Sigmoid, Softmax };

inline const char* backbone_name_str(BackboneName n) {
  switch (n) {
    case BackboneName::ResNet50: return "resnet50";
    case BackboneName::Vgg16: return "vgg16";
    case BackboneName::Vgg19: return "vgg19";
    case BackboneName::InceptionV3: return "inception_v3";
    case BackboneName::InceptionResNetV2: return "inception_resnet_v2";
    case BackboneName::Toy: return "toy";
  }
  return "?";
}

inline BackboneName backbone_from_name(const std::string& s) {
  if (s == "resnet50") return BackboneName::ResNet50;
  if (s == "vgg16") return BackboneName::Vgg16;
  if (s == "vgg19") return BackboneName::Vgg19;
  if (s == "inception_v3") return BackboneName::InceptionV3;
  if (s == "inception_resnet_v2") return BackboneName::InceptionResNetV2;
  if (s == "toy") return BackboneName::Toy;
  fail(Errc::ConfigError, "unknown backbone '" + s + "'");
}

struct FeatureShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  long long flat() const {
    return static_cast<long long>(height) * width * channels;
  }
};

// Toy backbone geometry: three stride-2 pooling stages, 'same' convolutions.
constexpr int kToyStages = 3;
constexpr int kToyChannels[kToyStages] = {8, 16, 16};
constexpr int kToyMinInput = 16;

inline FeatureShape toy_feature_shape(int input_size) {
  if (input_size < kToyMinInput) {
    fail(Errc::InputTooSmall, "toy backbone needs input size >= " +
                                  std::to_string(kToyMinInput));
  }
  int s = input_size;
  for (int i = 0; i < kToyStages; ++i) s /= 2;
  return {s, s, kToyChannels[kToyStages - 1]};
}

// Post-convolutional feature map per (backbone, input size). The 512-pixel
// rows flatten to 524288 (ResNet50), 131072 (VGG) and 401408 (Inception-V3).
inline FeatureShape feature_shape(BackboneName name, int input_size) {
  switch (name) {
    case BackboneName::ResNet50:
      if (input_size == 512) return {16, 16, 2048};
      if (input_size == 224) return {7, 7, 2048};
      break;
    case BackboneName::Vgg16:
    case BackboneName::Vgg19:
      if (input_size == 512) return {16, 16, 512};
      if (input_size == 224) return {7, 7, 512};
      break;
    case BackboneName::InceptionV3:
      if (input_size == 512) return {14, 14, 2048};
      if (input_size == 299) return {8, 8, 2048};
      break;
    case BackboneName::InceptionResNetV2:
      if (input_size == 299) return {8, 8, 1536};
      break;
    case BackboneName::Toy:
      return toy_feature_shape(input_size);
  }
  fail(Errc::UnsupportedCombination,
       std::string(backbone_name_str(name)) + " does not support input size " +
           std::to_string(input_size));
}

struct BackboneSpec {
  BackboneName name = BackboneName::Toy;
  int input_size = 32;
  bool frozen = true;
  WeightsOrigin origin = WeightsOrigin::RandomHeUniform;
};

struct HeadSpec {
  long long feature_count = 0;
  std::vector<int> hidden_widths;
  int output_nodes = 1;
  Activation output_activation = Activation::Sigmoid;
};

// Sigmoid/1-node for the binary task, Softmax over 3 or 5 nodes otherwise.
inline HeadSpec build_head(TaskKind task, long long feature_count,
                           std::vector<int> hidden_widths = {256, 64}) {
  if (feature_count <= 0) fail(Errc::InvalidTask, "feature_count must be positive");
  HeadSpec head;
  head.feature_count = feature_count;
  head.hidden_widths = std::move(hidden_widths);
  switch (task) {
    case TaskKind::Binary:
      head.output_nodes = 1;
      head.output_activation = Activation::Sigmoid;
      break;
    case TaskKind::Three:
      head.output_nodes = 3;
      head.output_activation = Activation::Softmax;
      break;
    case TaskKind::Five:
      head.output_nodes = 5;
      head.output_activation = Activation::Softmax;
      break;
  }
  return head;
}

struct ModelSpec {
  BackboneSpec backbone;
  HeadSpec head;
  TaskKind task = TaskKind::Binary;
};

// U(-L, L) with L = sqrt(6 / fan_in).
inline Tensor he_uniform_init(long long fan_in, std::vector<std::size_t> shape,
                              std::uint64_t seed) {
  if (fan_in <= 0) fail(Errc::InvalidFanIn, "fan_in must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() {
    grad.shape = value.shape;
    grad.data.assign(value.size(), 0.0);
  }
};

// ---------------------------------------------------------------------------
// Layers. Forward caches whatever backward needs when `training` is set.
// Batches are NHWC.

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
};

// 3x3 'same' convolution, stride 1.
class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, std::uint64_t seed)
      : in_(in_channels), out_(out_channels) {
    const long long fan_in = 3LL * 3 * in_channels;
    weight_.name = name + ".weight";
    weight_.value = he_uniform_init(
        fan_in,
        {3, 3, static_cast<std::size_t>(in_channels), static_cast<std::size_t>(out_channels)},
        seed);
    bias_.name = name + ".bias";
    bias_.value = Tensor::zeros({static_cast<std::size_t>(out_channels)});
  }

  Tensor forward(const Tensor& x, bool training) override {
    const auto [n, h, w] = dims(x);
    if (training) input_ = x;
    Tensor y({n, h, w, static_cast<std::size_t>(out_)});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          for (int oc = 0; oc < out_; ++oc) {
            double acc = bias_.value[static_cast<std::size_t>(oc)];
            for (int ky = -1; ky <= 1; ++ky) {
              const long long sy = static_cast<long long>(yy) + ky;
              if (sy < 0 || sy >= static_cast<long long>(h)) continue;
              for (int kx = -1; kx <= 1; ++kx) {
                const long long sx = static_cast<long long>(xx) + kx;
                if (sx < 0 || sx >= static_cast<long long>(w)) continue;
                const std::size_t src =
                    ((b * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)) *
                    static_cast<std::size_t>(in_);
                const std::size_t wbase =
                    ((static_cast<std::size_t>(ky + 1) * 3 + static_cast<std::size_t>(kx + 1)) *
                     static_cast<std::size_t>(in_)) *
                    static_cast<std::size_t>(out_);
                for (int ic = 0; ic < in_; ++ic) {
                  acc += x.data[src + static_cast<std::size_t>(ic)] *
                         weight_.value.data[wbase + static_cast<std::size_t>(ic) * out_ + oc];
                }
              }
            }
            y.data[((b * h + yy) * w + xx) * static_cast<std::size_t>(out_) +
                   static_cast<std::size_t>(oc)] = acc;
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    const auto [n, h, w] = dims(input_);
    weight_.zero_grad();
    bias_.zero_grad();
    Tensor grad_in(input_.shape);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t gbase =
              ((b * h + yy) * w + xx) * static_cast<std::size_t>(out_);
          for (int oc = 0; oc < out_; ++oc) {
            const double g = grad_out.data[gbase + static_cast<std::size_t>(oc)];
            if (g == 0.0) continue;
            bias_.grad[static_cast<std::size_t>(oc)] += g;
            for (int ky = -1; ky <= 1; ++ky) {
              const long long sy = static_cast<long long>(yy) + ky;
              if (sy < 0 || sy >= static_cast<long long>(h)) continue;
              for (int kx = -1; kx <= 1; ++kx) {
                const long long sx = static_cast<long long>(xx) + kx;
                if (sx < 0 || sx >= static_cast<long long>(w)) continue;
                const std::size_t src =
                    ((b * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)) *
                    static_cast<std::size_t>(in_);
                const std::size_t wbase =
                    ((static_cast<std::size_t>(ky + 1) * 3 + static_cast<std::size_t>(kx + 1)) *
                     static_cast<std::size_t>(in_)) *
                    static_cast<std::size_t>(out_);
                for (int ic = 0; ic < in_; ++ic) {
                  weight_.grad[wbase + static_cast<std::size_t>(ic) * out_ + oc] +=
                      g * input_.data[src + static_cast<std::size_t>(ic)];
                  grad_in.data[src + static_cast<std::size_t>(ic)] +=
                      g * weight_.value.data[wbase + static_cast<std::size_t>(ic) * out_ + oc];
                }
              }
            }
          }
        }
      }
    }
    return grad_in;
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

 private:
  std::tuple<std::size_t, std::size_t, std::size_t> dims(const Tensor& x) const {
    if (x.shape.size() != 4 || x.shape[3] != static_cast<std::size_t>(in_)) {
      fail(Errc::ShapeMismatch, "conv input " + x.shape_str() + ", expected NHWC with C=" +
                                    std::to_string(in_));
    }
    return {x.shape[0], x.shape[1], x.shape[2]};
  }

  int in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override {
    Tensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    if (training) mask_ = x;
    return y;
  }
  Tensor backward(const Tensor& grad_out) override {
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (mask_.data[i] <= 0.0) g.data[i] = 0.0;
    }
    return g;
  }

 private:
  Tensor mask_;
};

// 2x2 max pooling, stride 2, floor semantics on odd extents.
class MaxPool2 : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override {
    const std::size_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor y({n, oh, ow, c});
    argmax_.assign(y.size(), 0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t yy = 0; yy < oh; ++yy) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            double best = -1e300;
            std::size_t best_idx = 0;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t src =
                    ((b * h + yy * 2 + static_cast<std::size_t>(dy)) * w + xx * 2 +
                     static_cast<std::size_t>(dx)) *
                        c +
                    ch;
                if (x.data[src] > best) {
                  best = x.data[src];
                  best_idx = src;
                }
              }
            }
            const std::size_t dst = ((b * oh + yy) * ow + xx) * c + ch;
            y.data[dst] = best;
            argmax_[dst] = best_idx;
          }
        }
      }
    }
    if (training) input_shape_ = x.shape;
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor g(input_shape_);
    for (std::size_t i = 0; i < grad_out.size(); ++i) g.data[argmax_[i]] += grad_out.data[i];
    return g;
  }

 private:
  std::vector<std::size_t> argmax_;
  std::vector<std::size_t> input_shape_;
};

class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override {
    if (training) input_shape_ = x.shape;
    Tensor y = x;
    const std::size_t n = x.shape[0];
    y.shape = {n, x.size() / n};
    return y;
  }
  Tensor backward(const Tensor& grad_out) override {
    Tensor g = grad_out;
    g.shape = input_shape_;
    return g;
  }

 private:
  std::vector<std::size_t> input_shape_;
};

// y = xW + b over (batch, features) inputs.
class Dense : public Layer {
 public:
  Dense(std::string name, std::size_t in_width, std::size_t out_width, std::uint64_t seed)
      : in_(in_width), out_(out_width) {
    weight_.name = name + ".weight";
    weight_.value = he_uniform_init(static_cast<long long>(in_width), {in_width, out_width}, seed);
    bias_.name = name + ".bias";
    bias_.value = Tensor::zeros({out_width});
  }

  Tensor forward(const Tensor& x, bool training) override {
    if (x.shape.size() != 2 || x.shape[1] != in_) {
      fail(Errc::ShapeMismatch,
           "dense input " + x.shape_str() + ", expected (N," + std::to_string(in_) + ")");
    }
    if (training) input_ = x;
    const std::size_t n = x.shape[0];
    Tensor y({n, out_});
    for (std::size_t b = 0; b < n; ++b) {
      const double* row = x.data.data() + b * in_;
      double* out_row = y.data.data() + b * out_;
      for (std::size_t o = 0; o < out_; ++o) out_row[o] = bias_.value[o];
      for (std::size_t i = 0; i < in_; ++i) {
        const double xv = row[i];
        if (xv == 0.0) continue;
        const double* wrow = weight_.value.data.data() + i * out_;
        for (std::size_t o = 0; o < out_; ++o) out_row[o] += xv * wrow[o];
      }
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    const std::size_t n = input_.shape[0];
    weight_.zero_grad();
    bias_.zero_grad();
    Tensor grad_in({n, in_});
    for (std::size_t b = 0; b < n; ++b) {
      const double* grow = grad_out.data.data() + b * out_;
      const double* xrow = input_.data.data() + b * in_;
      double* girow = grad_in.data.data() + b * in_;
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += grow[o];
      for (std::size_t i = 0; i < in_; ++i) {
        double* wgrow = weight_.grad.data.data() + i * out_;
        const double* wrow = weight_.value.data.data() + i * out_;
        double acc = 0.0;
        for (std::size_t o = 0; o < out_; ++o) {
          wgrow[o] += xrow[i] * grow[o];
          acc += wrow[o] * grow[o];
        }
        girow[i] = acc;
      }
    }
    return grad_in;
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class Sequential {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  bool empty() const { return layers_.empty(); }

  Tensor forward(Tensor x, bool training) {
    for (auto& l : layers_) x = l->forward(x, training);
    return x;
  }
  Tensor backward(Tensor g) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
      for (Parameter* p : l->parameters()) out.push_back(p);
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---------------------------------------------------------------------------
// Output activations (stable forms).

inline Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  const std::size_t n = logits.shape[0], k = logits.shape[1];
  for (std::size_t b = 0; b < n; ++b) {
    double* row = p.data.data() + b * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < k; ++j) row[j] /= sum;
  }
  return p;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Cross-entropy from logits, fused with the output activation. Binary heads
// pair sigmoid with BCE, multi-class heads pair softmax with CCE; the logit
// gradient is (p - y) / N either way.

struct LossGrad {
  double loss = 0.0;
  Tensor grad_logits;
};

inline LossGrad cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& labels,
                                          Activation activation) {
  const std::size_t n = logits.shape[0];
  const std::size_t k = logits.shape[1];
  if (labels.size() != n) fail(Errc::LengthMismatch, "labels vs batch rows");

  LossGrad out;
  out.grad_logits = Tensor::zeros(logits.shape);
  double total = 0.0;

  if (activation == Activation::Sigmoid) {
    if (k != 1) fail(Errc::ShapeMismatch, "sigmoid head must have one output node");
    for (std::size_t b = 0; b < n; ++b) {
      const double z = logits.data[b];
      const double y = labels[b] ? 1.0 : 0.0;
      total += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
      out.grad_logits.data[b] = (sigmoid(z) - y) / static_cast<double>(n);
    }
  } else {
    Tensor probs = softmax(logits);
    for (std::size_t b = 0; b < n; ++b) {
      const int y = labels[b];
      if (y < 0 || static_cast<std::size_t>(y) >= k) {
        fail(Errc::LabelOutOfRange, "label " + std::to_string(y));
      }
      const double* row = logits.data.data() + b * k;
      double mx = row[0];
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double lse = 0.0;
      for (std::size_t j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
      total += mx + std::log(lse) - row[static_cast<std::size_t>(y)];
      for (std::size_t j = 0; j < k; ++j) {
        const double target = (static_cast<std::size_t>(y) == j) ? 1.0 : 0.0;
        out.grad_logits.data[b * k + j] =
            (probs.data[b * k + j] - target) / static_cast<double>(n);
      }
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Backbone adapter: how named (pretrained) feature extractors plug in without
// this toolkit re-implementing their layer graphs. The toy backbone is the
// built-in, trainable implementation used everywhere at desk scale.

class BackboneAdapter {
 public:
  virtual ~BackboneAdapter() = default;
  virtual FeatureShape shape() const = 0;
  virtual Tensor extract(const Tensor& batch_nhwc) = 0;
};

using AdapterFactory =
    std::function<std::unique_ptr<BackboneAdapter>(const BackboneSpec&)>;

inline std::map<BackboneName, AdapterFactory>& adapter_registry() {
  static std::map<BackboneName, AdapterFactory> registry;
  return registry;
}

inline void register_backbone_adapter(BackboneName name, AdapterFactory factory) {
  adapter_registry()[name] = std::move(factory);
}

// ---------------------------------------------------------------------------
// Model: backbone (toy conv stack or adapter) -> flatten -> dense head.

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    const FeatureShape fs = feature_shape(spec.backbone.name, spec.backbone.input_size);
    if (spec.head.feature_count != fs.flat()) {
      fail(Errc::ShapeMismatch,
           "head expects " + std::to_string(spec.head.feature_count) + " features, backbone yields " +
               std::to_string(fs.flat()));
    }
    const int expected_nodes = spec.task == TaskKind::Binary ? 1 : dataset::class_count(spec.task);
    if (spec.head.output_nodes != expected_nodes) {
      fail(Errc::InvalidTask, "head output nodes do not match task class count");
    }

    if (spec.backbone.name == BackboneName::Toy) {
      int ch = 3;
      for (int stage = 0; stage < kToyStages; ++stage) {
        backbone_.add(std::make_unique<Conv2d>(
            "backbone.conv" + std::to_string(stage + 1), ch, kToyChannels[stage],
            mix_seed(seed, 101, static_cast<std::uint64_t>(stage))));
        backbone_.add(std::make_unique<ReLU>());
        backbone_.add(std::make_unique<MaxPool2>());
        ch = kToyChannels[stage];
      }
    } else {
      auto it = adapter_registry().find(spec.backbone.name);
      if (it == adapter_registry().end()) {
        fail(Errc::MissingBackboneAdapter,
             std::string(backbone_name_str(spec.backbone.name)) +
                 " has no registered feature adapter; desk-scale runs use the toy backbone");
      }
      adapter_ = it->second(spec.backbone);
    }

    build_head_layers(seed);
  }

  // Fresh He-uniform head on top of whatever the backbone currently holds.
  void reinit_head(std::uint64_t seed) { build_head_layers(seed); }

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  bool backbone_frozen() const { return spec_.backbone.frozen; }

  void set_backbone_frozen(bool frozen) {
    spec_.backbone.frozen = frozen;
    for (Parameter* p : backbone_.parameters()) p->trainable = !frozen;
  }

  // Feature extraction. Training mode caches activations for backward.
  Tensor features(const Tensor& batch, bool training = false) {
    check_batch(batch);
    if (adapter_) return adapter_->extract(batch);
    return backbone_.forward(batch, training);
  }

  Tensor head_logits(const Tensor& feats, bool training = false) {
    return head_.forward(feats, training);
  }

  // Probabilities: (N,1) sigmoid scores for binary, (N,k) softmax rows otherwise.
  Tensor activate(const Tensor& logits) const {
    if (spec_.head.output_activation == Activation::Softmax) return softmax(logits);
    Tensor p = logits;
    for (double& v : p.data) v = sigmoid(v);
    return p;
  }

  Tensor forward(const Tensor& batch, bool training = false) {
    return activate(head_logits(features(batch, training), training));
  }

  // Backward from d(loss)/d(logits). Returns d(loss)/d(features); the backbone
  // is only traversed when it is trainable.
  void backward(const Tensor& grad_logits) {
    Tensor grad_feats = head_.backward(grad_logits);
    if (!adapter_ && !spec_.backbone.frozen) backbone_.backward(std::move(grad_feats));
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : backbone_.parameters()) {
      p->trainable = !spec_.backbone.frozen;
      out.push_back(p);
    }
    for (Parameter* p : head_.parameters()) out.push_back(p);
    return out;
  }

  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : parameters()) {
      if (p->trainable) out.push_back(p);
    }
    return out;
  }

  std::map<std::string, Tensor> snapshot_parameters() {
    std::map<std::string, Tensor> out;
    for (Parameter* p : parameters()) out[p->name] = p->value;
    return out;
  }

  void restore_parameters(const std::map<std::string, Tensor>& snap) {
    for (Parameter* p : parameters()) {
      auto it = snap.find(p->name);
      if (it == snap.end()) {
        fail(Errc::CheckpointMismatch, "missing tensor '" + p->name + "'");
      }
      if (!p->value.same_shape(it->second)) {
        fail(Errc::CheckpointMismatch, "shape mismatch for tensor '" + p->name + "'");
      }
      p->value = it->second;
    }
  }

 private:
  void build_head_layers(std::uint64_t seed) {
    head_ = Sequential();
    std::size_t width = static_cast<std::size_t>(spec_.head.feature_count);
    head_.add(std::make_unique<Flatten>());
    int layer_no = 1;
    for (int hidden : spec_.head.hidden_widths) {
      head_.add(std::make_unique<Dense>("head.dense" + std::to_string(layer_no), width,
                                        static_cast<std::size_t>(hidden),
                                        mix_seed(seed, 202, static_cast<std::uint64_t>(layer_no))));
      head_.add(std::make_unique<ReLU>());
      width = static_cast<std::size_t>(hidden);
      ++layer_no;
    }
    head_.add(std::make_unique<Dense>("head.output", width,
                                      static_cast<std::size_t>(spec_.head.output_nodes),
                                      mix_seed(seed, 202, static_cast<std::uint64_t>(layer_no))));
  }

  void check_batch(const Tensor& batch) const {
    const std::size_t s = static_cast<std::size_t>(spec_.backbone.input_size);
    if (batch.shape.size() != 4 || batch.shape[1] != s || batch.shape[2] != s ||
        batch.shape[3] != 3) {
      fail(Errc::ShapeMismatch, "batch " + batch.shape_str() + ", expected (N," +
                                    std::to_string(s) + "," + std::to_string(s) + ",3)");
    }
  }

  ModelSpec spec_;
  std::uint64_t seed_;
  Sequential backbone_;
  Sequential head_;
  std::unique_ptr<BackboneAdapter> adapter_;
};

// Convenience constructor for the desk-scale configuration.
inline Model make_toy_model(TaskKind task, int input_size, std::uint64_t seed,
                            std::vector<int> hidden_widths = {256, 64}, bool frozen = true) {
  ModelSpec spec;
  spec.backbone = {BackboneName::Toy, input_size, frozen, WeightsOrigin::RandomHeUniform};
  spec.head = build_head(task, toy_feature_shape(input_size).flat(), std::move(hidden_widths));
  spec.task = task;
  Model model(std::move(spec), seed);
  model.set_backbone_frozen(frozen);
  return model;
}

// Converts 8-bit images to a [0,1]-scaled NHWC batch.
inline Tensor to_batch(const std::vector<const ImageBuffer*>& images) {
  if (images.empty()) fail(Errc::EmptyVector, "empty batch");
  const int s = images[0]->width;
  Tensor batch({images.size(), static_cast<std::size_t>(s), static_cast<std::size_t>(s), 3});
  std::size_t pos = 0;
  for (const ImageBuffer* img : images) {
    if (img->width != s || img->height != s) {
      fail(Errc::ShapeMismatch, "mixed image sizes in one batch");
    }
    for (std::size_t i = 0; i < img->data.size(); ++i) {
      batch.data[pos++] = static_cast<double>(img->data[i]) / 255.0;
    }
  }
  return batch;
}

}  // namespace retina::modelkit
