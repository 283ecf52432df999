#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retina/errors.hpp"
#include "retina/image.hpp"
#include "retina/metrics.hpp"
#include "retina/modelkit.hpp"
#include "retina/rng.hpp"
#include "retina/tensor.hpp"

namespace retina::trainer {

using modelkit::Activation;
using modelkit::Model;
using modelkit::Parameter;
using modelkit::WeightsOrigin;

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.0;  // SGD only
};

enum class Phase { One, Two };

// Phase one trains the head on a frozen backbone at 1e-3; phase two unfreezes
// and drops the rate by a factor of 10.
struct PhaseConfig {
  Phase phase = Phase::One;
  double learning_rate = 1e-3;
  bool backbone_frozen = true;
  WeightsOrigin init = WeightsOrigin::PretrainedImagenet;

  static PhaseConfig one() { return {Phase::One, 1e-3, true, WeightsOrigin::PretrainedImagenet}; }
  static PhaseConfig two() { return {Phase::Two, 1e-4, false, WeightsOrigin::RandomHeUniform}; }
};

struct TrainConfig {
  PhaseConfig phase = PhaseConfig::one();
  OptimizerConfig optimizer;
  int batch_size = 16;
  int max_epochs = 50;
  int patience = 1;
  std::uint64_t seed = 0;
  bool cache_frozen_features = true;
};

struct EpochStats {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  long long wall_ms = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 1-based epoch index
  std::map<std::string, Tensor> best_parameters;
  bool stopped_early = false;
};

// ---------------------------------------------------------------------------
// Optimizer steps.

inline void sgd_step(Tensor& param, const Tensor& grad, double lr) {
  require_same_shape(param, grad, "sgd_step");
  for (std::size_t i = 0; i < param.size(); ++i) param.data[i] -= lr * grad.data[i];
}

struct AdamState {
  Tensor m;
  Tensor v;
  long long t = 0;
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
                      const OptimizerConfig& cfg) {
  require_same_shape(param, grad, "adam_step");
  if (state.t == 0) {
    state.m = Tensor::zeros(param.shape);
    state.v = Tensor::zeros(param.shape);
  }
  require_same_shape(param, state.m, "adam_step state");
  const long long t = state.t + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data[i];
    state.m.data[i] = cfg.beta1 * state.m.data[i] + (1.0 - cfg.beta1) * g;
    state.v.data[i] = cfg.beta2 * state.v.data[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m.data[i] / bc1;
    const double v_hat = state.v.data[i] / bc2;
    param.data[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
  state.t = t;
}

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }

  void step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      if (p->grad.size() != p->value.size()) continue;  // no gradient this step
      if (cfg_.kind == OptimizerKind::Sgd) {
        if (cfg_.momentum != 0.0) {
          Tensor& vel = velocity_[p->name];
          if (vel.size() != p->value.size()) vel = Tensor::zeros(p->value.shape);
          for (std::size_t i = 0; i < vel.size(); ++i) {
            vel.data[i] = cfg_.momentum * vel.data[i] + p->grad.data[i];
            p->value.data[i] -= cfg_.learning_rate * vel.data[i];
          }
        } else {
          sgd_step(p->value, p->grad, cfg_.learning_rate);
        }
      } else {
        adam_step(p->value, p->grad, adam_states_[p->name], cfg_);
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, AdamState> adam_states_;
  std::map<std::string, Tensor> velocity_;
};

// ---------------------------------------------------------------------------
// Early stopping: stop once validation accuracy has sat strictly below its
// running maximum for `patience` consecutive epochs. The best epoch is the
// earliest argmax, 1-based.

struct StopDecision {
  bool stop = false;
  int best_epoch = 0;
};

inline StopDecision early_stopping(const std::vector<double>& val_accuracy_history,
                                   int patience = 1) {
  if (val_accuracy_history.empty()) fail(Errc::EmptyVector, "empty validation history");
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int streak = 0;
  for (std::size_t i = 0; i < val_accuracy_history.size(); ++i) {
    const double v = val_accuracy_history[i];
    if (v > best) {
      best = v;
      best_epoch = static_cast<int>(i) + 1;
    }
    if (v < best) {
      ++streak;
    } else {
      streak = 0;
    }
  }
  return {streak >= patience, best_epoch};
}

// ---------------------------------------------------------------------------
// Sample access. Sources hand out final training pixels; synthetic-record
// augmentation happens in the source, not the loop.

struct Sample {
  ImageBuffer image;
  int label = 0;
};

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Sample get(std::size_t index) const = 0;
};

class MemorySampleSource : public SampleSource {
 public:
  MemorySampleSource() = default;
  explicit MemorySampleSource(std::vector<Sample> samples) : samples_(std::move(samples)) {}

  void add(ImageBuffer image, int label) { samples_.push_back({std::move(image), label}); }

  std::size_t size() const override { return samples_.size(); }
  Sample get(std::size_t index) const override { return samples_.at(index); }

 private:
  std::vector<Sample> samples_;
};

namespace detail {

inline std::vector<int> decide(const Tensor& probs, Activation activation) {
  const std::size_t n = probs.shape[0];
  const std::size_t k = probs.shape[1];
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (activation == Activation::Sigmoid) {
      labels[i] = metrics::binary_decision(std::clamp(probs.data[i], 0.0, 1.0));
    } else {
      std::vector<double> row(probs.data.begin() + static_cast<std::ptrdiff_t>(i * k),
                              probs.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      labels[i] = metrics::argmax_decision(row);
    }
  }
  return labels;
}

// Precomputed flattened backbone features, one row per sample.
class FeatureTable {
 public:
  FeatureTable(Model& model, const SampleSource& src) {
    const std::size_t n = src.size();
    rows_.reserve(n);
    labels_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Sample s = src.get(i);
      Tensor batch = modelkit::to_batch({&s.image});
      Tensor feats = model.features(batch, false);
      feats.shape = {1, feats.size()};
      rows_.push_back(std::move(feats));
      labels_.push_back(s.label);
    }
  }

  std::size_t size() const { return rows_.size(); }
  int label(std::size_t i) const { return labels_[i]; }

  Tensor gather(const std::vector<std::size_t>& indices) const {
    const std::size_t width = rows_.empty() ? 0 : rows_[0].size();
    Tensor batch({indices.size(), width});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      std::copy(rows_[indices[r]].data.begin(), rows_[indices[r]].data.end(),
                batch.data.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    return batch;
  }

 private:
  std::vector<Tensor> rows_;
  std::vector<int> labels_;
};

}  // namespace detail

// Probability rows for every sample in the source (batched forward, eval mode).
inline std::vector<std::vector<double>> predict(Model& model, const SampleSource& src,
                                                int batch_size = 16) {
  std::vector<std::vector<double>> out;
  out.reserve(src.size());
  std::vector<Sample> chunk;
  for (std::size_t i = 0; i < src.size(); i += static_cast<std::size_t>(batch_size)) {
    chunk.clear();
    const std::size_t end = std::min(src.size(), i + static_cast<std::size_t>(batch_size));
    std::vector<const ImageBuffer*> ptrs;
    for (std::size_t j = i; j < end; ++j) {
      chunk.push_back(src.get(j));
    }
    for (const auto& s : chunk) ptrs.push_back(&s.image);
    Tensor probs = model.forward(modelkit::to_batch(ptrs), false);
    const std::size_t k = probs.shape[1];
    for (std::size_t r = 0; r < probs.shape[0]; ++r) {
      out.emplace_back(probs.data.begin() + static_cast<std::ptrdiff_t>(r * k),
                       probs.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
    }
  }
  return out;
}

inline double evaluate_accuracy(Model& model, const SampleSource& src, int batch_size = 16) {
  if (src.size() == 0) fail(Errc::EmptyVector, "empty evaluation source");
  auto probs = predict(model, src, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    int pred;
    if (model.spec().head.output_activation == Activation::Sigmoid) {
      pred = metrics::binary_decision(std::clamp(probs[i][0], 0.0, 1.0));
    } else {
      pred = metrics::argmax_decision(probs[i]);
    }
    if (pred == src.get(i).label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(src.size());
}

// Seeded shuffled mini-batch epochs with per-epoch validation, early stopping
// and best-weight restoration. When the backbone is frozen its features are
// computed once per sample and the loop trains the head alone; the arithmetic
// is identical either way.
inline TrainResult train(Model& model, const SampleSource& train_src,
                         const SampleSource& val_src, const TrainConfig& cfg,
                         std::ostream* jsonl_log = nullptr) {
  if (train_src.size() == 0 || val_src.size() == 0) {
    fail(Errc::EmptyManifest, "train and validation splits must be non-empty");
  }
  if (cfg.batch_size < 1 || cfg.max_epochs < 1) {
    fail(Errc::ConfigError, "batch_size and max_epochs must be >= 1");
  }

  model.set_backbone_frozen(cfg.phase.backbone_frozen);
  const Activation activation = model.spec().head.output_activation;
  Optimizer opt(cfg.optimizer);

  const bool use_cache = cfg.phase.backbone_frozen && cfg.cache_frozen_features;
  std::unique_ptr<detail::FeatureTable> train_feats, val_feats;
  if (use_cache) {
    train_feats = std::make_unique<detail::FeatureTable>(model, train_src);
    val_feats = std::make_unique<detail::FeatureTable>(model, val_src);
  }

  auto val_accuracy = [&]() {
    if (!use_cache) return evaluate_accuracy(model, val_src, cfg.batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val_feats->size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(val_feats->size(), i + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> idx(end - i);
      std::iota(idx.begin(), idx.end(), i);
      Tensor probs = model.activate(model.head_logits(val_feats->gather(idx), false));
      auto preds = detail::decide(probs, activation);
      for (std::size_t j = 0; j < preds.size(); ++j) {
        if (preds[j] == val_feats->label(i + j)) ++correct;
      }
    }
    return static_cast<double>(correct) / static_cast<double>(val_feats->size());
  };

  TrainResult result;
  std::vector<double> val_history;
  double best_val = -std::numeric_limits<double>::infinity();
  const std::size_t n_train = train_src.size();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, 0x5eedULL, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      labels.reserve(idx.size());

      Tensor logits;
      if (use_cache) {
        for (std::size_t i : idx) labels.push_back(train_feats->label(i));
        logits = model.head_logits(train_feats->gather(idx), true);
      } else {
        std::vector<Sample> samples;
        samples.reserve(idx.size());
        for (std::size_t i : idx) samples.push_back(train_src.get(i));
        std::vector<const ImageBuffer*> ptrs;
        for (const auto& s : samples) {
          ptrs.push_back(&s.image);
          labels.push_back(s.label);
        }
        logits = model.head_logits(model.features(modelkit::to_batch(ptrs), true), true);
      }

      auto lg = modelkit::cross_entropy_from_logits(logits, labels, activation);
      if (!std::isfinite(lg.loss)) {
        fail(Errc::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch at sample " +
                                      std::to_string(start));
      }
      loss_sum += lg.loss * static_cast<double>(idx.size());

      auto preds = detail::decide(model.activate(logits), activation);
      for (std::size_t j = 0; j < preds.size(); ++j) {
        if (preds[j] == labels[j]) ++correct;
      }

      model.backward(lg.grad_logits);
      opt.step(model.parameters());
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(n_train);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(n_train);
    stats.val_acc = val_accuracy();
    stats.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    result.history.push_back(stats);
    val_history.push_back(stats.val_acc);

    if (stats.val_acc > best_val) {
      best_val = stats.val_acc;
      result.best_epoch = epoch;
      result.best_parameters = model.snapshot_parameters();
    }

    if (jsonl_log) {
      nlohmann::json line = {
          {"epoch", epoch},          {"train_loss", stats.train_loss},
          {"train_acc", stats.train_acc}, {"val_acc", stats.val_acc},
          {"wall_ms", stats.wall_ms},
      };
      (*jsonl_log) << line.dump() << '\n';
    }

    const StopDecision decision = early_stopping(val_history, cfg.patience);
    if (decision.stop) {
      result.stopped_early = true;
      break;
    }
  }

  model.restore_parameters(result.best_parameters);
  return result;
}

}  // namespace retina::trainer
