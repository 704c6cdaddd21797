#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eggscan/classes.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"
#include "eggscan/patching.hpp"
#include "eggscan/rng.hpp"

namespace eggscan {

// 5-way distribution over (AL, HD, FB, Tn, BG).
struct ClassProbabilities {
  std::array<double, kNumClasses> p{};

  double operator[](EggClass c) const { return p[static_cast<int>(c)]; }

  EggClass argmax() const {
    int best = 0;
    for (int i = 1; i < kNumClasses; ++i)
      if (p[i] > p[best]) best = i;
    return static_cast<EggClass>(best);
  }

  void check_valid() const {
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0 && v <= 1.0))
        throw invalid_input("probability outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw invalid_input("probabilities sum to " + std::to_string(sum));
  }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  int batch_size = 100;
  int max_epochs = 20;
  double validation_fraction = 0.3;
  std::uint64_t seed = 0;

  void check_valid() const {
    if (!(learning_rate > 0.0))
      throw config_error("train.learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw config_error("train.momentum must be in [0,1)");
    if (batch_size < 1) throw config_error("train.batch_size must be >= 1");
    if (max_epochs < 1) throw config_error("train.max_epochs must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw config_error("train.validation_fraction must be in (0,1)");
  }
};

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int selected_epoch = 0;  // first epoch attaining the minimum val_loss
};

// First index attaining the minimal validation loss.
inline int select_checkpoint(const std::vector<EpochStats>& epochs) {
  if (epochs.empty()) throw invalid_input("select_checkpoint: empty history");
  int best = 0;
  for (int i = 1; i < static_cast<int>(epochs.size()); ++i)
    if (epochs[i].val_loss < epochs[best].val_loss) best = i;
  return best;
}

// Bilinear resampling with half-pixel-center mapping:
// source coord = (dst + 0.5) * scale - 0.5, clamped to the source extent.
inline ImageBuffer resize_patch(const ImageBuffer& patch, int target_side) {
  patch.check_valid();
  if (patch.channels != 1)
    throw invalid_input("resize_patch expects a 1-channel patch");
  if (target_side < 1) throw invalid_input("resize_patch: target_side < 1");

  ImageBuffer out(target_side, target_side, 1);
  const double sx = static_cast<double>(patch.width) / target_side;
  const double sy = static_cast<double>(patch.height) / target_side;
  for (int dy = 0; dy < target_side; ++dy) {
    double fy = (dy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(patch.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, patch.height - 1);
    const double wy = fy - y0;
    for (int dx = 0; dx < target_side; ++dx) {
      double fx = (dx + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(patch.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, patch.width - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * patch.at(x0, y0) + wx * patch.at(x1, y0);
      const double bot = (1.0 - wx) * patch.at(x0, y1) + wx * patch.at(x1, y1);
      out.at(dx, dy) = clamp_u8((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

// Numerically stable softmax (invariant to a constant shift of the logits).
inline std::vector<double> softmax(std::span<const double> logits) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double z : logits) peak = std::max(peak, z);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// One SGDM step, elementwise: v <- momentum*v - lr*g; w <- w + v.
inline void sgdm_update(std::span<double> weights, std::span<double> velocity,
                        std::span<const double> gradients, double learning_rate,
                        double momentum) {
  if (weights.size() != velocity.size() || weights.size() != gradients.size())
    throw invalid_input("sgdm_update: shape mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(gradients[i]))
      throw error("sgdm_update: non-finite gradient at index " +
                  std::to_string(i));
    velocity[i] = momentum * velocity[i] - learning_rate * gradients[i];
    weights[i] += velocity[i];
  }
}

// Fully connected in -> hidden (tanh) -> out (softmax) network. Parameters
// live in one flat vector, ordered w1, b1, w2, b2, so optimizer steps and
// finite-difference checks can treat the model as a single parameter vector.
class Mlp {
 public:
  Mlp(int in_dim, int hidden_dim, int out_dim)
      : in_(in_dim), hidden_(hidden_dim), out_(out_dim),
        params_(param_count(), 0.0) {
    if (in_dim < 1 || hidden_dim < 1 || out_dim < 2)
      throw invalid_input("Mlp: bad dimensions");
  }

  int in_dim() const { return in_; }
  int hidden_dim() const { return hidden_; }
  int out_dim() const { return out_; }

  std::size_t param_count() const {
    return static_cast<std::size_t>(hidden_) * in_ + hidden_ +
           static_cast<std::size_t>(out_) * hidden_ + out_;
  }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Hidden layer gets scaled uniform init; the output layer starts at zero,
  // which keeps the initial distribution uniform and the class order
  // interchangeable.
  void init_weights(std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    const std::size_t w1_end = static_cast<std::size_t>(hidden_) * in_;
    for (std::size_t i = 0; i < w1_end; ++i)
      params_[i] = rng.uniform(-bound, bound);
    for (std::size_t i = w1_end; i < params_.size(); ++i) params_[i] = 0.0;
  }

  // Forward pass over a batch (inputs flattened row-per-sample, values in
  // [0,1]). Writes one distribution per sample into probs_out (size
  // batch*out_dim). With labels, returns mean cross-entropy; otherwise 0.
  // With grads_out, also accumulates the analytic gradient of that loss.
  double run_batch(std::span<const float> inputs, int batch, const int* labels,
                   double* probs_out, double* grads_out) const {
    if (inputs.size() != static_cast<std::size_t>(batch) * in_)
      throw invalid_input("Mlp: input size does not match batch");
    for (float v : inputs)
      if (!std::isfinite(v)) throw invalid_input("Mlp: non-finite input");

    const double* w1 = params_.data();
    const double* b1 = w1 + static_cast<std::size_t>(hidden_) * in_;
    const double* w2 = b1 + hidden_;
    const double* b2 = w2 + static_cast<std::size_t>(out_) * hidden_;

    double* g_w1 = nullptr;
    double* g_b1 = nullptr;
    double* g_w2 = nullptr;
    double* g_b2 = nullptr;
    if (grads_out) {
      std::fill(grads_out, grads_out + param_count(), 0.0);
      g_w1 = grads_out;
      g_b1 = g_w1 + static_cast<std::size_t>(hidden_) * in_;
      g_w2 = g_b1 + hidden_;
      g_b2 = g_w2 + static_cast<std::size_t>(out_) * hidden_;
    }

    std::vector<double> hidden(hidden_);
    std::vector<double> logits(out_);
    std::vector<double> dlogits(out_);
    double loss = 0.0;
    const double inv_batch = 1.0 / batch;

    for (int s = 0; s < batch; ++s) {
      const float* x = inputs.data() + static_cast<std::size_t>(s) * in_;
      for (int j = 0; j < hidden_; ++j) {
        const double* row = w1 + static_cast<std::size_t>(j) * in_;
        double acc = b1[j];
        for (int i = 0; i < in_; ++i) acc += row[i] * x[i];
        hidden[j] = std::tanh(acc);
      }
      for (int c = 0; c < out_; ++c) {
        const double* row = w2 + static_cast<std::size_t>(c) * hidden_;
        double acc = b2[c];
        for (int j = 0; j < hidden_; ++j) acc += row[j] * hidden[j];
        logits[c] = acc;
      }
      const std::vector<double> probs = softmax(logits);
      if (probs_out)
        std::copy(probs.begin(), probs.end(),
                  probs_out + static_cast<std::size_t>(s) * out_);

      if (!labels) continue;
      const int label = labels[s];
      if (label < 0 || label >= out_)
        throw invalid_input("Mlp: label out of range");
      loss += -std::log(std::max(probs[label], 1e-300)) * inv_batch;

      if (!grads_out) continue;
      for (int c = 0; c < out_; ++c)
        dlogits[c] = (probs[c] - (c == label ? 1.0 : 0.0)) * inv_batch;
      for (int c = 0; c < out_; ++c) {
        const double d = dlogits[c];
        g_b2[c] += d;
        double* grow = g_w2 + static_cast<std::size_t>(c) * hidden_;
        for (int j = 0; j < hidden_; ++j) grow[j] += d * hidden[j];
      }
      for (int j = 0; j < hidden_; ++j) {
        double dh = 0.0;
        for (int c = 0; c < out_; ++c)
          dh += w2[static_cast<std::size_t>(c) * hidden_ + j] * dlogits[c];
        const double da = dh * (1.0 - hidden[j] * hidden[j]);
        g_b1[j] += da;
        double* grow = g_w1 + static_cast<std::size_t>(j) * in_;
        for (int i = 0; i < in_; ++i) grow[i] += da * x[i];
      }
    }
    return loss;
  }

 private:
  int in_;
  int hidden_;
  int out_;
  std::vector<double> params_;
};

inline constexpr int kReferenceInputSide = 32;
inline constexpr int kReferenceHidden = 64;

// The built-in trainable patch classifier. Stand-in for a real CNN: small
// enough to train on a laptop CPU, wired through the same resize/normalize
// path as external backends.
struct ReferenceModel {
  int input_side = kReferenceInputSide;
  Mlp net{kReferenceInputSide * kReferenceInputSide, kReferenceHidden,
          kNumClasses};

  // Classify resized u8 patches (raw bytes, one patch per input_side^2
  // block); pixel values are scaled to [0,1].
  std::vector<ClassProbabilities> classify_raw(
      std::span<const std::uint8_t> bytes, int count) const {
    const std::size_t dim = static_cast<std::size_t>(input_side) * input_side;
    if (bytes.size() != dim * count)
      throw invalid_input("classify_raw: byte count mismatch");
    std::vector<float> inputs(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      inputs[i] = static_cast<float>(bytes[i]) / 255.0f;
    std::vector<double> probs(static_cast<std::size_t>(count) * kNumClasses);
    net.run_batch(inputs, count, nullptr, probs.data(), nullptr);
    std::vector<ClassProbabilities> out(count);
    for (int s = 0; s < count; ++s)
      for (int c = 0; c < kNumClasses; ++c)
        out[s].p[c] = probs[static_cast<std::size_t>(s) * kNumClasses + c];
    return out;
  }
};

// Training inputs prepared once: patches resized to input_side and scaled
// to [0,1], labels as class indices.
struct PreparedSet {
  int input_dim = 0;
  std::vector<float> inputs;  // size * input_dim, row per sample
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  void append(const ImageBuffer& patch, EggClass label, int input_side) {
    const ImageBuffer resized =
        (patch.width == input_side && patch.height == input_side)
            ? patch
            : resize_patch(patch, input_side);
    input_dim = input_side * input_side;
    for (std::uint8_t b : resized.pixels)
      inputs.push_back(static_cast<float>(b) / 255.0f);
    labels.push_back(static_cast<int>(label));
  }
};

inline PreparedSet prepare_training_set(const std::vector<LabeledPatch>& set,
                                        int input_side = kReferenceInputSide) {
  PreparedSet out;
  out.input_dim = input_side * input_side;
  out.inputs.reserve(set.size() * static_cast<std::size_t>(out.input_dim));
  out.labels.reserve(set.size());
  for (const LabeledPatch& lp : set)
    out.append(lp.patch, lp.label, input_side);
  return out;
}

namespace detail {
// round(fraction * n), half up.
inline std::size_t validation_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * n));
}

inline double evaluate_split(const Mlp& net, const PreparedSet& data,
                             const std::vector<std::size_t>& indices,
                             int batch_size, double* accuracy_out) {
  const int dim = data.input_dim;
  std::vector<float> batch_x;
  std::vector<int> batch_y;
  std::vector<double> probs;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(
        indices.size(), start + static_cast<std::size_t>(batch_size));
    const int b = static_cast<int>(end - start);
    batch_x.resize(static_cast<std::size_t>(b) * dim);
    batch_y.resize(b);
    for (int s = 0; s < b; ++s) {
      const std::size_t idx = indices[start + s];
      std::copy_n(data.inputs.begin() + idx * dim, dim,
                  batch_x.begin() + static_cast<std::size_t>(s) * dim);
      batch_y[s] = data.labels[idx];
    }
    probs.resize(static_cast<std::size_t>(b) * net.out_dim());
    const double mean_loss =
        net.run_batch(batch_x, b, batch_y.data(), probs.data(), nullptr);
    loss_sum += mean_loss * b;
    for (int s = 0; s < b; ++s) {
      const double* row = probs.data() + static_cast<std::size_t>(s) * net.out_dim();
      int best = 0;
      for (int c = 1; c < net.out_dim(); ++c)
        if (row[c] > row[best]) best = c;
      if (best == batch_y[s]) ++correct;
    }
  }
  if (accuracy_out)
    *accuracy_out = indices.empty()
                        ? 0.0
                        : static_cast<double>(correct) / indices.size();
  return indices.empty() ? 0.0 : loss_sum / indices.size();
}
}  // namespace detail

struct TrainResult {
  ReferenceModel model;
  TrainHistory history;
};

// SGDM training over a prepared sample set. Deterministic given config.seed:
// one seeded shuffle carves off round(validation_fraction*N) validation
// items, then each epoch reshuffles the training items, walks mini-batches
// (final short batch kept), and applies one SGDM step per batch. The
// returned weights are the snapshot from the first epoch attaining the
// minimum validation loss.
inline TrainResult train_prepared(const PreparedSet& data,
                                  const TrainConfig& config,
                                  int input_side = kReferenceInputSide,
                                  int hidden = kReferenceHidden) {
  config.check_valid();
  const std::size_t n = data.size();
  if (n == 0) throw config_error("train: empty training set");
  if (data.input_dim != input_side * input_side)
    throw invalid_input("train: prepared input dim does not match input_side");
  {
    std::vector<bool> seen(kNumClasses, false);
    int distinct = 0;
    for (int label : data.labels)
      if (!seen[label]) {
        seen[label] = true;
        ++distinct;
      }
    if (distinct < 2)
      throw config_error("train: set must contain at least 2 classes");
  }
  if (n < static_cast<std::size_t>(config.batch_size))
    throw config_error("train: set smaller than one batch");

  ReferenceModel model;
  model.input_side = input_side;
  model.net = Mlp(input_side * input_side, hidden, kNumClasses);
  model.net.init_weights(mix_seed(config.seed, 0));

  Rng rng(mix_seed(config.seed, 1));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t n_val =
      detail::validation_count(n, config.validation_fraction);
  if (n_val == 0 || n_val >= n)
    throw config_error("train: validation_fraction leaves an empty split");
  std::vector<std::size_t> val_idx(order.begin(),
                                   order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_val),
                                     order.end());

  std::vector<double> velocity(model.net.param_count(), 0.0);
  std::vector<double> grads(model.net.param_count());
  std::vector<float> batch_x;
  std::vector<int> batch_y;
  std::vector<double> probs;
  const int dim = data.input_dim;

  TrainHistory history;
  std::vector<double> best_params;
  double best_val_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(train_idx.size(),
                   start + static_cast<std::size_t>(config.batch_size));
      const int b = static_cast<int>(end - start);
      batch_x.resize(static_cast<std::size_t>(b) * dim);
      batch_y.resize(b);
      for (int s = 0; s < b; ++s) {
        const std::size_t idx = train_idx[start + s];
        std::copy_n(data.inputs.begin() + idx * dim, dim,
                    batch_x.begin() + static_cast<std::size_t>(s) * dim);
        batch_y[s] = data.labels[idx];
      }
      probs.resize(static_cast<std::size_t>(b) * kNumClasses);
      const double mean_loss = model.net.run_batch(
          batch_x, b, batch_y.data(), probs.data(), grads.data());
      loss_sum += mean_loss * b;
      for (int s = 0; s < b; ++s) {
        const double* row = probs.data() + static_cast<std::size_t>(s) * kNumClasses;
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c)
          if (row[c] > row[best]) best = c;
        if (best == batch_y[s]) ++correct;
      }
      sgdm_update(model.net.params(), velocity, grads, config.learning_rate,
                  config.momentum);
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(train_idx.size());
    stats.train_accuracy =
        static_cast<double>(correct) / static_cast<double>(train_idx.size());
    stats.val_loss = detail::evaluate_split(model.net, data, val_idx,
                                            config.batch_size,
                                            &stats.val_accuracy);
    history.epochs.push_back(stats);

    if (stats.val_loss < best_val_loss) {  // strict: keeps the first minimum
      best_val_loss = stats.val_loss;
      best_params = model.net.params();
      history.selected_epoch = epoch;
    }
  }

  model.net.params() = best_params;
  return {std::move(model), std::move(history)};
}

inline TrainResult train(const std::vector<LabeledPatch>& set,
                         const TrainConfig& config,
                         int input_side = kReferenceInputSide,
                         int hidden = kReferenceHidden) {
  return train_prepared(prepare_training_set(set, input_side), config,
                        input_side, hidden);
}

// ---- Model serialization -------------------------------------------------
// <path>: flat little-endian float32 stream (w1, b1, w2, b2).
// <path>.json sidecar: shapes, input_side, seed, selected_epoch.

struct ModelMeta {
  std::uint64_t seed = 0;
  int selected_epoch = 0;
};

inline std::string model_sidecar_path(const std::string& bin_path) {
  return bin_path + ".json";
}

inline void save_model(const ReferenceModel& model, const std::string& path,
                       const ModelMeta& meta = {}) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw io_error("cannot write model: " + path);
  std::vector<float> flat(model.net.params().size());
  for (std::size_t i = 0; i < flat.size(); ++i)
    flat[i] = static_cast<float>(model.net.params()[i]);
  bin.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (!bin) throw io_error("short write on model: " + path);
  bin.close();

  std::ofstream side(model_sidecar_path(path));
  if (!side) throw io_error("cannot write sidecar: " + model_sidecar_path(path));
  side << "{\n"
       << "  \"format\": \"eggscan-model-v1\",\n"
       << "  \"input_side\": " << model.input_side << ",\n"
       << "  \"hidden\": " << model.net.hidden_dim() << ",\n"
       << "  \"classes\": [\"AL\", \"HD\", \"FB\", \"Tn\", \"BG\"],\n"
       << "  \"layer_shapes\": [[" << model.net.hidden_dim() << ", "
       << model.net.in_dim() << "], [" << model.net.hidden_dim() << "], ["
       << model.net.out_dim() << ", " << model.net.hidden_dim() << "], ["
       << model.net.out_dim() << "]],\n"
       << "  \"param_count\": " << model.net.param_count() << ",\n"
       << "  \"seed\": " << meta.seed << ",\n"
       << "  \"selected_epoch\": " << meta.selected_epoch << "\n"
       << "}\n";
}

inline ReferenceModel load_model(const std::string& path,
                                 ModelMeta* meta_out = nullptr) {
  std::ifstream side(model_sidecar_path(path));
  if (!side) throw io_error("cannot read sidecar: " + model_sidecar_path(path));
  nlohmann::json j;
  try {
    side >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("malformed model sidecar: " + std::string(e.what()));
  }
  if (j.value("format", "") != std::string("eggscan-model-v1"))
    throw io_error("unrecognized model format in " + model_sidecar_path(path));

  ReferenceModel model;
  model.input_side = j.at("input_side").get<int>();
  const int hidden = j.at("hidden").get<int>();
  model.net = Mlp(model.input_side * model.input_side, hidden, kNumClasses);
  const std::size_t expected = j.at("param_count").get<std::size_t>();
  if (expected != model.net.param_count())
    throw io_error("model sidecar param_count mismatch");
  if (meta_out) {
    meta_out->seed = j.value("seed", std::uint64_t{0});
    meta_out->selected_epoch = j.value("selected_epoch", 0);
  }

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw io_error("cannot read model: " + path);
  std::vector<float> flat(model.net.param_count());
  bin.read(reinterpret_cast<char*>(flat.data()),
           static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (bin.gcount() !=
      static_cast<std::streamsize>(flat.size() * sizeof(float)))
    throw io_error("model file truncated: " + path);
  for (std::size_t i = 0; i < flat.size(); ++i)
    model.net.params()[i] = static_cast<double>(flat[i]);
  return model;
}

}  // namespace eggscan
