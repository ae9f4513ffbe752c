#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "prunekit/container.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/sfp.hpp"

namespace prunekit {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct ConvLayer {
  std::string name;
  std::size_t out_ch = 0;
  std::size_t in_ch = 0;
  std::size_t k = 0;
  std::vector<double> weights;  // [out_ch][in_ch][k][k]
  std::vector<double> bias;     // [out_ch]

  std::size_t filter_size() const { return in_ch * k * k; }
};

struct DenseLayer {
  std::string name;
  std::size_t out_dim = 0;
  std::size_t in_dim = 0;
  std::vector<double> weights;  // [out_dim][in_dim]
  std::vector<double> bias;     // [out_dim]
};

// Two stride-1 valid convolutions with ReLU, global average pooling, then a
// dense head: 1x16x16 -> conv1 [8,1,3,3] -> conv2 [8,8,3,3] -> GAP -> 8 -> 2.
// All parameters are f64; they convert to f32 only on container export.
struct ToyNet {
  std::size_t input_channels = 1;
  std::size_t input_hw = 16;
  std::vector<ConvLayer> convs;
  DenseLayer fc;

  // Weights and biases uniform in [-b, b] with b = sqrt(1/fan_in). A nonzero
  // bias keeps a zeroed filter's channel active, so its weights stay
  // trainable after soft pruning.
  static ToyNet init(std::uint64_t seed) {
    ToyNet net;
    net.convs = {{"backbone.conv1", 8, 1, 3, {}, {}}, {"backbone.conv2", 8, 8, 3, {}, {}}};
    net.fc = {"head.fc", 2, 8, {}, {}};
    SplitMix64 rng(derive_seed(seed, 0));
    for (auto& conv : net.convs) {
      const double bound = std::sqrt(1.0 / static_cast<double>(conv.filter_size()));
      conv.weights.resize(conv.out_ch * conv.filter_size());
      for (double& w : conv.weights) w = rng.next_uniform(-bound, bound);
      conv.bias.resize(conv.out_ch);
      for (double& b : conv.bias) b = rng.next_uniform(-bound, bound);
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(net.fc.in_dim));
    net.fc.weights.resize(net.fc.out_dim * net.fc.in_dim);
    for (double& w : net.fc.weights) w = rng.next_uniform(-bound, bound);
    net.fc.bias.resize(net.fc.out_dim);
    for (double& b : net.fc.bias) b = rng.next_uniform(-bound, bound);
    return net;
  }

  std::size_t param_count() const {
    std::size_t total = fc.weights.size() + fc.bias.size();
    for (const auto& conv : convs) total += conv.weights.size() + conv.bias.size();
    return total;
  }
};

struct Batch {
  std::size_t count = 0;
  std::vector<double> images;  // [count][channels][hw][hw]
  std::vector<int> labels;     // in {0,1}; may be empty for pure inference
};

struct ParamBlock {
  std::vector<double> w;
  std::vector<double> b;
};

struct Gradients {
  std::vector<ParamBlock> convs;
  ParamBlock fc;
};

using Velocity = Gradients;

inline Gradients zero_gradients(const ToyNet& net) {
  Gradients grads;
  for (const auto& conv : net.convs)
    grads.convs.push_back({std::vector<double>(conv.weights.size(), 0.0),
                           std::vector<double>(conv.bias.size(), 0.0)});
  grads.fc = {std::vector<double>(net.fc.weights.size(), 0.0),
              std::vector<double>(net.fc.bias.size(), 0.0)};
  return grads;
}

namespace detail {

struct ForwardTrace {
  std::vector<std::vector<double>> conv_pre;   // per conv layer, [B][out][h][h]
  std::vector<std::vector<double>> conv_post;  // ReLU of conv_pre
  std::vector<std::size_t> conv_hw;
  std::vector<double> pooled;  // [B][channels]
  std::vector<double> logits;  // [B][classes]
};

inline void conv_forward(const ConvLayer& conv, const std::vector<double>& in, std::size_t batch,
                         std::size_t in_hw, std::vector<double>& pre) {
  const std::size_t out_hw = in_hw - conv.k + 1;
  pre.assign(batch * conv.out_ch * out_hw * out_hw, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t o = 0; o < conv.out_ch; ++o) {
      for (std::size_t y = 0; y < out_hw; ++y) {
        for (std::size_t x = 0; x < out_hw; ++x) {
          double acc = conv.bias[o];
          for (std::size_t ic = 0; ic < conv.in_ch; ++ic) {
            for (std::size_t ky = 0; ky < conv.k; ++ky) {
              const double* in_row = &in[((bi * conv.in_ch + ic) * in_hw + y + ky) * in_hw + x];
              const double* w_row = &conv.weights[((o * conv.in_ch + ic) * conv.k + ky) * conv.k];
              for (std::size_t kx = 0; kx < conv.k; ++kx) acc += w_row[kx] * in_row[kx];
            }
          }
          pre[((bi * conv.out_ch + o) * out_hw + y) * out_hw + x] = acc;
        }
      }
    }
  }
}

inline ForwardTrace forward_trace(const ToyNet& net, const Batch& batch) {
  if (batch.images.size() != batch.count * net.input_channels * net.input_hw * net.input_hw)
    raise(errc::shape_mismatch,
          "batch holds " + std::to_string(batch.images.size()) + " values, expected " +
              std::to_string(batch.count * net.input_channels * net.input_hw * net.input_hw));

  ForwardTrace trace;
  const std::vector<double>* in = &batch.images;
  std::size_t in_hw = net.input_hw;
  for (const auto& conv : net.convs) {
    std::vector<double> pre;
    conv_forward(conv, *in, batch.count, in_hw, pre);
    std::vector<double> post(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) post[i] = pre[i] > 0.0 ? pre[i] : 0.0;
    in_hw = in_hw - conv.k + 1;
    trace.conv_hw.push_back(in_hw);
    trace.conv_pre.push_back(std::move(pre));
    trace.conv_post.push_back(std::move(post));
    in = &trace.conv_post.back();
  }

  const std::size_t channels = net.convs.back().out_ch;
  const std::size_t area = in_hw * in_hw;
  trace.pooled.assign(batch.count * channels, 0.0);
  for (std::size_t bi = 0; bi < batch.count; ++bi) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double sum = 0.0;
      const double* map = &(*in)[(bi * channels + ch) * area];
      for (std::size_t i = 0; i < area; ++i) sum += map[i];
      trace.pooled[bi * channels + ch] = sum / static_cast<double>(area);
    }
  }

  trace.logits.assign(batch.count * net.fc.out_dim, 0.0);
  for (std::size_t bi = 0; bi < batch.count; ++bi) {
    for (std::size_t o = 0; o < net.fc.out_dim; ++o) {
      double acc = net.fc.bias[o];
      for (std::size_t i = 0; i < net.fc.in_dim; ++i)
        acc += net.fc.weights[o * net.fc.in_dim + i] * trace.pooled[bi * net.fc.in_dim + i];
      trace.logits[bi * net.fc.out_dim + o] = acc;
    }
  }
  return trace;
}

}  // namespace detail

inline std::vector<double> forward(const ToyNet& net, const Batch& batch) {
  return detail::forward_trace(net, batch).logits;
}

struct BackwardResult {
  double loss = 0.0;  // mean softmax cross-entropy over the batch
  Gradients grads;
};

inline BackwardResult backward(const ToyNet& net, const Batch& batch) {
  if (batch.labels.size() != batch.count)
    raise(errc::shape_mismatch, "batch has " + std::to_string(batch.labels.size()) +
                                    " labels for " + std::to_string(batch.count) + " images");
  for (int label : batch.labels)
    if (label < 0 || static_cast<std::size_t>(label) >= net.fc.out_dim)
      raise(errc::invalid_argument, "label " + std::to_string(label) + " out of range");

  const detail::ForwardTrace trace = detail::forward_trace(net, batch);
  const std::size_t classes = net.fc.out_dim;

  BackwardResult result;
  result.grads = zero_gradients(net);

  // mean cross-entropy and dL/dlogits
  std::vector<double> dlogits(batch.count * classes, 0.0);
  double loss_sum = 0.0;
  for (std::size_t bi = 0; bi < batch.count; ++bi) {
    const double* logits = &trace.logits[bi * classes];
    double max_logit = logits[0];
    for (std::size_t o = 1; o < classes; ++o) max_logit = std::max(max_logit, logits[o]);
    double exp_sum = 0.0;
    for (std::size_t o = 0; o < classes; ++o) exp_sum += std::exp(logits[o] - max_logit);
    const auto label = static_cast<std::size_t>(batch.labels[bi]);
    loss_sum += max_logit + std::log(exp_sum) - logits[label];
    for (std::size_t o = 0; o < classes; ++o) {
      const double softmax = std::exp(logits[o] - max_logit) / exp_sum;
      dlogits[bi * classes + o] =
          (softmax - (o == label ? 1.0 : 0.0)) / static_cast<double>(batch.count);
    }
  }
  result.loss = loss_sum / static_cast<double>(batch.count);

  // dense head
  const std::size_t channels = net.convs.back().out_ch;
  std::vector<double> dpooled(batch.count * channels, 0.0);
  for (std::size_t bi = 0; bi < batch.count; ++bi) {
    for (std::size_t o = 0; o < classes; ++o) {
      const double grad = dlogits[bi * classes + o];
      result.grads.fc.b[o] += grad;
      for (std::size_t i = 0; i < net.fc.in_dim; ++i) {
        result.grads.fc.w[o * net.fc.in_dim + i] += grad * trace.pooled[bi * net.fc.in_dim + i];
        dpooled[bi * net.fc.in_dim + i] += grad * net.fc.weights[o * net.fc.in_dim + i];
      }
    }
  }

  // global average pool spreads the gradient uniformly over the map
  const std::size_t last_hw = trace.conv_hw.back();
  const std::size_t last_area = last_hw * last_hw;
  std::vector<double> dpost(batch.count * channels * last_area, 0.0);
  for (std::size_t bi = 0; bi < batch.count; ++bi)
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double grad = dpooled[bi * channels + ch] / static_cast<double>(last_area);
      for (std::size_t i = 0; i < last_area; ++i) dpost[(bi * channels + ch) * last_area + i] = grad;
    }

  // conv chain, back to front
  for (std::size_t li = net.convs.size(); li-- > 0;) {
    const ConvLayer& conv = net.convs[li];
    const std::size_t out_hw = trace.conv_hw[li];
    const std::size_t in_hw = li == 0 ? net.input_hw : trace.conv_hw[li - 1];
    const std::vector<double>& input = li == 0 ? batch.images : trace.conv_post[li - 1];
    const std::vector<double>& pre = trace.conv_pre[li];

    std::vector<double> dpre(dpost.size());
    for (std::size_t i = 0; i < dpost.size(); ++i) dpre[i] = pre[i] > 0.0 ? dpost[i] : 0.0;

    ParamBlock& grads = result.grads.convs[li];
    for (std::size_t bi = 0; bi < batch.count; ++bi) {
      for (std::size_t o = 0; o < conv.out_ch; ++o) {
        for (std::size_t y = 0; y < out_hw; ++y) {
          for (std::size_t x = 0; x < out_hw; ++x) {
            const double grad = dpre[((bi * conv.out_ch + o) * out_hw + y) * out_hw + x];
            if (grad == 0.0) continue;
            grads.b[o] += grad;
            for (std::size_t ic = 0; ic < conv.in_ch; ++ic) {
              const double* in_row = &input[((bi * conv.in_ch + ic) * in_hw + y) * in_hw + x];
              double* w_grad_row = &grads.w[(o * conv.in_ch + ic) * conv.k * conv.k];
              for (std::size_t ky = 0; ky < conv.k; ++ky)
                for (std::size_t kx = 0; kx < conv.k; ++kx)
                  w_grad_row[ky * conv.k + kx] += grad * in_row[ky * in_hw + kx];
            }
          }
        }
      }
    }

    if (li == 0) break;
    std::vector<double> dinput(batch.count * conv.in_ch * in_hw * in_hw, 0.0);
    for (std::size_t bi = 0; bi < batch.count; ++bi) {
      for (std::size_t o = 0; o < conv.out_ch; ++o) {
        for (std::size_t y = 0; y < out_hw; ++y) {
          for (std::size_t x = 0; x < out_hw; ++x) {
            const double grad = dpre[((bi * conv.out_ch + o) * out_hw + y) * out_hw + x];
            if (grad == 0.0) continue;
            for (std::size_t ic = 0; ic < conv.in_ch; ++ic) {
              const double* w_row = &conv.weights[(o * conv.in_ch + ic) * conv.k * conv.k];
              double* din_row = &dinput[((bi * conv.in_ch + ic) * in_hw + y) * in_hw + x];
              for (std::size_t ky = 0; ky < conv.k; ++ky)
                for (std::size_t kx = 0; kx < conv.k; ++kx)
                  din_row[ky * in_hw + kx] += grad * w_row[ky * conv.k + kx];
            }
          }
        }
      }
    }
    dpost = std::move(dinput);
  }

  return result;
}

// v <- momentum*v + grad + weight_decay*w; w <- w - lr*v. When freeze masks
// are present, pruned filters' weights and velocities are forced to exactly
// zero after the step; biases stay trainable.
inline void sgd_step(ToyNet& net, Velocity& velocity, const Gradients& grads,
                     const SgdConfig& config, double lr,
                     const std::map<std::string, PruneMask>* freeze = nullptr) {
  auto update = [&](std::vector<double>& params, std::vector<double>& vel,
                    const std::vector<double>& grad) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      vel[i] = config.momentum * vel[i] + grad[i] + config.weight_decay * params[i];
      params[i] -= lr * vel[i];
    }
  };
  for (std::size_t li = 0; li < net.convs.size(); ++li) {
    update(net.convs[li].weights, velocity.convs[li].w, grads.convs[li].w);
    update(net.convs[li].bias, velocity.convs[li].b, grads.convs[li].b);
  }
  update(net.fc.weights, velocity.fc.w, grads.fc.w);
  update(net.fc.bias, velocity.fc.b, grads.fc.b);

  if (freeze == nullptr) return;
  for (std::size_t li = 0; li < net.convs.size(); ++li) {
    const auto found = freeze->find(net.convs[li].name);
    if (found == freeze->end()) continue;
    const PruneMask& mask = found->second;
    if (mask.keep.size() != net.convs[li].out_ch)
      raise(errc::shape_mismatch, "freeze mask for \"" + net.convs[li].name + "\" covers " +
                                      std::to_string(mask.keep.size()) + " filters");
    const std::size_t stride = net.convs[li].filter_size();
    for (std::size_t j = 0; j < mask.keep.size(); ++j) {
      if (mask.keep[j]) continue;
      for (std::size_t i = 0; i < stride; ++i) {
        net.convs[li].weights[j * stride + i] = 0.0;
        velocity.convs[li].w[j * stride + i] = 0.0;
      }
    }
  }
}

// Mirror of apply_masks for the in-memory f64 net: zeroes pruned filters'
// weights, leaves biases and velocities alone.
inline void zero_pruned_filters(ToyNet& net, const std::map<std::string, PruneMask>& masks) {
  for (auto& conv : net.convs) {
    const auto found = masks.find(conv.name);
    if (found == masks.end()) continue;
    const PruneMask& mask = found->second;
    if (mask.keep.size() != conv.out_ch)
      raise(errc::shape_mismatch, "mask for \"" + conv.name + "\" covers " +
                                      std::to_string(mask.keep.size()) + " filters");
    const std::size_t stride = conv.filter_size();
    for (std::size_t j = 0; j < mask.keep.size(); ++j) {
      if (mask.keep[j]) continue;
      for (std::size_t i = 0; i < stride; ++i) conv.weights[j * stride + i] = 0.0;
    }
  }
}

inline WeightContainer export_weights(const ToyNet& net) {
  WeightContainer container;
  container.metadata["model"] = "toynet";
  auto to_f32 = [](const std::vector<double>& values) {
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
    return out;
  };
  for (const auto& conv : net.convs) {
    container.add_layer(conv.name,
                        Tensor({conv.out_ch, conv.in_ch, conv.k, conv.k}, to_f32(conv.weights)));
    container.add_layer(conv.name + ".bias", Tensor({conv.out_ch}, to_f32(conv.bias)));
  }
  container.add_layer(net.fc.name, Tensor({net.fc.out_dim, net.fc.in_dim}, to_f32(net.fc.weights)));
  container.add_layer(net.fc.name + ".bias", Tensor({net.fc.out_dim}, to_f32(net.fc.bias)));
  return container;
}

inline ModelSpec toy_model_spec(const ToyNet& net) {
  ModelSpec spec;
  spec.name = "toynet";
  for (const auto& conv : net.convs) {
    spec.layers.push_back(
        {conv.name, {conv.out_ch, conv.in_ch, conv.k, conv.k}, LayerKind::Conv, false, {}});
    spec.layers.push_back({conv.name + ".bias", {conv.out_ch}, LayerKind::Other, false, {}});
  }
  spec.layers.push_back({net.fc.name, {net.fc.out_dim, net.fc.in_dim}, LayerKind::Other, false, {}});
  spec.layers.push_back({net.fc.name + ".bias", {net.fc.out_dim}, LayerKind::Other, false, {}});
  return spec;
}

// 16x16 single-channel images: class 0 carries a horizontal bar, class 1 a
// vertical bar, both under uniform noise of amplitude 0.2. Every sample is a
// pure function of (seed, index); labels alternate, so any index range is
// balanced.
struct SyntheticDataset {
  std::uint64_t seed = 0;
  int n_train = 256;
  int n_test = 128;

  static constexpr std::size_t kImageHw = 16;
  static constexpr std::size_t kBarThickness = 4;
  // Bar brightness well above the noise floor; the pinned 1e-3 learning rate
  // needs gradients of this scale to train through the global average pool.
  static constexpr double kBarAmplitude = 2000.0;
  static constexpr double kNoiseAmplitude = 0.2;

  struct Sample {
    std::vector<double> image;
    int label = 0;
  };

  Sample sample(std::uint64_t index) const {
    SplitMix64 rng(derive_seed(seed, index));
    Sample out;
    out.label = static_cast<int>(index % 2);
    out.image.assign(kImageHw * kImageHw, 0.0);
    // keep the bar two pixels clear of the border so both valid convolutions
    // see it in full
    const std::size_t bar_start = 2 + rng.next_below(kImageHw - kBarThickness - 3);
    for (std::size_t y = 0; y < kImageHw; ++y)
      for (std::size_t x = 0; x < kImageHw; ++x) {
        const std::size_t along = out.label == 0 ? y : x;
        if (along >= bar_start && along < bar_start + kBarThickness)
          out.image[y * kImageHw + x] = kBarAmplitude;
      }
    for (double& px : out.image) px += rng.next_uniform(-kNoiseAmplitude, kNoiseAmplitude);
    return out;
  }

  Sample train_sample(int i) const { return sample(static_cast<std::uint64_t>(i)); }
  Sample test_sample(int i) const {
    return sample(static_cast<std::uint64_t>(n_train) + static_cast<std::uint64_t>(i));
  }
};

inline double test_accuracy(const ToyNet& net, const SyntheticDataset& dataset) {
  Batch batch;
  batch.count = static_cast<std::size_t>(dataset.n_test);
  batch.images.reserve(batch.count * SyntheticDataset::kImageHw * SyntheticDataset::kImageHw);
  std::vector<int> labels;
  for (int i = 0; i < dataset.n_test; ++i) {
    const auto sample = dataset.test_sample(i);
    batch.images.insert(batch.images.end(), sample.image.begin(), sample.image.end());
    labels.push_back(sample.label);
  }
  const std::vector<double> logits = forward(net, batch);
  std::size_t correct = 0;
  for (std::size_t bi = 0; bi < batch.count; ++bi) {
    const std::size_t predicted = logits[bi * 2 + 1] > logits[bi * 2] ? 1 : 0;
    if (predicted == static_cast<std::size_t>(labels[bi])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.count);
}

inline void train_one_epoch(ToyNet& net, Velocity& velocity, const SyntheticDataset& dataset,
                            SplitMix64& shuffle_rng, const SgdConfig& sgd, double lr,
                            const std::map<std::string, PruneMask>* freeze,
                            std::size_t batch_size = 32) {
  std::vector<int> order(static_cast<std::size_t>(dataset.n_train));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    Batch batch;
    batch.count = count;
    for (std::size_t i = 0; i < count; ++i) {
      const auto sample = dataset.train_sample(order[start + i]);
      batch.images.insert(batch.images.end(), sample.image.begin(), sample.image.end());
      batch.labels.push_back(sample.label);
    }
    const BackwardResult result = backward(net, batch);
    sgd_step(net, velocity, result.grads, sgd, lr, freeze);
  }
}

struct EpochRecord {
  int epoch = 0;
  SfpPhase phase = SfpPhase::Soft;  // phase the epoch was trained in
  double lr = 0.0;
  double test_accuracy = 0.0;
  std::map<std::string, std::vector<std::size_t>> pruned;  // mask state after the boundary
};

struct ExperimentResult {
  std::vector<EpochRecord> history;
  PruneReport final_report;
  WeightContainer final_weights;
  SfpState final_state;

  std::vector<double> accuracy_history() const {
    std::vector<double> out;
    out.reserve(history.size());
    for (const auto& record : history) out.push_back(record.test_accuracy);
    return out;
  }
};

// A soft-phase filter pruned at one boundary and kept at the next.
inline std::size_t recovery_event_count(const std::vector<EpochRecord>& history) {
  std::size_t events = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i - 1].phase != SfpPhase::Soft || history[i].phase != SfpPhase::Soft) continue;
    for (const auto& [layer, pruned_before] : history[i - 1].pruned) {
      const auto found = history[i].pruned.find(layer);
      if (found == history[i].pruned.end()) continue;
      for (std::size_t index : pruned_before)
        if (!std::binary_search(found->second.begin(), found->second.end(), index)) ++events;
    }
  }
  return events;
}

struct EpochObservation {
  const EpochRecord& record;
  const ToyNet& net;
  const Velocity& velocity;
  const SfpState& state;
};

using EpochObserver = std::function<void(const EpochObservation&)>;

// Full SFP life cycle on the toy task: train an epoch, advance the state
// machine at the boundary, mirror the fresh masks onto the f64 weights, and
// evaluate. Runs until the schedule is exhausted.
inline ExperimentResult run_sfp_experiment(const PruneConfig& config,
                                           const SyntheticDataset& dataset, const SgdConfig& sgd,
                                           std::uint64_t seed,
                                           const EpochObserver& observer = {}) {
  config.schedule.validate();
  ToyNet net = ToyNet::init(seed);
  Velocity velocity = zero_gradients(net);
  SplitMix64 shuffle_rng(derive_seed(seed, 1));

  SfpState state;
  state.config = config;
  double lr = config.schedule.soft_lr(0);
  bool freeze = false;

  ExperimentResult result;
  while (state.phase != SfpPhase::Done) {
    const SfpPhase trained_phase = state.phase;
    train_one_epoch(net, velocity, dataset, shuffle_rng, sgd, lr,
                    freeze ? &state.masks : nullptr);
    SfpStepResult step = step_epoch(std::move(state), export_weights(net));
    state = std::move(step.state);
    zero_pruned_filters(net, state.masks);

    EpochRecord record;
    record.epoch = state.epoch - 1;
    record.phase = trained_phase;
    record.lr = lr;
    record.test_accuracy = test_accuracy(net, dataset);
    for (const auto& [name, mask] : state.masks) {
      std::vector<std::size_t>& pruned = record.pruned[name];
      for (std::size_t j = 0; j < mask.keep.size(); ++j)
        if (!mask.keep[j]) pruned.push_back(j);
    }
    result.history.push_back(record);
    if (observer) observer({result.history.back(), net, velocity, state});

    lr = step.directive.lr;
    freeze = step.directive.freeze_pruned;
  }

  result.final_weights = export_weights(net);
  std::map<std::string, Selection> selections;
  for (const auto& [name, mask] : state.masks) {
    Selection selection;
    selection.layer_name = name;
    selection.theta = config.theta;
    for (std::size_t j = 0; j < mask.keep.size(); ++j)
      (mask.keep[j] ? selection.kept_indices : selection.pruned_indices).push_back(j);
    selections.emplace(name, std::move(selection));
  }
  result.final_report = build_report(toy_model_spec(net), selections, config);
  result.final_state = std::move(state);
  return result;
}

inline std::string history_csv(const ExperimentResult& result) {
  std::string csv = "epoch,phase,lr,test_accuracy\n";
  char line[128];
  for (const auto& record : result.history) {
    std::snprintf(line, sizeof(line), "%d,%s,%.10g,%.6f\n", record.epoch,
                  to_string(record.phase).c_str(), record.lr, record.test_accuracy);
    csv += line;
  }
  return csv;
}

inline nlohmann::json to_json(const ExperimentResult& result) {
  auto history = nlohmann::json::array();
  for (const auto& record : result.history) {
    nlohmann::json pruned = nlohmann::json::object();
    for (const auto& [layer, indices] : record.pruned) pruned[layer] = indices;
    history.push_back({{"epoch", record.epoch},
                       {"phase", to_string(record.phase)},
                       {"lr", record.lr},
                       {"test_accuracy", record.test_accuracy},
                       {"pruned", std::move(pruned)}});
  }
  return {{"history", std::move(history)},
          {"final_report", to_json(result.final_report)},
          {"recovery_events", recovery_event_count(result.history)},
          {"final_test_accuracy",
           result.history.empty() ? 0.0 : result.history.back().test_accuracy}};
}

}  // namespace prunekit
