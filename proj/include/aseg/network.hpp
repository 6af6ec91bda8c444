#pragma once
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "aseg/nn_ops.hpp"
#include "aseg/rng.hpp"
#include "aseg/tensor.hpp"
#include "aseg/winograd.hpp"

namespace aseg {

enum class LayerKind : std::uint8_t { conv3x3 = 0, conv1x1 = 1 };
enum class Activation : std::uint8_t { relu = 0, softmax = 1, none = 2 };

/// Dropout probability applied in front of the two head layers in training.
inline constexpr double kDropoutP = 0.5;

struct LayerSpec {
  LayerKind kind = LayerKind::conv3x3;
  int in_channels = 1;
  int out_channels = 1;
  int dilation = 1;
  bool batch_norm = false;
  bool dropout_before = false;
  Activation activation = Activation::relu;

  int kernel() const { return kind == LayerKind::conv3x3 ? 3 : 1; }
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  int num_classes = 0;

  /// The ten-layer segmentation architecture: eight 3x3 stages with dilations
  /// 1,1,2,4,8,16,32,1 followed by two 1x1 head layers (the first with batch
  /// norm, both behind dropout), ending in a softmax over `num_classes`.
  static NetworkSpec canonical(int num_classes);

  /// Throws std::invalid_argument on an inconsistent layer chain.
  void validate() const;
};

/// Edge length, per axis, of the input region influencing one output value.
std::pair<int, int> receptive_field(const NetworkSpec& spec);

/// Number of trainable scalars: conv weights and biases plus gamma/beta per
/// batch-norm site (running statistics are not trained).
std::int64_t parameter_count(const NetworkSpec& spec);

/// Training provenance carried by a network and its checkpoints.
/// best_val_dice is -1 when the network has never been validated.
struct TrainingMeta {
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  float best_val_dice = -1.0f;
};

/// Per-layer Winograd engines for the float training path; empty for other
/// scalar types, which train on the direct kernels. Keeping one engine per
/// layer keeps each layer's transform scratch sized once and then hot.
template <typename T>
struct WinogradBank {};

template <>
struct WinogradBank<float> {
  std::vector<WinogradConv> engines;
  void ensure(std::size_t n) {
    if (engines.size() < n) engines.resize(n);
  }
};

/// Everything the backward pass needs from a training forward pass. A trace
/// reused across iterations keeps its buffers, so steady-state training does
/// no per-iteration allocation.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> conv_inputs;  // per layer, after dropout masking
  std::vector<Tensor<T>> masks;        // dropout masks; rank 0 where unused
  std::vector<BatchNormCache<T>> bn;
  Tensor<T> output;
  WinogradBank<T> wino;
};

template <typename T>
struct NetworkGrads {
  std::vector<Tensor<T>> weights, bias;   // per layer
  std::vector<Tensor<T>> gamma, beta;     // rank 0 where the layer has no BN
  Tensor<T> input;                        // gradient wrt the network input
};

/// Reusable scratch for backward(): the two ping-pong gradient buffers and
/// the per-layer convolution scratch.
template <typename T>
struct BackwardWorkspace {
  Tensor<T> grad_a, grad_b;
  std::vector<ConvGradScratch<T>> conv_scratch;
  WinogradBank<T> wino;
};

/// Reusable ping-pong activation buffers for inference.
template <typename T>
struct InferWorkspace {
  Tensor<T> a, b;
};

template <typename T>
class NetworkT {
 public:
  NetworkSpec spec;
  std::vector<ConvParams<T>> conv;      // one per layer
  std::vector<BatchNormParams<T>> bn;   // one per layer, meaningful where spec says so
  TrainingMeta meta;

  int num_classes() const { return spec.num_classes; }
  int num_layers() const { return static_cast<int>(spec.layers.size()); }

  /// Deterministic inference pass: dropout is identity, batch norm uses the
  /// running statistics. Output is the per-class probability map. The
  /// workspace variant returns a reference into `ws` (valid until the next
  /// call with the same workspace).
  const Tensor<T>& forward_infer(const Tensor<T>& input, InferWorkspace<T>& ws) const {
    check_input(input);
    const Tensor<T>* src = &input;
    Tensor<T>* dst = &ws.a;
    Tensor<T>* spare = &ws.b;
    for (int l = 0; l < num_layers(); ++l) {
      const LayerSpec& ls = spec.layers[l];
      const bool fuse = ls.activation == Activation::relu && !ls.batch_norm;
      conv2d_dilated_into(*src, conv[l], *dst, fuse);
      if (ls.batch_norm) batch_norm_infer_inplace(*dst, bn[l]);
      if (ls.activation == Activation::relu && !fuse)
        relu_inplace(*dst);
      else if (ls.activation == Activation::softmax)
        softmax_channels_inplace(*dst);
      src = dst;
      std::swap(dst, spare);
    }
    return *src;
  }

  Tensor<T> forward_infer(const Tensor<T>& input) const {
    InferWorkspace<T> ws;
    return forward_infer(input, ws);
  }

  /// Training pass: samples dropout masks from `rng`, normalizes with batch
  /// statistics (updating the running stats), and records everything the
  /// backward pass needs in `trace`. Reusing one trace across iterations
  /// reuses all activation buffers.
  Tensor<T> forward_train(const Tensor<T>& input, Rng& rng, ForwardTrace<T>& trace) {
    check_input(input);
    const int L = num_layers();
    if (static_cast<int>(trace.conv_inputs.size()) != L) {
      trace.conv_inputs.assign(L, Tensor<T>());
      trace.masks.assign(L, Tensor<T>());
      trace.bn.assign(L, BatchNormCache<T>());
    }
    trace.conv_inputs[0].resize(input.shape);
    std::memcpy(trace.conv_inputs[0].ptr(), input.ptr(), sizeof(T) * input.numel());
    for (int l = 0; l < L; ++l) {
      const LayerSpec& ls = spec.layers[l];
      Tensor<T>& x = trace.conv_inputs[l];
      if (ls.dropout_before) {
        dropout_mask_into<T>(x.shape, kDropoutP, rng, trace.masks[l]);
        for (size_t i = 0; i < x.numel(); ++i) x.data[i] *= trace.masks[l].data[i];
      } else {
        trace.masks[l] = Tensor<T>();
      }
      Tensor<T>& dst = (l + 1 < L) ? trace.conv_inputs[l + 1] : trace.output;
      const bool fuse = ls.activation == Activation::relu && !ls.batch_norm;
      bool done = false;
      if constexpr (std::is_same_v<T, float>) {
        if (WinogradConv::available() &&
            WinogradConv::eligible(ls.in_channels, ls.out_channels,
                                   ls.kernel(), ls.dilation)) {
          const int d = ls.dilation;
          dst.resize({x.dim(0), ls.out_channels, x.dim(2) - 2 * d,
                      x.dim(3) - 2 * d});
          trace.wino.ensure(static_cast<std::size_t>(L));
          trace.wino.engines[l].forward(
              x.ptr(), x.dim(0), x.dim(1), x.dim(2), x.dim(3),
              conv[l].weights.ptr(), conv[l].bias.ptr(), ls.out_channels, d,
              fuse, dst.ptr());
          done = true;
        }
      }
      if (!done) conv2d_dilated_into(x, conv[l], dst, fuse);
      if (ls.batch_norm)
        batch_norm_train_inplace(dst, bn[l], &trace.bn[l]);
      else
        trace.bn[l] = BatchNormCache<T>();
      if (ls.activation == Activation::relu && !fuse)
        relu_inplace(dst);
      else if (ls.activation == Activation::softmax)
        softmax_channels_inplace(dst);
    }
    return trace.output;
  }

  /// Backpropagates a gradient wrt the output probabilities through the
  /// recorded trace into `g`, reusing `ws` buffers. Does not modify
  /// parameters. The gradient wrt the network input is only produced when
  /// `need_input_grad` is set (the training loop does not need it and layer
  /// one's input gradient is the most expensive single buffer).
  void backward_into(const ForwardTrace<T>& trace, const Tensor<T>& grad_probs,
                     NetworkGrads<T>& g, BackwardWorkspace<T>& ws,
                     bool need_input_grad = true) const {
    const int L = num_layers();
    if (static_cast<int>(g.weights.size()) != L) {
      g.weights.assign(L, Tensor<T>());
      g.bias.assign(L, Tensor<T>());
      g.gamma.assign(L, Tensor<T>());
      g.beta.assign(L, Tensor<T>());
    }
    if (static_cast<int>(ws.conv_scratch.size()) != L) ws.conv_scratch.resize(L);
    ws.grad_a.resize(grad_probs.shape);
    std::memcpy(ws.grad_a.ptr(), grad_probs.ptr(), sizeof(T) * grad_probs.numel());
    Tensor<T>* cur = &ws.grad_a;
    Tensor<T>* nxt = &ws.grad_b;
    for (int l = L - 1; l >= 0; --l) {
      const LayerSpec& ls = spec.layers[l];
      bool use_wino = false;
      if constexpr (std::is_same_v<T, float>)
        use_wino = WinogradConv::available() &&
                   WinogradConv::eligible(ls.in_channels, ls.out_channels,
                                          ls.kernel(), ls.dilation);
      const Tensor<T>* fused_act = nullptr;
      if (ls.activation == Activation::softmax) {
        softmax_backward_inplace(trace.output, *cur);
      } else if (ls.activation == Activation::relu) {
        // The sign mask of the layer's post-ReLU activation survives in the
        // next layer's recorded conv input: dropout can zero entries, but the
        // incoming gradient is already zero exactly there.
        const Tensor<T>& act = (l + 1 < L) ? trace.conv_inputs[l + 1] : trace.output;
        if (use_wino && !ls.batch_norm)
          fused_act = &act;  // the engine masks gout by act > 0 as it loads
        else
          relu_backward_inplace(act, *cur);
      }
      if (ls.batch_norm) {
        batch_norm_grad_inplace(trace.bn[l], bn[l], *cur, g.gamma[l], g.beta[l]);
      } else {
        g.gamma[l] = Tensor<T>();
        g.beta[l] = Tensor<T>();
      }
      const bool want_input = need_input_grad || l > 0;
      bool done = false;
      if constexpr (std::is_same_v<T, float>) {
        if (use_wino) {
          const Tensor<T>& x = trace.conv_inputs[l];
          g.weights[l].resize({ls.out_channels, ls.in_channels, 3, 3});
          g.bias[l].resize({ls.out_channels});
          if (want_input) nxt->resize(x.shape);
          ws.wino.ensure(static_cast<std::size_t>(L));
          ws.wino.engines[l].backward(
              x.ptr(), x.dim(0), x.dim(1), x.dim(2), x.dim(3),
              conv[l].weights.ptr(), cur->ptr(),
              fused_act ? fused_act->ptr() : nullptr, ls.out_channels,
              ls.dilation, g.weights[l].ptr(), g.bias[l].ptr(),
              want_input ? nxt->ptr() : nullptr);
          done = true;
        }
      }
      if (!done)
        conv2d_dilated_grad_into(trace.conv_inputs[l], conv[l], *cur,
                                 g.weights[l], g.bias[l],
                                 want_input ? nxt : nullptr,
                                 ws.conv_scratch[l]);
      if (want_input) {
        if (ls.dropout_before)
          for (size_t i = 0; i < nxt->numel(); ++i)
            nxt->data[i] *= trace.masks[l].data[i];
        std::swap(cur, nxt);
      }
    }
    g.input = need_input_grad ? *cur : Tensor<T>();
  }

  NetworkGrads<T> backward(const ForwardTrace<T>& trace, const Tensor<T>& grad_probs) const {
    NetworkGrads<T> g;
    BackwardWorkspace<T> ws;
    backward_into(trace, grad_probs, g, ws, true);
    return g;
  }

  /// Trainable tensors in a fixed order (per layer: weights, bias, then
  /// gamma/beta where batch norm is present). Checkpoints, the optimizer and
  /// gradient flattening all follow this order.
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (int l = 0; l < num_layers(); ++l) {
      out.push_back(&conv[l].weights);
      out.push_back(&conv[l].bias);
      if (spec.layers[l].batch_norm) {
        out.push_back(&bn[l].gamma);
        out.push_back(&bn[l].beta);
      }
    }
    return out;
  }

  /// Gradient tensors in the same order as parameters().
  std::vector<Tensor<T>*> gradients(NetworkGrads<T>& g) const {
    std::vector<Tensor<T>*> out;
    for (int l = 0; l < num_layers(); ++l) {
      out.push_back(&g.weights[l]);
      out.push_back(&g.bias[l]);
      if (spec.layers[l].batch_norm) {
        out.push_back(&g.gamma[l]);
        out.push_back(&g.beta[l]);
      }
    }
    return out;
  }

 private:
  void check_input(const Tensor<T>& input) const {
    if (input.rank() != 4)
      throw std::invalid_argument("network: input must be (batch, channel, row, col)");
    if (spec.layers.empty()) throw std::invalid_argument("network: empty layer list");
    if (input.dim(1) != spec.layers.front().in_channels)
      throw std::invalid_argument("network: input has " + std::to_string(input.dim(1)) +
                                  " channels, expected " +
                                  std::to_string(spec.layers.front().in_channels));
    int h = input.dim(2), w = input.dim(3);
    for (const LayerSpec& ls : spec.layers) {
      h -= ls.dilation * (ls.kernel() - 1);
      w -= ls.dilation * (ls.kernel() - 1);
    }
    if (h < 1 || w < 1) {
      const auto rf = receptive_field(spec);
      throw std::invalid_argument("network: input " + shape_string(input.shape) +
                                  " is smaller than the receptive field " +
                                  std::to_string(rf.first) + "x" + std::to_string(rf.second));
    }
  }
};

using Network = NetworkT<float>;

/// Builds a network with He-uniform weights (fan-in), zero biases and
/// identity batch-norm parameters. The weight stream is drawn from a
/// splitmix-derived sub-seed so other consumers of `seed` stay decorrelated.
template <typename T>
NetworkT<T> build_network_t(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkT<T> net;
  net.spec = spec;
  net.meta.seed = seed;
  Rng rng(derive_seed(seed, 0));
  for (const LayerSpec& ls : spec.layers) {
    const int k = ls.kernel();
    ConvParams<T> cp;
    cp.weights = Tensor<T>({ls.out_channels, ls.in_channels, k, k});
    cp.bias = Tensor<T>({ls.out_channels}, T(0));
    cp.dilation = ls.dilation;
    const double fan_in = static_cast<double>(ls.in_channels) * k * k;
    const double limit = std::sqrt(6.0 / fan_in);
    for (auto& w : cp.weights.data) w = static_cast<T>(rng.uniform(-limit, limit));
    net.conv.push_back(std::move(cp));
    net.bn.emplace_back(ls.batch_norm ? ls.out_channels : 1);
  }
  return net;
}

/// Canonical network for `num_classes` output classes.
Network build_network(int num_classes, std::uint64_t seed);

}  // namespace aseg
