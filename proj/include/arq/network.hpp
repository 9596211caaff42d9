#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "arq/tensor.hpp"

namespace arq::nn {

enum class LayerKind : std::uint8_t {
  dense = 0,
  conv2d = 1,
  relu = 2,
  avgpool2d = 3,
  flatten = 4,
};

std::string_view to_string(LayerKind kind);

/// Static description of one layer. Spatial maps are square: `feature_size`
/// is the input side length. Dense layers use c_in/c_out as feature counts
/// and a 1x1 spatial extent.
struct LayerSpec {
  std::size_t index = 0;
  LayerKind kind = LayerKind::relu;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel_size = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t feature_size = 1;
  bool depthwise = false;
  std::size_t n_params = 0;

  std::size_t out_feature_size() const;
  std::size_t in_numel() const { return c_in * feature_size * feature_size; }
  std::size_t out_numel() const {
    const std::size_t s = out_feature_size();
    return c_out * s * s;
  }
  std::size_t weight_count() const;
  std::size_t bias_count() const;
  std::size_t macs() const;
  bool quantizable() const {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// The base classifier: layer table plus per-layer parameters. Parameter-free
/// layers carry empty weight/bias tensors.
struct Network {
  std::vector<std::size_t> input_shape;
  std::vector<LayerSpec> layers;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::size_t num_classes = 0;

  std::size_t input_size() const { return Tensor::numel_of(input_shape); }
  std::size_t param_count() const;
  std::size_t max_activation_size() const;
  std::vector<std::size_t> quantizable_layers() const;

  /// Throws ShapeError if adjacent layers or parameter tensors disagree.
  void validate() const;

  friend bool operator==(const Network&, const Network&) = default;
};

/// Fluent construction with Kaiming-uniform (fan-in) weights and zero biases.
class NetworkBuilder {
 public:
  explicit NetworkBuilder(std::vector<std::size_t> input_shape);

  /// `padding` defaults to (kernel - 1) / 2.
  NetworkBuilder& conv2d(std::size_t c_out, std::size_t kernel,
                         std::size_t stride = 1,
                         std::optional<std::size_t> padding = std::nullopt);
  NetworkBuilder& depthwise_conv2d(std::size_t kernel, std::size_t stride = 1,
                                   std::optional<std::size_t> padding = std::nullopt);
  NetworkBuilder& relu();
  NetworkBuilder& avgpool2d(std::size_t kernel, std::size_t stride);
  NetworkBuilder& flatten();
  NetworkBuilder& dense(std::size_t out_features);

  Network build(std::uint64_t seed) const;

 private:
  void push(LayerSpec spec);

  std::vector<std::size_t> input_shape_;
  std::vector<LayerSpec> layers_;
  std::size_t channels_ = 0;
  std::size_t size_ = 1;
};

struct TinyConvNetConfig {
  std::vector<std::size_t> input_shape{3, 8, 8};
  std::size_t num_classes = 3;
  /// One conv block (3x3 conv + ReLU) per entry; every second block has stride 2.
  std::vector<std::size_t> channels{8, 16};
  bool global_pool = false;
};

Network make_tiny_convnet(const TinyConvNetConfig& cfg, std::uint64_t seed);
Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                 std::size_t num_classes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Fake-quantization overlay consumed by the engine.

struct ActQuant {
  int bits = 0;  // 0 disables quantization
  Real clip = 0.0;
  bool symmetric = false;  // [-clip, clip] when true, [0, clip] otherwise
};

/// Per-layer replacement weights and input quantizers. Vectors are indexed by
/// layer; an empty weight tensor means "use the float weights".
struct QuantOverlay {
  std::vector<Tensor> weights;
  std::vector<Real> weight_clips;
  std::vector<ActQuant> inputs;

  bool active_for(std::size_t layer) const {
    return layer < weights.size() && !weights[layer].empty();
  }
};

/// Scalar linear quantizer shared by the engine and the quantizer module.
Real fake_quantize(Real v, int bits, Real clip, bool symmetric);

// ---------------------------------------------------------------------------
// Inference.

Tensor forward(const Network& net, std::span<const Real> x,
               const QuantOverlay* overlay = nullptr);
inline Tensor forward(const Network& net, const Tensor& x,
                      const QuantOverlay* overlay = nullptr) {
  return forward(net, x.span(), overlay);
}

/// Index of the largest logit; ties resolve to the lowest index.
std::size_t argmax(std::span<const Real> logits);

std::size_t predict(const Network& net, std::span<const Real> x,
                    const QuantOverlay* overlay = nullptr);

// ---------------------------------------------------------------------------
// Training support.

/// Activations recorded by a forward pass, kept for backpropagation.
struct Tape {
  std::vector<std::vector<Real>> inputs;      // input seen by each layer
  std::vector<std::vector<Real>> raw_inputs;  // pre-quantization input (quantized layers only)
  std::vector<Real> output;
};

Tape forward_tape(const Network& net, std::span<const Real> x,
                  const QuantOverlay* overlay = nullptr);

struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Real loss = 0.0;

  static Gradients zeros_like(const Network& net);
};

/// Accumulates parameter gradients of the scalar whose gradient w.r.t. the
/// network output is `d_output`. Quantized layers use the straight-through
/// estimator. Returns the gradient w.r.t. the network input.
std::vector<Real> backward(const Network& net, const Tape& tape,
                           std::span<const Real> d_output, Gradients& grads,
                           const QuantOverlay* overlay = nullptr);

/// Mean softmax cross-entropy of one sample; writes dloss/dlogits.
Real softmax_cross_entropy(std::span<const Real> logits, std::size_t label,
                           std::span<Real> d_logits);

struct Batch {
  std::vector<std::span<const Real>> inputs;
  std::vector<std::size_t> labels;
};

/// Mean cross-entropy over the batch and its parameter gradients.
Gradients compute_gradients(const Network& net, const Batch& batch,
                            const QuantOverlay* overlay = nullptr);

}  // namespace arq::nn
