#include "arq/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "arq/rng.hpp"

namespace arq::nn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

std::size_t LayerSpec::out_feature_size() const {
  switch (kind) {
    case LayerKind::conv2d:
      return (feature_size + 2 * padding - kernel_size) / stride + 1;
    case LayerKind::avgpool2d:
      return (feature_size - kernel_size) / stride + 1;
    case LayerKind::flatten:
    case LayerKind::dense:
      return 1;
    case LayerKind::relu:
      return feature_size;
  }
  return feature_size;
}

std::size_t LayerSpec::weight_count() const {
  switch (kind) {
    case LayerKind::dense: return c_in * c_out;
    case LayerKind::conv2d:
      return c_out * (depthwise ? 1 : c_in) * kernel_size * kernel_size;
    default: return 0;
  }
}

std::size_t LayerSpec::bias_count() const { return quantizable() ? c_out : 0; }

std::size_t LayerSpec::macs() const {
  const std::size_t s = out_feature_size();
  return weight_count() * s * s;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.n_params;
  return n;
}

std::size_t Network::max_activation_size() const {
  std::size_t m = input_size();
  for (const auto& l : layers) m = std::max({m, l.in_numel(), l.out_numel()});
  return m;
}

std::vector<std::size_t> Network::quantizable_layers() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) {
    if (l.quantizable()) out.push_back(l.index);
  }
  return out;
}

void Network::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  if (weights.size() != layers.size() || biases.size() != layers.size()) {
    throw ShapeError("parameter table does not match layer count");
  }
  std::size_t expected = input_size();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.index != k) throw ShapeError("layer " + std::to_string(k) + " has index " + std::to_string(l.index));
    if (l.kernel_size < 1 || l.stride < 1) {
      throw ShapeError("layer " + std::to_string(k) + ": kernel and stride must be >= 1");
    }
    if (l.kind == LayerKind::avgpool2d && l.stride > l.kernel_size) {
      throw ShapeError("layer " + std::to_string(k) + ": pooling stride exceeds kernel");
    }
    if (l.kind == LayerKind::conv2d && l.depthwise && l.c_in != l.c_out) {
      throw ShapeError("layer " + std::to_string(k) + ": depthwise conv needs c_in == c_out");
    }
    if (l.in_numel() != expected) {
      throw ShapeError("layer " + std::to_string(k) + " expects " +
                       std::to_string(l.in_numel()) + " inputs but receives " +
                       std::to_string(expected));
    }
    if (weights[k].numel() != l.weight_count() || biases[k].numel() != l.bias_count()) {
      throw ShapeError("layer " + std::to_string(k) + " parameter tensors have wrong size");
    }
    if (l.n_params != l.weight_count() + l.bias_count()) {
      throw ShapeError("layer " + std::to_string(k) + " n_params mismatch");
    }
    expected = l.out_numel();
  }
  if (expected != num_classes) {
    throw ShapeError("network output size " + std::to_string(expected) +
                     " != num_classes " + std::to_string(num_classes));
  }
}

// ---------------------------------------------------------------------------

NetworkBuilder::NetworkBuilder(std::vector<std::size_t> input_shape)
    : input_shape_(std::move(input_shape)) {
  if (input_shape_.size() == 3) {
    if (input_shape_[1] != input_shape_[2]) throw ShapeError("only square inputs are supported");
    channels_ = input_shape_[0];
    size_ = input_shape_[1];
  } else if (input_shape_.size() == 1) {
    channels_ = input_shape_[0];
    size_ = 1;
  } else {
    throw ShapeError("input shape must be [C,H,W] or [D], got " + shape_string(input_shape_));
  }
}

void NetworkBuilder::push(LayerSpec spec) {
  spec.index = layers_.size();
  spec.n_params = spec.weight_count() + spec.bias_count();
  channels_ = spec.c_out;
  size_ = spec.out_feature_size();
  layers_.push_back(spec);
}

NetworkBuilder& NetworkBuilder::conv2d(std::size_t c_out, std::size_t kernel,
                                       std::size_t stride,
                                       std::optional<std::size_t> padding) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.c_in = channels_;
  s.c_out = c_out;
  s.kernel_size = kernel;
  s.stride = stride;
  s.padding = padding.value_or((kernel - 1) / 2);
  s.feature_size = size_;
  if (size_ + 2 * s.padding < kernel) throw ShapeError("conv kernel larger than padded input");
  push(s);
  return *this;
}

NetworkBuilder& NetworkBuilder::depthwise_conv2d(std::size_t kernel, std::size_t stride,
                                                 std::optional<std::size_t> padding) {
  conv2d(channels_, kernel, stride, padding);
  layers_.back().depthwise = true;
  layers_.back().n_params = layers_.back().weight_count() + layers_.back().bias_count();
  return *this;
}

NetworkBuilder& NetworkBuilder::relu() {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.c_in = s.c_out = channels_;
  s.feature_size = size_;
  push(s);
  return *this;
}

NetworkBuilder& NetworkBuilder::avgpool2d(std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::avgpool2d;
  s.c_in = s.c_out = channels_;
  s.kernel_size = kernel;
  s.stride = stride;
  s.feature_size = size_;
  if (kernel > size_) throw ShapeError("pool kernel larger than input");
  push(s);
  return *this;
}

NetworkBuilder& NetworkBuilder::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  s.c_in = channels_;
  s.c_out = channels_ * size_ * size_;
  s.feature_size = size_;
  push(s);
  return *this;
}

NetworkBuilder& NetworkBuilder::dense(std::size_t out_features) {
  if (size_ != 1) flatten();
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.c_in = channels_;
  s.c_out = out_features;
  s.feature_size = 1;
  push(s);
  return *this;
}

Network NetworkBuilder::build(std::uint64_t seed) const {
  Network net;
  net.input_shape = input_shape_;
  net.layers = layers_;
  net.num_classes = layers_.empty() ? 0 : layers_.back().out_numel();
  net.weights.resize(layers_.size());
  net.biases.resize(layers_.size());
  for (const auto& l : layers_) {
    if (!l.quantizable()) continue;
    const std::size_t fan_in = l.weight_count() / l.c_out;
    const Real bound = std::sqrt(6.0 / static_cast<Real>(fan_in));
    Rng rng = substream(seed, l.index, StreamPhase::init);
    std::uniform_real_distribution<Real> dist(-bound, bound);
    Tensor w(l.kind == LayerKind::dense
                 ? std::vector<std::size_t>{l.c_out, l.c_in}
                 : std::vector<std::size_t>{l.c_out, l.depthwise ? 1 : l.c_in,
                                            l.kernel_size, l.kernel_size});
    for (auto& v : w.values) v = dist(rng);
    net.weights[l.index] = std::move(w);
    net.biases[l.index] = Tensor({l.c_out});
  }
  net.validate();
  return net;
}

Network make_tiny_convnet(const TinyConvNetConfig& cfg, std::uint64_t seed) {
  if (cfg.channels.empty()) throw ShapeError("TinyConvNet needs at least one conv block");
  NetworkBuilder b(cfg.input_shape);
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    b.conv2d(cfg.channels[i], 3, i % 2 == 1 ? 2 : 1).relu();
  }
  if (cfg.global_pool) {
    const std::size_t s = b.build(seed).layers.back().out_feature_size();
    b.avgpool2d(s, s);
  }
  b.flatten().dense(cfg.num_classes);
  return b.build(seed);
}

Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                 std::size_t num_classes, std::uint64_t seed) {
  NetworkBuilder b({input_dim});
  for (auto h : hidden) b.dense(h).relu();
  b.dense(num_classes);
  return b.build(seed);
}

// ---------------------------------------------------------------------------

Real fake_quantize(Real v, int bits, Real clip, bool symmetric) {
  const Real levels = static_cast<Real>((std::int64_t{1} << (bits - 1)) - 1);
  const Real scale = clip / levels;
  const Real lo = symmetric ? -clip : 0.0;
  const Real clipped = std::clamp(v, lo, clip);
  return std::clamp(std::round(clipped / scale) * scale, lo, clip);
}

namespace {

void dense_forward(const LayerSpec& l, const Real* w, const Real* b, const Real* in, Real* out) {
  for (std::size_t o = 0; o < l.c_out; ++o) {
    const Real* row = w + o * l.c_in;
    Real acc = b[o];
    for (std::size_t i = 0; i < l.c_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

// Output columns ox whose input column ox * stride + k - pad lies in [0, S).
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t stride, std::size_t pad,
                                                std::size_t S, std::size_t O) {
  const std::size_t lo = pad > k ? (pad - k + stride - 1) / stride : 0;
  const std::size_t hi = std::min(O, (S + pad - k + stride - 1) / stride);
  return {lo, std::max(lo, hi)};
}

void conv_forward(const LayerSpec& l, const Real* w, const Real* b, const Real* in, Real* out) {
  const std::size_t S = l.feature_size, O = l.out_feature_size(), K = l.kernel_size;
  const std::size_t cin_w = l.depthwise ? 1 : l.c_in;
  const auto pad = static_cast<std::ptrdiff_t>(l.padding);
  for (std::size_t co = 0; co < l.c_out; ++co) {
    Real* out_c = out + co * O * O;
    std::fill(out_c, out_c + O * O, b[co]);
    const std::size_t ci_begin = l.depthwise ? co : 0;
    const std::size_t ci_end = l.depthwise ? co + 1 : l.c_in;
    for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
      const Real* in_c = in + ci * S * S;
      const Real* w_c = w + (co * cin_w + (l.depthwise ? 0 : ci)) * K * K;
      for (std::size_t ky = 0; ky < K; ++ky) {
        for (std::size_t kx = 0; kx < K; ++kx) {
          const Real wv = w_c[ky * K + kx];
          const auto [ox_lo, ox_hi] = valid_range(kx, l.stride, l.padding, S, O);
          for (std::size_t oy = 0; oy < O; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(S)) continue;
            const Real* in_row = in_c + iy * S;
            Real* out_row = out_c + oy * O;
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) out_row[ox] += wv * in_row[ox * l.stride + kx - l.padding];
          }
        }
      }
    }
  }
}

void conv_backward(const LayerSpec& l, const Real* w, const Real* in, const Real* dout,
                   Real* din, Real* dw, Real* db) {
  const std::size_t S = l.feature_size, O = l.out_feature_size(), K = l.kernel_size;
  const std::size_t cin_w = l.depthwise ? 1 : l.c_in;
  const auto pad = static_cast<std::ptrdiff_t>(l.padding);
  for (std::size_t co = 0; co < l.c_out; ++co) {
    const Real* dout_c = dout + co * O * O;
    for (std::size_t i = 0; i < O * O; ++i) db[co] += dout_c[i];
    const std::size_t ci_begin = l.depthwise ? co : 0;
    const std::size_t ci_end = l.depthwise ? co + 1 : l.c_in;
    for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
      const Real* in_c = in + ci * S * S;
      Real* din_c = din + ci * S * S;
      const std::size_t widx = (co * cin_w + (l.depthwise ? 0 : ci)) * K * K;
      for (std::size_t ky = 0; ky < K; ++ky) {
        for (std::size_t kx = 0; kx < K; ++kx) {
          const Real wv = w[widx + ky * K + kx];
          Real gw = 0.0;
          for (std::size_t oy = 0; oy < O; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(S)) continue;
            for (std::size_t ox = 0; ox < O; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(S)) continue;
              const Real g = dout_c[oy * O + ox];
              gw += g * in_c[iy * S + ix];
              din_c[iy * S + ix] += g * wv;
            }
          }
          dw[widx + ky * K + kx] += gw;
        }
      }
    }
  }
}

void pool_forward(const LayerSpec& l, const Real* in, Real* out) {
  const std::size_t S = l.feature_size, O = l.out_feature_size(), K = l.kernel_size;
  const Real inv = 1.0 / static_cast<Real>(K * K);
  for (std::size_t c = 0; c < l.c_in; ++c) {
    for (std::size_t oy = 0; oy < O; ++oy) {
      for (std::size_t ox = 0; ox < O; ++ox) {
        Real acc = 0.0;
        for (std::size_t ky = 0; ky < K; ++ky) {
          for (std::size_t kx = 0; kx < K; ++kx) {
            acc += in[(c * S + oy * l.stride + ky) * S + ox * l.stride + kx];
          }
        }
        out[(c * O + oy) * O + ox] = acc * inv;
      }
    }
  }
}

void pool_backward(const LayerSpec& l, const Real* dout, Real* din) {
  const std::size_t S = l.feature_size, O = l.out_feature_size(), K = l.kernel_size;
  const Real inv = 1.0 / static_cast<Real>(K * K);
  for (std::size_t c = 0; c < l.c_in; ++c) {
    for (std::size_t oy = 0; oy < O; ++oy) {
      for (std::size_t ox = 0; ox < O; ++ox) {
        const Real g = dout[(c * O + oy) * O + ox] * inv;
        for (std::size_t ky = 0; ky < K; ++ky) {
          for (std::size_t kx = 0; kx < K; ++kx) {
            din[(c * S + oy * l.stride + ky) * S + ox * l.stride + kx] += g;
          }
        }
      }
    }
  }
}

const Real* layer_weights(const Network& net, std::size_t k, const QuantOverlay* q) {
  if (q && q->active_for(k)) return q->weights[k].values.data();
  return net.weights[k].values.data();
}

const ActQuant* input_quant(std::size_t k, const QuantOverlay* q) {
  if (!q || k >= q->inputs.size() || q->inputs[k].bits == 0) return nullptr;
  return &q->inputs[k];
}

void quantize_into(const ActQuant& aq, const Real* in, Real* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = fake_quantize(in[i], aq.bits, aq.clip, aq.symmetric);
}

/// Runs layer k from `in` into `out`. `in` may be rewritten in place by the
/// input quantizer, so callers pass scratch they own.
void run_layer(const Network& net, std::size_t k, const QuantOverlay* q, Real* in, Real* out) {
  const LayerSpec& l = net.layers[k];
  if (const ActQuant* aq = input_quant(k, q)) quantize_into(*aq, in, in, l.in_numel());
  switch (l.kind) {
    case LayerKind::dense:
      dense_forward(l, layer_weights(net, k, q), net.biases[k].values.data(), in, out);
      break;
    case LayerKind::conv2d:
      conv_forward(l, layer_weights(net, k, q), net.biases[k].values.data(), in, out);
      break;
    case LayerKind::relu:
      for (std::size_t i = 0; i < l.in_numel(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case LayerKind::avgpool2d:
      pool_forward(l, in, out);
      break;
    case LayerKind::flatten:
      std::copy(in, in + l.in_numel(), out);
      break;
  }
}

void check_input(const Network& net, std::span<const Real> x) {
  if (x.size() != net.input_size()) {
    throw ShapeError("input has " + std::to_string(x.size()) + " values, network expects " +
                     shape_string(net.input_shape));
  }
}

struct Scratch {
  std::vector<Real> a, b;
};

/// Forward into thread-local scratch; returns a pointer to the logits.
const Real* forward_scratch(const Network& net, std::span<const Real> x, const QuantOverlay* q) {
  check_input(net, x);
  thread_local Scratch scratch;
  const std::size_t m = net.max_activation_size();
  if (scratch.a.size() < m) {
    scratch.a.resize(m);
    scratch.b.resize(m);
  }
  Real* cur = scratch.a.data();
  Real* nxt = scratch.b.data();
  std::copy(x.begin(), x.end(), cur);
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    run_layer(net, k, q, cur, nxt);
    std::swap(cur, nxt);
  }
  return cur;
}

}  // namespace

Tensor forward(const Network& net, std::span<const Real> x, const QuantOverlay* overlay) {
  const Real* out = forward_scratch(net, x, overlay);
  return Tensor({net.num_classes}, std::vector<Real>(out, out + net.num_classes));
}

std::size_t argmax(std::span<const Real> logits) {
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::size_t predict(const Network& net, std::span<const Real> x, const QuantOverlay* overlay) {
  const Real* out = forward_scratch(net, x, overlay);
  return argmax(std::span<const Real>(out, net.num_classes));
}

Tape forward_tape(const Network& net, std::span<const Real> x, const QuantOverlay* q) {
  check_input(net, x);
  Tape tape;
  tape.inputs.resize(net.layers.size());
  tape.raw_inputs.resize(net.layers.size());
  std::vector<Real> cur(x.begin(), x.end());
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const LayerSpec& l = net.layers[k];
    if (input_quant(k, q)) tape.raw_inputs[k] = cur;
    std::vector<Real> out(l.out_numel());
    run_layer(net, k, q, cur.data(), out.data());
    tape.inputs[k] = std::move(cur);
    cur = std::move(out);
  }
  tape.output = std::move(cur);
  return tape;
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    g.weights.emplace_back(net.weights[k].shape);
    g.biases.emplace_back(net.biases[k].shape);
  }
  return g;
}

std::vector<Real> backward(const Network& net, const Tape& tape, std::span<const Real> d_output,
                           Gradients& grads, const QuantOverlay* q) {
  std::vector<Real> dcur(d_output.begin(), d_output.end());
  for (std::size_t kk = net.layers.size(); kk-- > 0;) {
    const LayerSpec& l = net.layers[kk];
    const std::vector<Real>& in = tape.inputs[kk];
    std::vector<Real> din(l.in_numel(), 0.0);
    switch (l.kind) {
      case LayerKind::dense: {
        const Real* w = layer_weights(net, kk, q);
        Real* dw = grads.weights[kk].values.data();
        Real* db = grads.biases[kk].values.data();
        for (std::size_t o = 0; o < l.c_out; ++o) {
          const Real g = dcur[o];
          db[o] += g;
          const Real* row = w + o * l.c_in;
          Real* drow = dw + o * l.c_in;
          for (std::size_t i = 0; i < l.c_in; ++i) {
            drow[i] += g * in[i];
            din[i] += g * row[i];
          }
        }
        break;
      }
      case LayerKind::conv2d:
        conv_backward(l, layer_weights(net, kk, q), in.data(), dcur.data(), din.data(),
                      grads.weights[kk].values.data(), grads.biases[kk].values.data());
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < din.size(); ++i) din[i] = in[i] > 0.0 ? dcur[i] : 0.0;
        break;
      case LayerKind::avgpool2d:
        pool_backward(l, dcur.data(), din.data());
        break;
      case LayerKind::flatten:
        din = dcur;
        break;
    }
    // Straight-through estimator: identity inside the clip range, zero outside.
    if (const ActQuant* aq = input_quant(kk, q)) {
      const std::vector<Real>& raw = tape.raw_inputs[kk];
      const Real lo = aq->symmetric ? -aq->clip : 0.0;
      for (std::size_t i = 0; i < din.size(); ++i) {
        if (raw[i] < lo || raw[i] > aq->clip) din[i] = 0.0;
      }
    }
    dcur = std::move(din);
  }
  return dcur;
}

Real softmax_cross_entropy(std::span<const Real> logits, std::size_t label, std::span<Real> d_logits) {
  const Real mx = *std::max_element(logits.begin(), logits.end());
  Real sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d_logits[i] = std::exp(logits[i] - mx);
    sum += d_logits[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) d_logits[i] /= sum;
  const Real loss = std::log(sum) + mx - logits[label];
  d_logits[label] -= 1.0;
  return loss;
}

Gradients compute_gradients(const Network& net, const Batch& batch, const QuantOverlay* q) {
  if (batch.inputs.empty()) throw ShapeError("empty batch");
  if (batch.inputs.size() != batch.labels.size()) throw ShapeError("batch inputs and labels differ in length");
  Gradients grads = Gradients::zeros_like(net);
  const Real inv_n = 1.0 / static_cast<Real>(batch.inputs.size());
  std::vector<Real> dlogits(net.num_classes);
  Real loss = 0.0;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    if (batch.labels[i] >= net.num_classes) {
      throw DomainError("label " + std::to_string(batch.labels[i]) + " out of range");
    }
    Tape tape = forward_tape(net, batch.inputs[i], q);
    loss += softmax_cross_entropy(tape.output, batch.labels[i], dlogits);
    for (auto& d : dlogits) d *= inv_n;
    backward(net, tape, dlogits, grads, q);
  }
  grads.loss = loss * inv_n;
  // Weights the quantizer clipped receive no gradient.
  if (q) {
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      if (!q->active_for(k) || k >= q->weight_clips.size()) continue;
      const Real c = q->weight_clips[k];
      const auto& w = net.weights[k].values;
      auto& g = grads.weights[k].values;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < -c || w[i] > c) g[i] = 0.0;
      }
    }
  }
  return grads;
}

}  // namespace arq::nn
