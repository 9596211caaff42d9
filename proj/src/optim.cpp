#include "arq/optim.hpp"

#include <cmath>

namespace arq::nn {

namespace {

void ensure_like(std::vector<Tensor>& state, const std::vector<Tensor>& like) {
  if (state.size() == like.size()) return;
  state.clear();
  for (const auto& t : like) state.emplace_back(t.shape);
}

void check_grads(const Network& net, const Gradients& g) {
  if (g.weights.size() != net.weights.size() || g.biases.size() != net.biases.size()) {
    throw ShapeError("gradient table does not match network");
  }
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    if (g.weights[k].numel() != net.weights[k].numel() ||
        g.biases[k].numel() != net.biases[k].numel()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(k));
    }
  }
}

}  // namespace

void SgdMomentum::step(Network& net, const Gradients& grads) {
  check_grads(net, grads);
  ensure_like(vel_w_, net.weights);
  ensure_like(vel_b_, net.biases);
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    auto& w = net.weights[k].values;
    auto& vw = vel_w_[k].values;
    const auto& gw = grads.weights[k].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      vw[i] = momentum_ * vw[i] + (gw[i] + weight_decay_ * w[i]);
      w[i] -= lr_ * vw[i];
    }
    auto& b = net.biases[k].values;
    auto& vb = vel_b_[k].values;
    const auto& gb = grads.biases[k].values;
    for (std::size_t i = 0; i < b.size(); ++i) {
      vb[i] = momentum_ * vb[i] + gb[i];
      b[i] -= lr_ * vb[i];
    }
  }
}

void Adam::step(Network& net, const Gradients& grads) {
  check_grads(net, grads);
  ensure_like(state_.m_w, net.weights);
  ensure_like(state_.v_w, net.weights);
  ensure_like(state_.m_b, net.biases);
  ensure_like(state_.v_b, net.biases);
  ++state_.t;
  const Real c1 = 1.0 - std::pow(beta1_, static_cast<Real>(state_.t));
  const Real c2 = 1.0 - std::pow(beta2_, static_cast<Real>(state_.t));
  auto update = [&](std::vector<Real>& p, std::vector<Real>& m, std::vector<Real>& v,
                    const std::vector<Real>& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  };
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    update(net.weights[k].values, state_.m_w[k].values, state_.v_w[k].values, grads.weights[k].values);
    update(net.biases[k].values, state_.m_b[k].values, state_.v_b[k].values, grads.biases[k].values);
  }
}

}  // namespace arq::nn
