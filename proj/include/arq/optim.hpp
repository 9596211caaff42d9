#pragma once

#include <vector>

#include "arq/network.hpp"

namespace arq::nn {

/// SGD with heavy-ball momentum. Weight decay is added to the gradient of
/// weights only; biases are not decayed.
///   m <- momentum * m + (grad + weight_decay * p)
///   p <- p - lr * m
class SgdMomentum {
 public:
  SgdMomentum(Real lr, Real momentum, Real weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(Network& net, const Gradients& grads);

  Real learning_rate() const { return lr_; }

 private:
  Real lr_, momentum_, weight_decay_;
  std::vector<Tensor> vel_w_, vel_b_;
};

/// ADAM with bias correction.
class Adam {
 public:
  explicit Adam(Real lr, Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Network& net, const Gradients& grads);

  struct State {
    std::vector<Tensor> m_w, v_w, m_b, v_b;
    std::uint64_t t = 0;
  };
  const State& state() const { return state_; }
  void set_state(State s) { state_ = std::move(s); }

 private:
  Real lr_, beta1_, beta2_, eps_;
  State state_;
};

}  // namespace arq::nn
