#include "arq/ddpg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "arq/model_io.hpp"

namespace arq::rl {

namespace {

std::array<Real, 7> structural_features(const nn::LayerSpec& l) {
  return {static_cast<Real>(l.index),       static_cast<Real>(l.c_in),   static_cast<Real>(l.c_out),
          static_cast<Real>(l.kernel_size), static_cast<Real>(l.stride), static_cast<Real>(l.feature_size),
          static_cast<Real>(l.n_params)};
}

nn::Network make_head_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::uint64_t seed,
                          bool zero_last) {
  nn::Network net = nn::make_mlp(in, hidden, 1, seed);
  if (zero_last) {
    const std::size_t last = net.layers.size() - 1;
    std::fill(net.weights[last].values.begin(), net.weights[last].values.end(), 0.0);
    std::fill(net.biases[last].values.begin(), net.biases[last].values.end(), 0.0);
  }
  return net;
}

std::vector<Real> critic_input(const Observation& s, Real a) {
  std::vector<Real> x(s.begin(), s.end());
  x.push_back(a);
  return x;
}

Real squash(Real z) { return 0.5 * (std::tanh(z) + 1.0); }

}  // namespace

LayerFeatureRanges LayerFeatureRanges::of(const std::vector<nn::LayerSpec>& layers) {
  LayerFeatureRanges r;
  bool first = true;
  for (const auto& l : layers) {
    if (!l.quantizable()) continue;
    const auto f = structural_features(l);
    for (std::size_t i = 0; i < f.size(); ++i) {
      r.min[i] = first ? f[i] : std::min(r.min[i], f[i]);
      r.max[i] = first ? f[i] : std::max(r.max[i], f[i]);
    }
    first = false;
  }
  return r;
}

LayerFeatureRanges LayerFeatureRanges::of(const nn::Network& net) { return of(net.layers); }

Observation build_state(const nn::LayerSpec& layer, bool is_activation, Real a_prev,
                        const LayerFeatureRanges& ranges) {
  if (!layer.quantizable()) {
    throw DomainError("layer " + std::to_string(layer.index) + " is not quantizable");
  }
  Observation s{};
  const auto f = structural_features(layer);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Real span = ranges.max[i] - ranges.min[i];
    s[i] = span > 0.0 ? std::clamp((f[i] - ranges.min[i]) / span, 0.0, 1.0) : 0.0;
  }
  s[7] = layer.depthwise ? 1.0 : 0.0;
  s[8] = is_activation ? 1.0 : 0.0;
  s[9] = a_prev;
  return s;
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) { open_.push_back(t); }

void ReplayBuffer::finalize_episode(Real reward) {
  if (open_.empty()) throw DomainError("no open episode to finalize");
  for (auto& t : open_) {
    t.reward = reward;
    if (ring_.size() < capacity_) {
      ring_.push_back(t);
    } else {
      ring_[head_] = t;
      head_ = (head_ + 1) % capacity_;
    }
  }
  open_.clear();
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (ring_.empty()) throw DomainError("replay buffer has no finalized transitions");
  std::uniform_int_distribution<std::size_t> pick(0, ring_.size() - 1);
  std::vector<Transition> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(ring_[pick(rng)]);
  return out;
}

void ReplayBuffer::restore(std::vector<Transition> ring, std::size_t head, std::vector<Transition> open) {
  if (ring.size() > capacity_ || (head != 0 && head >= capacity_)) throw FormatError("replay buffer state exceeds capacity");
  ring_ = std::move(ring);
  head_ = head;
  open_ = std::move(open);
}

// ---------------------------------------------------------------------------

void AgentConfig::validate() const {
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("agent learning rates must be positive");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(explore_std >= 0.0)) throw ConfigError("explore_std must be nonnegative");
  if (!(explore_decay > 0.0 && explore_decay <= 1.0)) throw ConfigError("explore_decay must lie in (0, 1]");
  if (batch_size == 0) throw ConfigError("agent batch size must be positive");
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
  if (hidden.empty()) throw ConfigError("agent needs at least one hidden layer");
}

DdpgAgent::DdpgAgent(AgentConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      actor_opt_(cfg_.actor_lr, cfg_.beta1, cfg_.beta2),
      critic_opt_(cfg_.critic_lr, cfg_.beta1, cfg_.beta2),
      buffer_(cfg_.capacity),
      rng_(substream(seed, 0, StreamPhase::agent)) {
  cfg_.validate();
  actor_ = make_head_mlp(kStateSize, cfg_.hidden, substream_seed(seed, 1, StreamPhase::init), true);
  critic_ = make_head_mlp(kStateSize + 1, cfg_.hidden, substream_seed(seed, 2, StreamPhase::init), false);
  actor_target_ = actor_;
  critic_target_ = critic_;
}

Real DdpgAgent::policy_action(const Observation& s) const {
  return squash(nn::forward(actor_, std::span<const Real>(s))[0]);
}

Real DdpgAgent::q_value(const Observation& s, Real a) const { return nn::forward(critic_, critic_input(s, a))[0]; }

Real DdpgAgent::act(const Observation& s, Real explore_std) {
  const Real mu = std::clamp(policy_action(s), 0.0, 1.0);
  if (explore_std <= 0.0) return mu;
  std::normal_distribution<Real> noise(0.0, explore_std);
  Real a = mu;
  for (int attempt = 0; attempt < 16; ++attempt) {
    a = mu + noise(rng_);
    if (a >= 0.0 && a <= 1.0) return a;
  }
  return std::clamp(a, 0.0, 1.0);
}

Real DdpgAgent::select_action(const Observation& s) {
  if (warming_up()) {
    std::uniform_real_distribution<Real> uni(0.0, 1.0);
    return uni(rng_);
  }
  return act(s, exploration_std());
}

Real DdpgAgent::exploration_std() const {
  return cfg_.explore_std * std::pow(cfg_.explore_decay, static_cast<Real>(episodes_));
}

std::vector<UpdateStats> DdpgAgent::end_episode(Real reward) {
  const std::size_t steps = buffer_.open_size();
  buffer_.finalize_episode(reward);
  ++episodes_;
  std::vector<UpdateStats> stats;
  if (episodes_ <= cfg_.warmup_episodes) return stats;
  for (std::size_t i = 0; i < steps; ++i) stats.push_back(update());
  return stats;
}

UpdateStats DdpgAgent::update() {
  if (buffer_.size() < cfg_.batch_size) return {};
  return update_on(buffer_.sample(cfg_.batch_size, rng_));
}

Real DdpgAgent::target_value(const Transition& t) const {
  if (t.done) return t.reward;
  const Real a_next = squash(nn::forward(actor_target_, std::span<const Real>(t.next_state))[0]);
  return t.reward + cfg_.gamma * nn::forward(critic_target_, critic_input(t.next_state, a_next))[0];
}

UpdateStats DdpgAgent::update_on(const std::vector<Transition>& batch) {
  if (batch.empty()) return {};
  UpdateStats st;
  st.performed = true;
  const Real inv_b = 1.0 / static_cast<Real>(batch.size());

  // Critic: one descent step on the mean squared Bellman error.
  nn::Gradients cg = nn::Gradients::zeros_like(critic_);
  for (const auto& t : batch) {
    const Real y = target_value(t);
    const nn::Tape tape = nn::forward_tape(critic_, critic_input(t.state, t.action));
    const Real diff = tape.output[0] - y;
    st.critic_loss += diff * diff * inv_b;
    const Real d = 2.0 * diff * inv_b;
    nn::backward(critic_, tape, std::span<const Real>(&d, 1), cg);
  }
  critic_opt_.step(critic_, cg);

  // Actor: one ascent step on mean Q(s, mu(s)).
  nn::Gradients ag = nn::Gradients::zeros_like(actor_);
  nn::Gradients scratch = nn::Gradients::zeros_like(critic_);
  for (const auto& t : batch) {
    const nn::Tape atape = nn::forward_tape(actor_, t.state);
    const Real z = atape.output[0];
    const Real a = squash(z);
    const nn::Tape ctape = nn::forward_tape(critic_, critic_input(t.state, a));
    st.actor_objective += ctape.output[0] * inv_b;
    const Real one = 1.0;
    const auto dq_dx = nn::backward(critic_, ctape, std::span<const Real>(&one, 1), scratch);
    const Real th = std::tanh(z);
    const Real dz = -dq_dx.back() * 0.5 * (1.0 - th * th) * inv_b;
    nn::backward(actor_, atape, std::span<const Real>(&dz, 1), ag);
  }
  actor_opt_.step(actor_, ag);

  soft_update(actor_target_, actor_, cfg_.tau);
  soft_update(critic_target_, critic_, cfg_.tau);
  return st;
}

void soft_update(nn::Network& target, const nn::Network& online, Real tau) {
  auto mix = [tau](std::vector<Real>& t, const std::vector<Real>& o) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * o[i] + (1.0 - tau) * t[i];
  };
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    mix(target.weights[k].values, online.weights[k].values);
    mix(target.biases[k].values, online.biases[k].values);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint: "ARQDDPG", version, config, counters, four networks, optimizer
// moments, RNG state and replay contents.

namespace {

void write_tensors(io::BinaryWriter& w, const std::vector<Tensor>& ts) {
  w.u64(ts.size());
  for (const auto& t : ts) w.f64_array(t.values);
}

std::vector<Tensor> read_tensors(io::BinaryReader& r, const std::vector<Tensor>& like) {
  const std::uint64_t n = r.u64("tensor count");
  if (n == 0) return {};
  if (n != like.size()) throw FormatError(r.source() + ": optimizer state does not match network");
  std::vector<Tensor> out;
  for (const auto& t : like) {
    auto v = r.f64_array("optimizer moment");
    if (v.size() != t.numel()) throw FormatError(r.source() + ": optimizer moment size mismatch");
    out.emplace_back(t.shape, std::move(v));
  }
  return out;
}

void write_adam(io::BinaryWriter& w, const nn::Adam::State& s) {
  w.u64(s.t);
  write_tensors(w, s.m_w);
  write_tensors(w, s.v_w);
  write_tensors(w, s.m_b);
  write_tensors(w, s.v_b);
}

nn::Adam::State read_adam(io::BinaryReader& r, const nn::Network& net) {
  nn::Adam::State s;
  s.t = r.u64("adam step");
  s.m_w = read_tensors(r, net.weights);
  s.v_w = read_tensors(r, net.weights);
  s.m_b = read_tensors(r, net.biases);
  s.v_b = read_tensors(r, net.biases);
  return s;
}

void write_transition(io::BinaryWriter& w, const Transition& t) {
  for (Real v : t.state) w.f64(v);
  w.f64(t.action);
  w.f64(t.reward);
  for (Real v : t.next_state) w.f64(v);
  w.u8(t.done ? 1 : 0);
}

Transition read_transition(io::BinaryReader& r) {
  Transition t;
  for (auto& v : t.state) v = r.f64("state");
  t.action = r.f64("action");
  t.reward = r.f64("reward");
  for (auto& v : t.next_state) v = r.f64("next_state");
  t.done = r.u8("done") != 0;
  return t;
}

}  // namespace

void DdpgAgent::save_checkpoint(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  io::BinaryWriter w(os);
  w.bytes("ARQDDPG");
  w.u32(kCheckpointFormatVersion);
  for (Real v : {cfg_.actor_lr, cfg_.critic_lr, cfg_.beta1, cfg_.beta2, cfg_.explore_std, cfg_.explore_decay,
                 cfg_.tau, cfg_.gamma}) {
    w.f64(v);
  }
  w.u64(cfg_.batch_size);
  w.u64(cfg_.warmup_episodes);
  w.u64(cfg_.capacity);
  w.u64(cfg_.hidden.size());
  for (auto h : cfg_.hidden) w.u64(h);
  w.u64(episodes_);
  io::write_network(w, actor_);
  io::write_network(w, critic_);
  io::write_network(w, actor_target_);
  io::write_network(w, critic_target_);
  write_adam(w, actor_opt_.state());
  write_adam(w, critic_opt_.state());
  std::ostringstream rng_state;
  rng_state << rng_;
  w.string(rng_state.str());
  w.u64(buffer_.head());
  w.u64(buffer_.finalized().size());
  for (const auto& t : buffer_.finalized()) write_transition(w, t);
  w.u64(buffer_.open().size());
  for (const auto& t : buffer_.open()) write_transition(w, t);
  if (!os) throw Error("write failed: " + path.string());
}

DdpgAgent DdpgAgent::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::BinaryReader r(is, path.string());
  r.expect_magic("ARQDDPG", "ARQDDPG");
  r.expect_version(kCheckpointFormatVersion, "ARQDDPG");
  AgentConfig cfg;
  for (Real* v : {&cfg.actor_lr, &cfg.critic_lr, &cfg.beta1, &cfg.beta2, &cfg.explore_std, &cfg.explore_decay,
                  &cfg.tau, &cfg.gamma}) {
    *v = r.f64("agent config");
  }
  cfg.batch_size = r.u64("batch_size");
  cfg.warmup_episodes = r.u64("warmup_episodes");
  cfg.capacity = r.u64("capacity");
  const std::uint64_t nh = r.u64("hidden count");
  if (nh == 0 || nh > 64) throw FormatError(path.string() + ": implausible hidden layer count");
  cfg.hidden.clear();
  for (std::uint64_t i = 0; i < nh; ++i) cfg.hidden.push_back(r.u64("hidden"));
  DdpgAgent agent(cfg, 0);
  agent.episodes_ = r.u64("episodes");
  agent.actor_ = io::read_network(r);
  agent.critic_ = io::read_network(r);
  agent.actor_target_ = io::read_network(r);
  agent.critic_target_ = io::read_network(r);
  agent.actor_opt_.set_state(read_adam(r, agent.actor_));
  agent.critic_opt_.set_state(read_adam(r, agent.critic_));
  std::istringstream rng_state(r.string("rng state"));
  rng_state >> agent.rng_;
  if (!rng_state) throw FormatError(path.string() + ": corrupt RNG state");
  const std::uint64_t head = r.u64("buffer head");
  const std::uint64_t n_ring = r.u64("buffer size");
  if (n_ring > cfg.capacity) throw FormatError(path.string() + ": replay buffer exceeds capacity");
  std::vector<Transition> ring, open;
  for (std::uint64_t i = 0; i < n_ring; ++i) ring.push_back(read_transition(r));
  const std::uint64_t n_open = r.u64("open episode size");
  if (n_open > (1ULL << 20)) throw FormatError(path.string() + ": implausible open episode");
  for (std::uint64_t i = 0; i < n_open; ++i) open.push_back(read_transition(r));
  agent.buffer_.restore(std::move(ring), head, std::move(open));
  r.expect_end();
  return agent;
}

}  // namespace arq::rl
