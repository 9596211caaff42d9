#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "arq/network.hpp"
#include "arq/optim.hpp"
#include "arq/rng.hpp"

namespace arq::rl {

inline constexpr std::size_t kStateSize = 10;

/// (k, c_in, c_out, s_kernel, s_stride, s_feat, n_params, i_d, i_wa, a_prev).
/// The first seven are min-max normalised over the quantizable layers.
using Observation = std::array<Real, kStateSize>;

/// Per-feature ranges of the structural features over a network's quantizable layers.
struct LayerFeatureRanges {
  std::array<Real, 7> min{};
  std::array<Real, 7> max{};

  static LayerFeatureRanges of(const nn::Network& net);
  static LayerFeatureRanges of(const std::vector<nn::LayerSpec>& layers);
};

/// Constant features (min == max) map to 0. Throws DomainError for
/// non-quantizable layers.
Observation build_state(const nn::LayerSpec& layer, bool is_activation, Real a_prev,
                        const LayerFeatureRanges& ranges);

struct Transition {
  Observation state{};
  Real action = 0.0;
  Real reward = 0.0;
  Observation next_state{};
  bool done = false;
};

/// Ring buffer of finalized transitions plus the currently open episode.
/// Only finalized transitions are ever sampled.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  /// Stamps every open transition with `reward` and makes them sample-able.
  void finalize_episode(Real reward);

  std::size_t size() const { return ring_.size(); }
  std::size_t open_size() const { return open_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return ring_[i]; }

  /// Uniform draw with replacement.
  std::vector<Transition> sample(std::size_t batch, Rng& rng) const;

  const std::vector<Transition>& finalized() const { return ring_; }
  const std::vector<Transition>& open() const { return open_; }
  std::size_t head() const { return head_; }
  void restore(std::vector<Transition> ring, std::size_t head, std::vector<Transition> open);

 private:
  std::size_t capacity_;
  std::vector<Transition> ring_;
  std::size_t head_ = 0;
  std::vector<Transition> open_;
};

struct AgentConfig {
  Real actor_lr = 1e-4;
  Real critic_lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real explore_std = 0.5;
  Real explore_decay = 0.99;
  Real tau = 0.01;
  Real gamma = 1.0;
  std::size_t batch_size = 64;
  std::size_t warmup_episodes = 8;
  std::size_t capacity = 2048;
  std::vector<std::size_t> hidden{64, 64};

  void validate() const;
};

struct UpdateStats {
  bool performed = false;
  Real critic_loss = 0.0;
  Real actor_objective = 0.0;  // mean Q(s, mu(s)) before the actor step
};

class DdpgAgent {
 public:
  DdpgAgent(AgentConfig cfg, std::uint64_t seed);

  /// mu(s) in [0,1]: tanh head rescaled, zero-initialised so it starts at 0.5.
  Real policy_action(const Observation& s) const;
  Real q_value(const Observation& s, Real a) const;

  /// clip(mu(s) + eps, 0, 1) with eps from a normal truncated to keep the sum
  /// inside [0,1]; falls back to clipping after 16 rejected draws.
  Real act(const Observation& s, Real explore_std);

  /// Uniform random action during warmup, otherwise act() at the decayed std.
  Real select_action(const Observation& s);

  /// explore_std * explore_decay^episodes
  Real exploration_std() const;
  bool warming_up() const { return episodes_ < cfg_.warmup_episodes; }
  std::size_t episodes() const { return episodes_; }

  void store(const Transition& t) { buffer_.push(t); }

  /// Finalizes the open episode with `reward`; past warmup, runs one update
  /// per transition of that episode.
  std::vector<UpdateStats> end_episode(Real reward);

  /// One update on a uniformly sampled batch; skipped when the buffer holds
  /// fewer finalized transitions than the batch size.
  UpdateStats update();
  UpdateStats update_on(const std::vector<Transition>& batch);

  const ReplayBuffer& buffer() const { return buffer_; }
  const AgentConfig& config() const { return cfg_; }
  const nn::Network& actor() const { return actor_; }
  const nn::Network& critic() const { return critic_; }
  const nn::Network& actor_target() const { return actor_target_; }
  const nn::Network& critic_target() const { return critic_target_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  static DdpgAgent load_checkpoint(const std::filesystem::path& path);

 private:
  Real target_value(const Transition& t) const;

  AgentConfig cfg_;
  nn::Network actor_, critic_, actor_target_, critic_target_;
  nn::Adam actor_opt_, critic_opt_;
  ReplayBuffer buffer_;
  Rng rng_;
  std::size_t episodes_ = 0;
};

/// theta_target <- tau * theta + (1 - tau) * theta_target
void soft_update(nn::Network& target, const nn::Network& online, Real tau);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

}  // namespace arq::rl
