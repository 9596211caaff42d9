#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "arq/certify.hpp"
#include "arq/cost.hpp"
#include "arq/dataset.hpp"
#include "arq/ddpg.hpp"
#include "arq/network.hpp"
#include "arq/quant.hpp"

namespace arq::search {

enum class RewardMode { acr, val, acc, acc_at_r, acr_plus_acc };

/// Throws ConfigError for unknown names.
RewardMode parse_reward_mode(const std::string& name);
std::string to_string(RewardMode mode);

/// Quality of a classifier as seen by the reward.
struct Metrics {
  Real acr = 0.0;
  Real clean_accuracy = 0.0;       // certified accuracy at radius 0
  Real accuracy_at_radius = 0.0;   // certified accuracy at the reward radius
  Real noisy_accuracy = 0.0;       // one Gaussian draw per input
};

/// Quantized metric minus original metric for the chosen mode.
Real reward_variant(RewardMode mode, const Metrics& quantized, const Metrics& original);

struct SearchConfig {
  Real sigma = 0.25;
  std::size_t n0 = 4000;
  std::size_t n = 200;
  Real alpha = 0.001;
  Real alpha_zeta = 0.001;
  std::size_t n1 = 512;
  std::uint64_t budget = 0;  // BitOPs
  std::size_t episodes = 60;
  int bit_min = 2;
  int bit_max = 8;
  bool pin_ends = true;
  Real finetune_lr = 0.01;
  Real finetune_momentum = 0.9;
  Real finetune_weight_decay = 1e-4;
  std::size_t finetune_batch = 32;
  std::size_t calib_samples = 256;
  bool recalibrate = true;
  bool irs_fallback = false;
  RewardMode reward = RewardMode::acr;
  Real reward_radius = 0.5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  rl::AgentConfig agent;

  void validate() const;
};

/// Budget equal to the cost of the uniform `bits` policy (ends pinned per cfg).
std::uint64_t uniform_budget(const nn::Network& net, int bits, const SearchConfig& cfg);

/// Apply the policy, fine-tune one straight-through epoch on n1 training
/// samples and (optionally) recalibrate clips. Shared by search and evaluation
/// so both see identically prepared networks.
quant::QuantizedNetwork prepare_quantized(const nn::Network& net, const quant::QuantPolicy& policy,
                                          const data::Dataset& train, const SearchConfig& cfg);

/// Bit-widths chosen by mapping a flat action list (weights then activations,
/// layer by layer) through the action-to-bit-width rule. Pinned ends get 8 bits.
quant::QuantPolicy policy_from_actions(const nn::Network& net, const std::vector<Real>& actions,
                                       const SearchConfig& cfg);

struct EpisodeRecord {
  std::size_t episode = 0;
  std::vector<Real> actions;
  quant::QuantPolicy policy;
  Real acr_p = 0.0;
  Real reward = 0.0;
  std::uint64_t bops = 0;
  std::uint64_t size_bits = 0;
};

struct SearchResult {
  std::optional<quant::QuantPolicy> best_policy;
  Real best_reward = -std::numeric_limits<Real>::infinity();
  std::size_t best_episode = 0;
  Metrics original;
  std::uint64_t budget = 0;
  std::vector<EpisodeRecord> history;
  cert::Certification original_certification;
  std::optional<quant::QuantizedNetwork> best_network;  // fine-tuned, as certified
  std::optional<rl::DdpgAgent> agent;                   // state after the last episode
};

using EpisodeCallback = std::function<void(const EpisodeRecord&)>;

/// Runs the policy search. `precomputed` skips certifying the original
/// network when it already was certified on the same split with the same
/// sigma, n0, alpha and seed.
SearchResult run_search(const nn::Network& net, const data::DatasetSplits& splits, const SearchConfig& cfg,
                        const cert::Certification* precomputed = nullptr,
                        const EpisodeCallback& on_episode = {});

/// Full certification of the original network on `inputs` with the search settings.
cert::Certification certify_original(const nn::Network& net, const data::Dataset& inputs,
                                     const SearchConfig& cfg);

struct PolicyEvaluation {
  cert::ACRReport report;
  cost::CostReport cost;
  quant::QuantizedNetwork network;
};

/// Prepares the quantized network exactly as during search and certifies it
/// from scratch on `inputs` with n0 samples.
PolicyEvaluation evaluate_policy(const nn::Network& net, const quant::QuantPolicy& policy,
                                 const data::Dataset& train, const data::Dataset& inputs,
                                 const SearchConfig& cfg);

/// `episode,reward,acr_p,bops,size_bits,policy_string`
void write_history_csv(std::ostream& os, const std::vector<EpisodeRecord>& history);

}  // namespace arq::search
