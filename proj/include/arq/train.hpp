#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "arq/dataset.hpp"
#include "arq/network.hpp"
#include "arq/optim.hpp"

namespace arq::nn {

struct TrainConfig {
  Real learning_rate = 0.05;
  Real momentum = 0.9;
  Real weight_decay = 1e-4;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  Real noise_sigma = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  std::vector<Real> epoch_loss;
};

/// Sample visiting order for one epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

/// Called after every optimizer step with the updated network.
using StepHook = std::function<void(const Network&)>;

struct PassOptions {
  Real noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t batch_size = 32;
  const QuantOverlay* overlay = nullptr;
  StepHook after_step;
};

/// One pass of mini-batch SGD over `order`, each input perturbed by fresh
/// N(0, sigma^2 I) noise. Returns the mean batch loss.
Real sgd_pass(Network& net, const data::Dataset& data, std::span<const std::size_t> order,
              SgdMomentum& opt, const PassOptions& opts);

/// Gaussian-augmented training from the network's current weights.
Network train_gaussian(Network net, const data::Dataset& data, const TrainConfig& cfg,
                       TrainReport* report = nullptr);

struct FineTuneConfig {
  Real sigma = 0.25;
  std::size_t n1 = 512;
  Real learning_rate = 0.01;
  Real momentum = 0.9;
  Real weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Fixed seeded subset of `n1` indices drawn from [0, n).
std::vector<std::size_t> fine_tune_subset(std::size_t n, std::size_t n1, std::uint64_t seed);

/// One Gaussian-augmented epoch over a seeded subset of n1 samples.
Network fine_tune(Network net, const data::Dataset& data, const FineTuneConfig& cfg);

/// Fraction of samples classified correctly after adding one N(0, sigma^2 I)
/// draw per sample (sigma 0 gives plain accuracy).
Real noisy_accuracy(const Network& net, const data::Dataset& data, Real sigma, std::uint64_t seed,
                    const QuantOverlay* overlay = nullptr);

}  // namespace arq::nn
