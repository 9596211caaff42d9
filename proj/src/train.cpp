#include "arq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "arq/rng.hpp"

namespace arq::nn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be nonnegative");
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = substream(seed, epoch, StreamPhase::shuffle);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Real sgd_pass(Network& net, const data::Dataset& data, std::span<const std::size_t> order,
              SgdMomentum& opt, const PassOptions& opts) {
  if (order.empty()) return 0.0;
  Rng noise_rng = substream(opts.seed, opts.epoch, StreamPhase::train_noise);
  std::normal_distribution<Real> normal(0.0, 1.0);
  const std::size_t d = data.sample_size();
  std::vector<std::vector<Real>> buffers;
  Real loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
    const std::size_t end = std::min(order.size(), start + opts.batch_size);
    buffers.resize(end - start);
    Batch batch;
    for (std::size_t i = start; i < end; ++i) {
      auto& buf = buffers[i - start];
      const auto x = data.sample(order[i]);
      buf.assign(x.begin(), x.end());
      if (opts.noise_sigma > 0.0) {
        for (std::size_t p = 0; p < d; ++p) buf[p] += opts.noise_sigma * normal(noise_rng);
      }
      batch.inputs.emplace_back(buf);
      batch.labels.push_back(data.labels[order[i]]);
    }
    Gradients g = compute_gradients(net, batch, opts.overlay);
    if (!std::isfinite(g.loss)) {
      throw DivergenceError("training diverged (non-finite loss) in epoch " +
                                std::to_string(opts.epoch + 1),
                            opts.epoch + 1);
    }
    opt.step(net, g);
    if (opts.after_step) opts.after_step(net);
    loss_sum += g.loss;
    ++batches;
  }
  return loss_sum / static_cast<Real>(batches);
}

Network train_gaussian(Network net, const data::Dataset& data, const TrainConfig& cfg,
                       TrainReport* report) {
  cfg.validate();
  if (data.empty()) throw DomainError("training dataset is empty");
  if (data.sample_size() != net.input_size()) throw ShapeError("dataset samples do not match network input");
  SgdMomentum opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = epoch_order(cfg.seed, e, data.size());
    PassOptions opts;
    opts.noise_sigma = cfg.noise_sigma;
    opts.seed = cfg.seed;
    opts.epoch = e;
    opts.batch_size = cfg.batch_size;
    const Real loss = sgd_pass(net, data, order, opt, opts);
    if (report) report->epoch_loss.push_back(loss);
  }
  return net;
}

std::vector<std::size_t> fine_tune_subset(std::size_t n, std::size_t n1, std::uint64_t seed) {
  if (n1 > n) throw DomainError("fine-tune subset size exceeds dataset size");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = substream(seed, 0, StreamPhase::finetune_subset);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n1);
  return idx;
}

Network fine_tune(Network net, const data::Dataset& data, const FineTuneConfig& cfg) {
  const auto subset = fine_tune_subset(data.size(), cfg.n1, cfg.seed);
  if (subset.empty()) return net;
  SgdMomentum opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  PassOptions opts;
  opts.noise_sigma = cfg.sigma;
  opts.seed = cfg.seed;
  opts.batch_size = cfg.batch_size;
  sgd_pass(net, data, subset, opt, opts);
  return net;
}

Real noisy_accuracy(const Network& net, const data::Dataset& data, Real sigma, std::uint64_t seed,
                    const QuantOverlay* overlay) {
  if (data.empty()) return 0.0;
  std::vector<Real> buf(data.sample_size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng = substream(seed, i, StreamPhase::validation);
    std::normal_distribution<Real> normal(0.0, 1.0);
    const auto x = data.sample(i);
    for (std::size_t p = 0; p < buf.size(); ++p) buf[p] = x[p] + (sigma > 0.0 ? sigma * normal(rng) : 0.0);
    if (predict(net, buf, overlay) == data.labels[i]) ++correct;
  }
  return static_cast<Real>(correct) / static_cast<Real>(data.size());
}

}  // namespace arq::nn
