#include "arq/search.hpp"

#include <cstdio>
#include <ostream>

namespace arq::search {

RewardMode parse_reward_mode(const std::string& name) {
  if (name == "acr") return RewardMode::acr;
  if (name == "val") return RewardMode::val;
  if (name == "acc") return RewardMode::acc;
  if (name == "acc_at_r") return RewardMode::acc_at_r;
  if (name == "acr_plus_acc") return RewardMode::acr_plus_acc;
  throw ConfigError("unknown reward mode '" + name + "' (expected acr, val, acc, acc_at_r or acr_plus_acc)");
}

std::string to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::acr: return "acr";
    case RewardMode::val: return "val";
    case RewardMode::acc: return "acc";
    case RewardMode::acc_at_r: return "acc_at_r";
    case RewardMode::acr_plus_acc: return "acr_plus_acc";
  }
  return "acr";
}

Real reward_variant(RewardMode mode, const Metrics& q, const Metrics& o) {
  switch (mode) {
    case RewardMode::acr: return q.acr - o.acr;
    case RewardMode::val: return q.noisy_accuracy - o.noisy_accuracy;
    case RewardMode::acc: return q.clean_accuracy - o.clean_accuracy;
    case RewardMode::acc_at_r: return q.accuracy_at_radius - o.accuracy_at_radius;
    case RewardMode::acr_plus_acc: return (q.acr + q.clean_accuracy) - (o.acr + o.clean_accuracy);
  }
  throw ConfigError("unknown reward mode");
}

void SearchConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (n0 == 0 || n == 0) throw ConfigError("n0 and n must be positive");
  if (n > n0) throw ConfigError("n must not exceed n0");
  if (!(alpha > 0.0 && alpha < 1.0) || !(alpha_zeta > 0.0 && alpha_zeta < 1.0)) {
    throw ConfigError("alpha and alpha_zeta must lie in (0, 1)");
  }
  if (bit_min < 2 || bit_max > 32 || bit_min > bit_max) throw ConfigError("need 2 <= bit_min <= bit_max <= 32");
  if (finetune_batch == 0) throw ConfigError("fine-tune batch size must be positive");
  if (!(finetune_lr > 0.0)) throw ConfigError("fine-tune learning rate must be positive");
  if (calib_samples == 0) throw ConfigError("calibration needs at least one sample");
  if (!(reward_radius >= 0.0)) throw ConfigError("reward radius must be nonnegative");
  agent.validate();
}

std::uint64_t uniform_budget(const nn::Network& net, int bits, const SearchConfig& cfg) {
  const auto p = quant::uniform_policy(net, bits, std::min(bits, cfg.bit_min), std::max(bits, cfg.bit_max),
                                       cfg.pin_ends);
  return cost::policy_cost(net, p).total_bops;
}

namespace {

quant::CalibrationOptions calibration_options(const SearchConfig& cfg) {
  quant::CalibrationOptions o;
  o.max_samples = cfg.calib_samples;
  o.noise_sigma = cfg.sigma;
  o.seed = cfg.seed;
  return o;
}

Metrics metrics_of(const cert::ACRReport& rep, Real radius, Real noisy_acc) {
  Metrics m;
  m.acr = rep.acr;
  m.clean_accuracy = cert::certified_accuracy(rep.records, 0.0);
  m.accuracy_at_radius = cert::certified_accuracy(rep.records, radius);
  m.noisy_accuracy = noisy_acc;
  return m;
}

}  // namespace

quant::QuantizedNetwork prepare_quantized(const nn::Network& net, const quant::QuantPolicy& policy,
                                          const data::Dataset& train, const SearchConfig& cfg) {
  const auto copts = calibration_options(cfg);
  auto q = quant::apply_policy(net, policy, train, copts);
  if (cfg.n1 == 0) return q;
  nn::FineTuneConfig ft;
  ft.sigma = cfg.sigma;
  ft.n1 = std::min(cfg.n1, train.size());
  ft.learning_rate = cfg.finetune_lr;
  ft.momentum = cfg.finetune_momentum;
  ft.weight_decay = cfg.finetune_weight_decay;
  ft.batch_size = cfg.finetune_batch;
  ft.seed = cfg.seed;
  return quant::fine_tune_quantized(std::move(q), train, ft, cfg.recalibrate ? &train : nullptr, copts);
}

quant::QuantPolicy policy_from_actions(const nn::Network& net, const std::vector<Real>& actions,
                                       const SearchConfig& cfg) {
  const auto layers = net.quantizable_layers();
  if (actions.size() != 2 * layers.size()) {
    throw DomainError("expected " + std::to_string(2 * layers.size()) + " actions, got " +
                      std::to_string(actions.size()));
  }
  quant::QuantPolicy p;
  p.bit_min = cfg.bit_min;
  p.bit_max = cfg.bit_max;
  p.pin_ends = cfg.pin_ends;
  p.entries.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& e = p.entries[i];
    e.layer = layers[i];
    if (p.is_pinned(i)) {
      e.weight_bits = e.act_bits = quant::QuantPolicy::kPinnedBits;
    } else {
      e.weight_bits = cost::action_to_bitwidth(actions[2 * i], cfg.bit_min, cfg.bit_max);
      e.act_bits = cost::action_to_bitwidth(actions[2 * i + 1], cfg.bit_min, cfg.bit_max);
    }
  }
  return p;
}

cert::Certification certify_original(const nn::Network& net, const data::Dataset& inputs,
                                     const SearchConfig& cfg) {
  cert::CertifyConfig cc;
  cc.sigma = cfg.sigma;
  cc.n0 = cfg.n0;
  cc.alpha = cfg.alpha;
  cc.seed = cfg.seed;
  cc.threads = cfg.threads;
  return cert::certify_dataset(cert::NetworkClassifier(net), inputs, cc);
}

SearchResult run_search(const nn::Network& net, const data::DatasetSplits& splits, const SearchConfig& cfg,
                        const cert::Certification* precomputed, const EpisodeCallback& on_episode) {
  cfg.validate();
  net.validate();
  const auto layers = net.quantizable_layers();
  if (layers.empty()) throw DomainError("network has no quantizable layers");

  SearchResult result;
  result.budget = cfg.budget ? cfg.budget : uniform_budget(net, 4, cfg);
  {
    const auto floor = quant::uniform_policy(net, cfg.bit_min, cfg.bit_min, cfg.bit_max, cfg.pin_ends);
    const std::uint64_t min_cost = cost::min_achievable_bops(net, floor);
    if (min_cost > result.budget) {
      throw BudgetError("BitOPs budget " + std::to_string(result.budget) + " is unsatisfiable; minimum achievable is " +
                            std::to_string(min_cost),
                        min_cost);
    }
  }
  if (precomputed) {
    const auto& c = precomputed->cache;
    if (c.sigma != cfg.sigma || c.alpha != cfg.alpha || c.n0 != cfg.n0 || c.seed != cfg.seed ||
        c.entries.size() != splits.cert.size()) {
      throw ConfigError("precomputed certification does not match the search settings");
    }
    result.original_certification = *precomputed;
  } else {
    result.original_certification = certify_original(net, splits.cert, cfg);
  }
  const cert::NetworkClassifier original(net);
  const auto& cache = result.original_certification.cache;
  result.original = metrics_of(result.original_certification.report, cfg.reward_radius,
                               nn::noisy_accuracy(net, splits.cert, cfg.sigma, cfg.seed));

  rl::DdpgAgent agent(cfg.agent, cfg.seed);
  const auto ranges = rl::LayerFeatureRanges::of(net);
  cert::IncrementalConfig ic;
  ic.sigma = cfg.sigma;
  ic.n = cfg.n;
  ic.alpha_zeta = cfg.alpha_zeta;
  ic.threads = cfg.threads;
  ic.fallback_on_abstain = cfg.irs_fallback;

  const std::size_t decisions = 2 * layers.size();
  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    EpisodeRecord rec;
    rec.episode = ep;
    Real a_prev = 0.0;
    rl::Observation s = rl::build_state(net.layers[layers[0]], false, a_prev, ranges);
    for (std::size_t d = 0; d < decisions; ++d) {
      const Real a = agent.select_action(s);
      rec.actions.push_back(a);
      rl::Transition t;
      t.state = s;
      t.action = a;
      t.done = d + 1 == decisions;
      t.next_state = t.done ? s : rl::build_state(net.layers[layers[(d + 1) / 2]], (d + 1) % 2 == 1, a, ranges);
      agent.store(t);
      s = t.next_state;
      a_prev = a;
    }

    rec.policy = cost::enforce_budget(net, policy_from_actions(net, rec.actions, cfg), result.budget);
    const auto costs = cost::policy_cost(net, rec.policy);
    rec.bops = costs.total_bops;
    rec.size_bits = costs.total_size_bits;

    const auto qnet = prepare_quantized(net, rec.policy, splits.train, cfg);
    const auto report = cert::incremental_certify(cert::QuantizedClassifier(qnet), cache, splits.cert, ic, &original);
    const Real noisy = cfg.reward == RewardMode::val
                           ? nn::noisy_accuracy(qnet.base(), splits.cert, cfg.sigma, cfg.seed, &qnet.overlay())
                           : 0.0;
    const Metrics m = metrics_of(report, cfg.reward_radius, noisy);
    rec.acr_p = m.acr;
    rec.reward = reward_variant(cfg.reward, m, result.original);

    if (rec.reward > result.best_reward) {
      result.best_reward = rec.reward;
      result.best_policy = rec.policy;
      result.best_episode = ep;
      result.best_network = qnet;
    }
    agent.end_episode(rec.reward);
    if (on_episode) on_episode(rec);
    result.history.push_back(std::move(rec));
  }
  result.agent = std::move(agent);
  return result;
}

PolicyEvaluation evaluate_policy(const nn::Network& net, const quant::QuantPolicy& policy,
                                 const data::Dataset& train, const data::Dataset& inputs,
                                 const SearchConfig& cfg) {
  quant::validate_policy(net, policy);
  PolicyEvaluation ev;
  ev.network = prepare_quantized(net, policy, train, cfg);
  ev.cost = cost::policy_cost(net, policy);
  cert::CertifyConfig cc;
  cc.sigma = cfg.sigma;
  cc.n0 = cfg.n0;
  cc.alpha = cfg.alpha;
  cc.seed = cfg.seed;
  cc.threads = cfg.threads;
  ev.report = cert::certify_dataset(cert::QuantizedClassifier(ev.network), inputs, cc).report;
  return ev;
}

void write_history_csv(std::ostream& os, const std::vector<EpisodeRecord>& history) {
  os << "episode,reward,acr_p,bops,size_bits,policy_string\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f,%llu,%llu,", r.episode, r.reward, r.acr_p,
                  static_cast<unsigned long long>(r.bops), static_cast<unsigned long long>(r.size_bits));
    os << buf << quant::policy_string(r.policy) << '\n';
  }
}

}  // namespace arq::search
