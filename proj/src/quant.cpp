#include "arq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "arq/rng.hpp"

namespace arq::quant {

Real scale_for(int bits, Real clip) {
  return clip / static_cast<Real>((std::int64_t{1} << (bits - 1)) - 1);
}

Real quantize_value(Real v, int bits, Real clip, QuantMode mode) {
  return nn::fake_quantize(v, bits, clip, mode == QuantMode::weight);
}

Tensor quantize_tensor(const Tensor& t, int bits, Real clip, QuantMode mode) {
  if (bits < 2) throw DomainError("quantization needs at least 2 bits");
  if (!(clip > 0.0)) throw DomainError("clip must be positive");
  Tensor out = t;
  for (auto& v : out.values) v = quantize_value(v, bits, clip, mode);
  return out;
}

ClipCalibration calibrate_clip(std::span<const Real> values, int bits, QuantMode mode) {
  if (values.empty()) throw DomainError("cannot calibrate a clip from no values");
  if (bits < 2) throw DomainError("quantization needs at least 2 bits");
  auto magnitude = [mode](Real v) { return mode == QuantMode::weight ? std::abs(v) : std::max(v, 0.0); };
  Real max_abs = 0.0;
  for (Real v : values) max_abs = std::max(max_abs, magnitude(v));
  if (max_abs == 0.0) return {1.0, true};

  constexpr std::size_t B = kHistogramBins;
  constexpr std::size_t bins_per_step = B / kClipCandidates;
  const Real bin_width = max_abs / static_cast<Real>(B);
  std::vector<double> hist(B, 0.0);
  // Exact zeros of an unsigned range (dead ReLUs) are reproduced at every clip,
  // so they are left out rather than allowed to dominate the first bin.
  double total = 0.0;
  for (Real v : values) {
    if (mode == QuantMode::activation && magnitude(v) == 0.0) continue;
    hist[std::min(B - 1, static_cast<std::size_t>(magnitude(v) / bin_width))] += 1.0;
    total += 1.0;
  }
  const std::int64_t top = (std::int64_t{1} << (bits - 1)) - 1;

  // For each candidate, bins below the clip are grouped by the level their
  // centre rounds to; bins above it join the top level. Each level's mass is
  // spread evenly over its occupied bins and compared against the original.
  Real best_clip = max_abs;
  double best_kl = std::numeric_limits<double>::infinity();
  std::vector<double> level_mass;
  std::vector<std::size_t> level_support;
  std::vector<std::int64_t> level_of(B);
  for (std::size_t i = 1; i <= kClipCandidates; ++i) {
    const Real c = max_abs * static_cast<Real>(i) / static_cast<Real>(kClipCandidates);
    const Real s = c / static_cast<Real>(top);
    const std::size_t inside = i * bins_per_step;
    level_mass.assign(static_cast<std::size_t>(top) + 1, 0.0);
    level_support.assign(static_cast<std::size_t>(top) + 1, 0);
    for (std::size_t j = 0; j < inside; ++j) {
      const Real centre = (static_cast<Real>(j) + 0.5) * bin_width;
      const auto lv = std::min<std::int64_t>(top, std::llround(centre / s));
      level_of[j] = lv;
      level_mass[lv] += hist[j];
      if (hist[j] > 0.0) ++level_support[lv];
    }
    double outliers = 0.0;
    for (std::size_t j = inside; j < B; ++j) outliers += hist[j];
    level_mass[top] += outliers;

    // Top-level mass with no occupied bin of its own lands in the bin holding c.
    const bool orphan_top = level_support[top] == 0 && level_mass[top] > 0.0;
    double kl = 0.0;
    for (std::size_t j = 0; j < inside; ++j) {
      const auto lv = level_of[j];
      double share = hist[j] > 0.0 ? level_mass[lv] / static_cast<double>(level_support[lv]) : 0.0;
      if (orphan_top && j + 1 == inside) share += level_mass[top];
      if (share == 0.0) continue;
      const double q = share / total + kKlSmoothing;
      const double p = hist[j] / total + kKlSmoothing;
      kl += q * std::log(q / p);
    }
    // Ties go to the wider clip.
    if (kl <= best_kl) {
      best_kl = kl;
      best_clip = c;
    }
  }
  return {best_clip, false};
}

// ---------------------------------------------------------------------------

void validate_policy(const nn::Network& net, const QuantPolicy& p) {
  if (p.bit_min < 2) throw PolicyError("bit_min must be >= 2");
  if (p.bit_max < p.bit_min) throw PolicyError("bit_max must be >= bit_min");
  if (p.bit_max > 32) throw PolicyError("bit_max must be <= 32");
  const auto qlayers = net.quantizable_layers();
  std::vector<std::size_t> bad;
  for (const auto& e : p.entries) {
    if (e.layer >= net.layers.size() || !net.layers[e.layer].quantizable()) bad.push_back(e.layer);
  }
  std::vector<std::size_t> listed;
  for (const auto& e : p.entries) listed.push_back(e.layer);
  for (auto k : qlayers) {
    if (std::find(listed.begin(), listed.end(), k) == listed.end()) bad.push_back(k);
  }
  if (bad.empty() && listed != qlayers) {
    bad = listed;  // right set, wrong order or duplicates
  }
  if (!bad.empty()) {
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    std::string msg = "policy does not match the quantizable layers; offending layer indices:";
    for (auto k : bad) msg += " " + std::to_string(k);
    throw PolicyError(msg);
  }
  for (std::size_t i = 0; i < p.entries.size(); ++i) {
    const auto& e = p.entries[i];
    if (p.is_pinned(i)) {
      if (e.weight_bits != QuantPolicy::kPinnedBits || e.act_bits != QuantPolicy::kPinnedBits) {
        throw PolicyError("layer " + std::to_string(e.layer) + " is pinned to 8 bits");
      }
      continue;
    }
    for (int b : {e.weight_bits, e.act_bits}) {
      if (b < p.bit_min || b > p.bit_max) {
        throw PolicyError("layer " + std::to_string(e.layer) + " bit-width " + std::to_string(b) +
                          " outside [" + std::to_string(p.bit_min) + ", " + std::to_string(p.bit_max) + "]");
      }
    }
  }
}

QuantPolicy uniform_policy(const nn::Network& net, int bits, int bit_min, int bit_max, bool pin_ends) {
  QuantPolicy p;
  p.bit_min = bit_min;
  p.bit_max = bit_max;
  p.pin_ends = pin_ends;
  for (auto k : net.quantizable_layers()) p.entries.push_back({k, bits, bits});
  for (std::size_t i = 0; i < p.entries.size(); ++i) {
    if (p.is_pinned(i)) p.entries[i].weight_bits = p.entries[i].act_bits = QuantPolicy::kPinnedBits;
  }
  return p;
}

std::string policy_string(const QuantPolicy& p) {
  std::string s;
  for (std::size_t i = 0; i < p.entries.size(); ++i) {
    if (i) s += ';';
    const auto& e = p.entries[i];
    s += std::to_string(e.layer) + " " + std::to_string(e.weight_bits) + " " + std::to_string(e.act_bits);
  }
  return s;
}

void write_policy(std::ostream& os, const QuantPolicy& p) {
  os << "# arq quantization policy: k b_w b_a\n";
  os << "bit_min " << p.bit_min << "\n";
  os << "bit_max " << p.bit_max << "\n";
  os << "pin_ends " << (p.pin_ends ? 1 : 0) << "\n";
  for (const auto& e : p.entries) os << e.layer << " " << e.weight_bits << " " << e.act_bits << "\n";
}

QuantPolicy read_policy(std::istream& is, const std::string& source) {
  QuantPolicy p;
  bool have_min = false, have_max = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    auto fail = [&](const std::string& why) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": " + why);
    };
    if (first == "bit_min" || first == "bit_max" || first == "pin_ends") {
      int v = 0;
      if (!(ls >> v)) fail("missing value for " + first);
      if (first == "bit_min") { p.bit_min = v; have_min = true; }
      else if (first == "bit_max") { p.bit_max = v; have_max = true; }
      else p.pin_ends = v != 0;
      continue;
    }
    PolicyEntry e;
    try {
      e.layer = std::stoul(first);
    } catch (const std::exception&) {
      fail("expected 'k b_w b_a', got '" + line + "'");
    }
    if (!(ls >> e.weight_bits >> e.act_bits)) fail("expected 'k b_w b_a', got '" + line + "'");
    std::string extra;
    if (ls >> extra) fail("trailing token '" + extra + "'");
    p.entries.push_back(e);
  }
  if (!have_min || !have_max) throw FormatError(source + ": policy header needs bit_min and bit_max");
  return p;
}

void save_policy(const QuantPolicy& policy, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_policy(os, policy);
}

QuantPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  return read_policy(is, path.string());
}

// ---------------------------------------------------------------------------

bool input_nonnegative(const nn::Network& net, std::size_t layer) {
  bool nonneg = false;
  for (std::size_t k = 0; k < layer; ++k) {
    switch (net.layers[k].kind) {
      case nn::LayerKind::relu: nonneg = true; break;
      case nn::LayerKind::avgpool2d:
      case nn::LayerKind::flatten: break;
      case nn::LayerKind::dense:
      case nn::LayerKind::conv2d: nonneg = false; break;
    }
  }
  return nonneg;
}

QuantizedNetwork::QuantizedNetwork(nn::Network base, QuantPolicy policy,
                                   std::vector<LayerQuantParams> params)
    : base_(std::move(base)), policy_(std::move(policy)), params_(std::move(params)) {
  validate_policy(base_, policy_);
  if (params_.size() != policy_.entries.size()) throw PolicyError("one clip pair per policy entry required");
  rebuild_overlay();
}

void QuantizedNetwork::set_params(std::vector<LayerQuantParams> params) {
  if (params.size() != policy_.entries.size()) throw PolicyError("one clip pair per policy entry required");
  params_ = std::move(params);
  rebuild_overlay();
}

void QuantizedNetwork::rebuild_overlay() {
  const std::size_t L = base_.layers.size();
  overlay_.weights.assign(L, Tensor{});
  overlay_.weight_clips.assign(L, 0.0);
  overlay_.inputs.assign(L, nn::ActQuant{});
  for (std::size_t i = 0; i < policy_.entries.size(); ++i) {
    const auto& e = policy_.entries[i];
    const auto& qp = params_[i];
    if (qp.layer != e.layer) throw PolicyError("clip table out of order at layer " + std::to_string(e.layer));
    if (!(qp.weight_clip > 0.0) || !(qp.act_clip > 0.0)) {
      throw PolicyError("layer " + std::to_string(e.layer) + " has a non-positive clip");
    }
    overlay_.weight_clips[e.layer] = qp.weight_clip;
    overlay_.inputs[e.layer] = {e.act_bits, qp.act_clip, qp.act_mode == QuantMode::weight};
  }
  requantize_weights();
}

void QuantizedNetwork::requantize_weights() {
  for (std::size_t i = 0; i < policy_.entries.size(); ++i) {
    const auto& e = policy_.entries[i];
    overlay_.weights[e.layer] =
        quantize_tensor(base_.weights[e.layer], e.weight_bits, params_[i].weight_clip, QuantMode::weight);
  }
}

namespace {

std::vector<std::vector<Real>> calibration_inputs(const data::Dataset& calib, const CalibrationOptions& opts) {
  std::vector<std::size_t> idx(calib.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = substream(opts.seed, 0, StreamPhase::calibration);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(idx.size(), opts.max_samples));
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<std::vector<Real>> out;
  for (std::size_t i : idx) {
    const auto x = calib.sample(i);
    std::vector<Real> v(x.begin(), x.end());
    if (opts.noise_sigma > 0.0) {
      for (auto& val : v) val += opts.noise_sigma * normal(rng);
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

QuantizedNetwork apply_policy(const nn::Network& net, const QuantPolicy& policy,
                              const data::Dataset& calib, const CalibrationOptions& opts) {
  validate_policy(net, policy);
  if (calib.empty()) throw DomainError("activation calibration needs at least one sample");
  if (calib.sample_size() != net.input_size()) throw ShapeError("calibration samples do not match network input");

  const auto inputs = calibration_inputs(calib, opts);
  std::vector<std::vector<Real>> observed(policy.entries.size());
  for (const auto& x : inputs) {
    const nn::Tape tape = nn::forward_tape(net, x);
    for (std::size_t i = 0; i < policy.entries.size(); ++i) {
      const auto& in = tape.inputs[policy.entries[i].layer];
      observed[i].insert(observed[i].end(), in.begin(), in.end());
    }
  }

  std::vector<LayerQuantParams> params;
  for (std::size_t i = 0; i < policy.entries.size(); ++i) {
    const auto& e = policy.entries[i];
    LayerQuantParams qp;
    qp.layer = e.layer;
    qp.act_mode = input_nonnegative(net, e.layer) ? QuantMode::activation : QuantMode::weight;
    const auto wc = calibrate_clip(net.weights[e.layer].values, e.weight_bits, QuantMode::weight);
    const auto ac = calibrate_clip(observed[i], e.act_bits, qp.act_mode);
    qp.weight_clip = wc.clip;
    qp.act_clip = ac.clip;
    qp.degenerate = wc.degenerate || ac.degenerate;
    params.push_back(qp);
  }
  return QuantizedNetwork(net, policy, std::move(params));
}

Tensor quantized_forward(const QuantizedNetwork& qnet, std::span<const Real> x) {
  return nn::forward(qnet.base(), x, &qnet.overlay());
}

std::size_t quantized_predict(const QuantizedNetwork& qnet, std::span<const Real> x) {
  return nn::predict(qnet.base(), x, &qnet.overlay());
}

QuantizedNetwork fine_tune_quantized(QuantizedNetwork qnet, const data::Dataset& data,
                                     const nn::FineTuneConfig& cfg, const data::Dataset* recalib,
                                     const CalibrationOptions& calib_opts) {
  const auto subset = nn::fine_tune_subset(data.size(), cfg.n1, cfg.seed);
  if (subset.empty()) return qnet;
  nn::SgdMomentum opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  nn::PassOptions opts;
  opts.noise_sigma = cfg.sigma;
  opts.seed = cfg.seed;
  opts.batch_size = cfg.batch_size;
  opts.overlay = &qnet.overlay_;
  opts.after_step = [&qnet](const nn::Network&) { qnet.requantize_weights(); };
  nn::sgd_pass(qnet.base_, data, subset, opt, opts);
  if (recalib) return apply_policy(qnet.base_, qnet.policy_, *recalib, calib_opts);
  return qnet;
}

}  // namespace arq::quant
