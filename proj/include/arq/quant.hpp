#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "arq/dataset.hpp"
#include "arq/network.hpp"
#include "arq/train.hpp"

namespace arq::quant {

/// Weights use the symmetric range [-c, c]; activations the unsigned [0, c].
enum class QuantMode { weight, activation };

/// s = c / (2^(b-1) - 1)
Real scale_for(int bits, Real clip);

/// Clips v to the mode's range, then snaps it to the nearest multiple of s.
Real quantize_value(Real v, int bits, Real clip, QuantMode mode);
Tensor quantize_tensor(const Tensor& t, int bits, Real clip, QuantMode mode);

inline constexpr std::size_t kHistogramBins = 2048;
inline constexpr std::size_t kClipCandidates = 128;
inline constexpr double kKlSmoothing = 1e-10;

struct ClipCalibration {
  Real clip = 1.0;
  bool degenerate = false;  // all-zero input; clip defaulted to 1
};

/// Picks the clip among 128 evenly spaced candidates in (0, max|v|] that
/// minimises KL(Q || P) over a 2048-bin magnitude histogram P, where Q spreads
/// each quantization level's mass (clipped values included) evenly over the
/// occupied bins of that level. Ties resolve to the larger clip.
ClipCalibration calibrate_clip(std::span<const Real> values, int bits, QuantMode mode);

// ---------------------------------------------------------------------------

struct PolicyEntry {
  std::size_t layer = 0;
  int weight_bits = 8;
  int act_bits = 8;

  friend bool operator==(const PolicyEntry&, const PolicyEntry&) = default;
};

/// Per-layer bit-widths for every quantizable layer, front to back. With
/// `pin_ends` the first and last quantizable layers stay at 8 bits.
struct QuantPolicy {
  static constexpr int kPinnedBits = 8;

  int bit_min = 2;
  int bit_max = 8;
  bool pin_ends = true;
  std::vector<PolicyEntry> entries;

  bool is_pinned(std::size_t entry_pos) const {
    return pin_ends && (entry_pos == 0 || entry_pos + 1 == entries.size());
  }

  friend bool operator==(const QuantPolicy&, const QuantPolicy&) = default;
};

/// Throws PolicyError naming every offending layer index.
void validate_policy(const nn::Network& net, const QuantPolicy& policy);

QuantPolicy uniform_policy(const nn::Network& net, int bits, int bit_min, int bit_max,
                           bool pin_ends = true);

/// Entries as `k b_w b_a` joined by ';'.
std::string policy_string(const QuantPolicy& policy);

void write_policy(std::ostream& os, const QuantPolicy& policy);
QuantPolicy read_policy(std::istream& is, const std::string& source = "<policy>");
void save_policy(const QuantPolicy& policy, const std::filesystem::path& path);
QuantPolicy load_policy(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct LayerQuantParams {
  std::size_t layer = 0;
  Real weight_clip = 1.0;
  Real act_clip = 1.0;
  /// Inputs following a ReLU are unsigned; the network input is symmetric.
  QuantMode act_mode = QuantMode::activation;
  bool degenerate = false;

  friend bool operator==(const LayerQuantParams&, const LayerQuantParams&) = default;
};

struct CalibrationOptions {
  std::size_t max_samples = 256;
  /// Calibration inputs are perturbed like the smoothed classifier's inputs.
  Real noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Base network plus policy and clips. Float weights stay untouched; the
/// overlay holds the fake-quantized copies the engine runs with.
class QuantizedNetwork {
 public:
  QuantizedNetwork() = default;
  QuantizedNetwork(nn::Network base, QuantPolicy policy, std::vector<LayerQuantParams> params);

  const nn::Network& base() const { return base_; }
  const QuantPolicy& policy() const { return policy_; }
  const std::vector<LayerQuantParams>& params() const { return params_; }
  const nn::QuantOverlay& overlay() const { return overlay_; }

  /// Replaces clips (e.g. to widen them) and rebuilds the overlay.
  void set_params(std::vector<LayerQuantParams> params);

  friend QuantizedNetwork fine_tune_quantized(QuantizedNetwork, const data::Dataset&,
                                              const nn::FineTuneConfig&, const data::Dataset*,
                                              const CalibrationOptions&);

 private:
  void rebuild_overlay();
  void requantize_weights();

  nn::Network base_;
  QuantPolicy policy_;
  std::vector<LayerQuantParams> params_;
  nn::QuantOverlay overlay_;
};

/// True when the input of layer k is provably nonnegative (follows a ReLU).
bool input_nonnegative(const nn::Network& net, std::size_t layer);

QuantizedNetwork apply_policy(const nn::Network& net, const QuantPolicy& policy,
                              const data::Dataset& calib, const CalibrationOptions& opts = {});

Tensor quantized_forward(const QuantizedNetwork& qnet, std::span<const Real> x);
std::size_t quantized_predict(const QuantizedNetwork& qnet, std::span<const Real> x);

/// One straight-through fine-tuning epoch. When `recalib` is non-null the
/// clips are recalibrated from the fine-tuned weights afterwards.
QuantizedNetwork fine_tune_quantized(QuantizedNetwork qnet, const data::Dataset& data,
                                     const nn::FineTuneConfig& cfg,
                                     const data::Dataset* recalib = nullptr,
                                     const CalibrationOptions& calib_opts = {});

}  // namespace arq::quant
