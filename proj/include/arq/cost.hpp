#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "arq/network.hpp"
#include "arq/quant.hpp"

namespace arq::cost {

/// Continuous action in [0,1] to an integer bit-width:
///   b = floor(b_min - 0.5 + a * (b_max - b_min + 1) + 0.5), clamped to [b_min, b_max].
int action_to_bitwidth(Real a, int bit_min, int bit_max);

struct LayerBops {
  std::uint64_t bops = 0;
  bool quantizable = false;  // false: layer has no BitOPs, count is zero
};

/// b_w * b_a * MACs, where MACs = weight count * output map area. Biases excluded.
LayerBops layer_bops(const nn::LayerSpec& layer, int weight_bits, int act_bits);

struct LayerCost {
  std::size_t position = 0;  // ordinal among quantizable layers
  std::size_t layer = 0;
  int weight_bits = 0;
  int act_bits = 0;
  std::uint64_t bops = 0;
  std::uint64_t size_bits = 0;
};

struct CostReport {
  std::uint64_t total_bops = 0;
  std::uint64_t total_size_bits = 0;
  std::vector<LayerCost> layers;
};

CostReport policy_cost(const nn::Network& net, const quant::QuantPolicy& policy);

/// Cost with every unpinned entry at bit_min.
std::uint64_t min_achievable_bops(const nn::Network& net, const quant::QuantPolicy& policy);

/// Walks the unpinned layers back to front, lowering the weight bits and then
/// the activation bits of each by one and re-checking the cost after every
/// decrement, wrapping around until the cost is within `budget`.
/// Throws BudgetError (carrying the minimum cost) when unsatisfiable.
quant::QuantPolicy enforce_budget(const nn::Network& net, quant::QuantPolicy policy, std::uint64_t budget);

/// `layer,k,b_w,b_a,bops,size_bits` rows plus a trailing `total` row.
void write_cost_csv(std::ostream& os, const CostReport& report);

}  // namespace arq::cost
