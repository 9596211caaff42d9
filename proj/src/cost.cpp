#include "arq/cost.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace arq::cost {

int action_to_bitwidth(Real a, int bit_min, int bit_max) {
  if (!(a >= 0.0 && a <= 1.0)) throw DomainError("action must lie in [0, 1], got " + std::to_string(a));
  if (bit_min > bit_max) throw DomainError("bit_min exceeds bit_max");
  const Real x = static_cast<Real>(bit_min) - 0.5 + a * static_cast<Real>(bit_max - bit_min + 1);
  const int b = static_cast<int>(std::floor(x + 0.5));
  return std::clamp(b, bit_min, bit_max);
}

LayerBops layer_bops(const nn::LayerSpec& layer, int weight_bits, int act_bits) {
  if (!layer.quantizable()) return {0, false};
  if (weight_bits < 1 || act_bits < 1) throw DomainError("bit-widths must be positive");
  return {static_cast<std::uint64_t>(weight_bits) * static_cast<std::uint64_t>(act_bits) * layer.macs(), true};
}

CostReport policy_cost(const nn::Network& net, const quant::QuantPolicy& policy) {
  quant::validate_policy(net, policy);
  CostReport r;
  for (std::size_t i = 0; i < policy.entries.size(); ++i) {
    const auto& e = policy.entries[i];
    const auto& l = net.layers[e.layer];
    LayerCost c;
    c.position = i;
    c.layer = e.layer;
    c.weight_bits = e.weight_bits;
    c.act_bits = e.act_bits;
    c.bops = layer_bops(l, e.weight_bits, e.act_bits).bops;
    c.size_bits = static_cast<std::uint64_t>(e.weight_bits) * l.weight_count();
    r.total_bops += c.bops;
    r.total_size_bits += c.size_bits;
    r.layers.push_back(c);
  }
  return r;
}

namespace {

std::uint64_t bops_of(const nn::Network& net, const quant::QuantPolicy& p) {
  std::uint64_t total = 0;
  for (const auto& e : p.entries) total += layer_bops(net.layers[e.layer], e.weight_bits, e.act_bits).bops;
  return total;
}

}  // namespace

std::uint64_t min_achievable_bops(const nn::Network& net, const quant::QuantPolicy& policy) {
  quant::QuantPolicy p = policy;
  for (std::size_t i = 0; i < p.entries.size(); ++i) {
    if (!p.is_pinned(i)) p.entries[i].weight_bits = p.entries[i].act_bits = p.bit_min;
  }
  return bops_of(net, p);
}

quant::QuantPolicy enforce_budget(const nn::Network& net, quant::QuantPolicy p, std::uint64_t budget) {
  quant::validate_policy(net, p);
  const std::uint64_t floor_cost = min_achievable_bops(net, p);
  if (floor_cost > budget) {
    throw BudgetError("BitOPs budget " + std::to_string(budget) + " is unsatisfiable; minimum achievable is " +
                          std::to_string(floor_cost),
                      floor_cost);
  }
  std::uint64_t cost = bops_of(net, p);
  while (cost > budget) {
    for (std::size_t i = p.entries.size(); i-- > 0 && cost > budget;) {
      if (p.is_pinned(i)) continue;
      auto& e = p.entries[i];
      const auto& l = net.layers[e.layer];
      if (e.weight_bits > p.bit_min) {
        cost -= layer_bops(l, e.weight_bits, e.act_bits).bops;
        --e.weight_bits;
        cost += layer_bops(l, e.weight_bits, e.act_bits).bops;
        if (cost <= budget) break;
      }
      if (e.act_bits > p.bit_min) {
        cost -= layer_bops(l, e.weight_bits, e.act_bits).bops;
        --e.act_bits;
        cost += layer_bops(l, e.weight_bits, e.act_bits).bops;
      }
    }
  }
  return p;
}

void write_cost_csv(std::ostream& os, const CostReport& r) {
  os << "layer,k,b_w,b_a,bops,size_bits\n";
  for (const auto& c : r.layers) {
    os << c.position << ',' << c.layer << ',' << c.weight_bits << ',' << c.act_bits << ',' << c.bops << ','
       << c.size_bits << '\n';
  }
  os << "total,,,," << r.total_bops << ',' << r.total_size_bits << '\n';
}

}  // namespace arq::cost
