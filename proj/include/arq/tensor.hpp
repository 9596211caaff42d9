#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "arq/error.hpp"

namespace arq {

/// Project-wide real type. Certification bound math needs the 64-bit headroom.
using Real = double;

/// Dense row-major tensor.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, Real fill = 0.0)
      : shape(std::move(dims)), values(numel_of(shape), fill) {}
  Tensor(std::vector<std::size_t> dims, std::vector<Real> data)
      : shape(std::move(dims)), values(std::move(data)) {
    if (values.size() != numel_of(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape product " +
                       std::to_string(numel_of(shape)));
    }
  }

  static std::size_t numel_of(const std::vector<std::size_t>& dims) {
    if (dims.empty()) return 0;
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t numel() const { return values.size(); }
  bool empty() const { return values.empty(); }
  Real& operator[](std::size_t i) { return values[i]; }
  Real operator[](std::size_t i) const { return values[i]; }
  std::span<Real> span() { return values; }
  std::span<const Real> span() const { return values; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const std::vector<std::size_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

}  // namespace arq
