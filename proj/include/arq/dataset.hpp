#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "arq/tensor.hpp"

namespace arq::data {

/// Labelled samples stored contiguously, one row per sample.
struct Dataset {
  std::vector<std::size_t> sample_shape;
  std::size_t num_classes = 0;
  std::vector<Real> values;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t sample_size() const { return Tensor::numel_of(sample_shape); }
  std::span<const Real> sample(std::size_t i) const {
    return {values.data() + i * sample_size(), sample_size()};
  }
  void push_back(std::span<const Real> x, std::uint32_t label);
  Dataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Class-conditional Gaussian blobs rendered as C x S x S images. Each class
/// mean is an orthogonalised spatial bump pattern; `margin` is the distance
/// from each class mean to every pairwise decision boundary, measured in units
/// of the per-pixel noise `data_std`.
struct GenConfig {
  std::size_t num_classes = 3;
  std::size_t channels = 3;
  std::size_t image_size = 8;
  std::size_t per_class = 400;
  double margin = 1.5;
  double data_std = 0.25;
  std::size_t cert_count = 100;
  std::size_t eval_count = 100;
  std::uint64_t seed = 0;
};

struct DatasetSplits {
  Dataset train;
  Dataset cert;
  Dataset eval;
};

DatasetSplits generate_synthetic(const GenConfig& cfg);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Rows of `label,v0,v1,...`; an optional header line starting with a
/// non-numeric token is skipped.
Dataset load_csv(const std::filesystem::path& path, std::vector<std::size_t> sample_shape,
                 std::size_t num_classes);

}  // namespace arq::data
