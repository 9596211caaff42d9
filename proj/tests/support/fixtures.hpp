#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "arq/dataset.hpp"
#include "arq/network.hpp"
#include "arq/train.hpp"

namespace fixture {

using arq::Real;

inline std::filesystem::path tmp_dir(const std::string& name) {
  const auto dir = std::filesystem::path(ARQ_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<Real> random_vector(std::size_t n, std::uint64_t seed, Real lo = -1.0, Real hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(lo, hi);
  std::vector<Real> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Small splits with the shipped generator.
inline const arq::data::DatasetSplits& toy_splits() {
  static const arq::data::DatasetSplits splits = [] {
    arq::data::GenConfig g;
    g.per_class = 200;
    g.cert_count = 60;
    g.eval_count = 60;
    g.seed = 11;
    return arq::data::generate_synthetic(g);
  }();
  return splits;
}

inline arq::nn::TinyConvNetConfig toy_model_config() {
  arq::nn::TinyConvNetConfig m;
  m.channels = {8, 8, 16};
  return m;
}

/// TinyConvNet trained with Gaussian augmentation at sigma 0.25; built once per process.
inline const arq::nn::Network& toy_net() {
  static const arq::nn::Network net = [] {
    arq::nn::TrainConfig t;
    t.epochs = 10;
    t.seed = 3;
    return arq::nn::train_gaussian(arq::nn::make_tiny_convnet(toy_model_config(), 5), toy_splits().train, t);
  }();
  return net;
}

}  // namespace fixture
