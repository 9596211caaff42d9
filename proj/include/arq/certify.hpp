#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "arq/dataset.hpp"
#include "arq/network.hpp"
#include "arq/quant.hpp"
#include "arq/rng.hpp"

namespace arq::cert {

/// Base classifier f as seen by the smoothing procedure.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t input_size() const = 0;
  virtual std::size_t num_classes() const = 0;
  /// Must be safe to call concurrently.
  virtual std::size_t classify(std::span<const Real> x) const = 0;
};

class NetworkClassifier final : public Classifier {
 public:
  explicit NetworkClassifier(const nn::Network& net) : net_(net) {}
  std::size_t input_size() const override { return net_.input_size(); }
  std::size_t num_classes() const override { return net_.num_classes; }
  std::size_t classify(std::span<const Real> x) const override { return nn::predict(net_, x); }

 private:
  const nn::Network& net_;
};

class QuantizedClassifier final : public Classifier {
 public:
  explicit QuantizedClassifier(const quant::QuantizedNetwork& q) : q_(q) {}
  std::size_t input_size() const override { return q_.base().input_size(); }
  std::size_t num_classes() const override { return q_.base().num_classes; }
  std::size_t classify(std::span<const Real> x) const override { return quant::quantized_predict(q_, x); }

 private:
  const quant::QuantizedNetwork& q_;
};

class FunctionClassifier final : public Classifier {
 public:
  using Fn = std::function<std::size_t(std::span<const Real>)>;
  FunctionClassifier(Fn fn, std::size_t input_size, std::size_t num_classes)
      : fn_(std::move(fn)), input_size_(input_size), num_classes_(num_classes) {}
  std::size_t input_size() const override { return input_size_; }
  std::size_t num_classes() const override { return num_classes_; }
  std::size_t classify(std::span<const Real> x) const override { return fn_(x); }

 private:
  Fn fn_;
  std::size_t input_size_, num_classes_;
};

/// Class counts of f(x + eps) over n draws eps ~ N(0, sigma^2 I). When
/// `trace` is given, the per-draw predictions are appended to it.
std::vector<std::uint64_t> sample_counts(const Classifier& f, std::span<const Real> x, Real sigma,
                                         std::size_t n, Rng& rng, std::vector<std::uint16_t>* trace = nullptr);

struct CertificationRecord {
  std::size_t input_id = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  Real p_lower = 0.0;
  Real radius = 0.0;  // 0 when abstained
  bool abstain = true;
  bool correct = false;
  std::size_t n_used = 0;
  Real sigma = 0.0;
  Real alpha = 0.0;
};

/// max(32, n / 10)
std::size_t default_selection_size(std::size_t n);

/// Two-phase certification: pick the top class from `n_select` draws, then
/// lower-bound its probability from `n` fresh draws. Radius sigma * PhiInv(p)
/// when the bound exceeds 1/2, otherwise abstain.
CertificationRecord certify_input(const Classifier& f, std::span<const Real> x, std::size_t label,
                                  Real sigma, std::size_t n_select, std::size_t n, Real alpha,
                                  Rng& select_rng, Rng& estimate_rng,
                                  std::vector<std::uint16_t>* trace = nullptr);

struct CacheEntry {
  std::size_t input_id = 0;
  std::uint32_t label = 0;
  std::uint32_t predicted = 0;
  Real p_lower = 0.0;
  bool abstain = true;
  /// f's predictions on the estimation draws, in draw order.
  std::vector<std::uint16_t> trace;

  friend bool operator==(const CacheEntry&, const CacheEntry&) = default;
};

/// Result of certifying the original classifier, reused for its quantized
/// variants. Draws are regenerated from (seed, input_id, phase).
struct CertCache {
  Real sigma = 0.0;
  Real alpha = 0.0;
  std::uint64_t n0 = 0;
  std::uint64_t seed = 0;
  std::vector<CacheEntry> entries;

  const CacheEntry* find(std::size_t input_id) const;

  friend bool operator==(const CertCache&, const CertCache&) = default;
};

inline constexpr std::array<Real, 8> kRadiusGrid{0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75};

struct ACRReport {
  Real acr = 0.0;
  std::vector<CertificationRecord> records;
  std::vector<std::pair<Real, Real>> certified_accuracy;  // (radius, fraction) over kRadiusGrid
  Real clean_accuracy() const;
};

/// Mean radius with abstained or misclassified inputs contributing zero.
Real average_certified_radius(std::span<const CertificationRecord> records);

/// Fraction of records that are correct, not abstained and have R > r
/// (R >= r at r = 0).
Real certified_accuracy(std::span<const CertificationRecord> records, Real r);

ACRReport make_report(std::vector<CertificationRecord> records);

struct CertifyConfig {
  Real sigma = 0.25;
  std::size_t n0 = 4000;
  std::size_t n_select = 0;  // 0: default_selection_size(n0)
  Real alpha = 0.001;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct Certification {
  ACRReport report;
  CertCache cache;
};

/// Full certification of every input; input ids are dataset positions.
Certification certify_dataset(const Classifier& f, const data::Dataset& inputs, const CertifyConfig& cfg);

struct IncrementalConfig {
  Real sigma = 0.25;
  std::size_t n = 200;
  Real alpha_zeta = 0.001;
  std::size_t threads = 1;
  /// Re-certify abstaining inputs from scratch with the cache's n0 samples
  /// instead of reporting the abstention.
  bool fallback_on_abstain = false;
};

/// Certifies a modified classifier from the cache of the original one: the
/// disagreement rate between the two over shared noise is upper-bounded by
/// zeta, and the cached class is certified with p_lower - zeta. Draws are the
/// first n estimation draws of the cache when it holds a trace that long;
/// otherwise fresh paired draws evaluated on `original`.
ACRReport incremental_certify(const Classifier& modified, const CertCache& cache,
                              const data::Dataset& inputs, const IncrementalConfig& cfg,
                              const Classifier* original = nullptr);

void write_records_csv(std::ostream& os, std::span<const CertificationRecord> records);
/// Inverse of write_records_csv; throws FormatError naming the bad line.
std::vector<CertificationRecord> read_records_csv(std::istream& is, const std::string& source = "<records>");

inline constexpr std::uint32_t kCacheFormatVersion = 1;
void save_cache(const CertCache& cache, const std::filesystem::path& path);
CertCache load_cache(const std::filesystem::path& path);

}  // namespace arq::cert
