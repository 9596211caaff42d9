#include "arq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "arq/binary_io.hpp"
#include "arq/rng.hpp"

namespace arq::data {

void Dataset::push_back(std::span<const Real> x, std::uint32_t label) {
  if (x.size() != sample_size()) throw ShapeError("sample size does not match dataset shape");
  values.insert(values.end(), x.begin(), x.end());
  labels.push_back(label);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.num_classes = num_classes;
  out.values.reserve(indices.size() * sample_size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw DomainError("subset index out of range");
    out.push_back(sample(i), labels[i]);
  }
  return out;
}

namespace {

std::vector<std::vector<Real>> class_templates(const GenConfig& cfg, Rng& rng) {
  const std::size_t S = cfg.image_size, C = cfg.channels, d = C * S * S;
  const double width = std::max(1.0, static_cast<double>(S) / 4.0);
  const double radius = static_cast<double>(S) / 4.0;
  const double center = (static_cast<double>(S) - 1.0) / 2.0;
  std::uniform_real_distribution<double> colour(0.2, 1.0);
  std::vector<std::vector<Real>> out;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(c) /
                         static_cast<double>(cfg.num_classes);
    const double cy = center + radius * std::sin(angle);
    const double cx = center + radius * std::cos(angle);
    std::vector<Real> t(d);
    for (std::size_t ch = 0; ch < C; ++ch) {
      const double w = colour(rng);
      for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          t[(ch * S + y) * S + x] = w * std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
        }
      }
    }
    out.push_back(std::move(t));
  }
  // Gram-Schmidt, so pairwise mean distances are all identical.
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double dot = std::inner_product(out[i].begin(), out[i].end(), out[j].begin(), 0.0);
      for (std::size_t p = 0; p < d; ++p) out[i][p] -= dot * out[j][p];
    }
    const double norm = std::sqrt(std::inner_product(out[i].begin(), out[i].end(), out[i].begin(), 0.0));
    if (norm < 1e-12) throw ConfigError("too many classes for the image size");
    for (auto& v : out[i]) v /= norm;
  }
  return out;
}

}  // namespace

DatasetSplits generate_synthetic(const GenConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("gen-data: need at least 2 classes");
  if (cfg.per_class == 0) throw ConfigError("gen-data: per-class count must be positive");
  if (!(cfg.margin > 0.0)) throw ConfigError("gen-data: margin must be positive");
  if (!(cfg.data_std > 0.0)) throw ConfigError("gen-data: data_std must be positive");
  if (cfg.channels == 0 || cfg.image_size == 0) throw ConfigError("gen-data: empty image shape");
  const std::size_t total = cfg.num_classes * cfg.per_class;
  if (cfg.cert_count + cfg.eval_count >= total) {
    throw ConfigError("gen-data: cert_count + eval_count leaves no training samples");
  }

  Rng rng = substream(cfg.seed, 0, StreamPhase::dataset);
  const auto templates = class_templates(cfg, rng);
  const double amplitude = cfg.margin * cfg.data_std * std::sqrt(2.0);

  Dataset all;
  all.sample_shape = {cfg.channels, cfg.image_size, cfg.image_size};
  all.num_classes = cfg.num_classes;
  std::normal_distribution<double> noise(0.0, cfg.data_std);
  std::vector<Real> x(all.sample_size());
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      for (std::size_t p = 0; p < x.size(); ++p) x[p] = amplitude * templates[c][p] + noise(rng);
      all.push_back(x, static_cast<std::uint32_t>(c));
    }
  }

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto cert_end = order.begin() + static_cast<std::ptrdiff_t>(cfg.cert_count);
  const auto eval_end = cert_end + static_cast<std::ptrdiff_t>(cfg.eval_count);
  DatasetSplits splits;
  splits.cert = all.subset(std::vector<std::size_t>(order.begin(), cert_end));
  splits.eval = all.subset(std::vector<std::size_t>(cert_end, eval_end));
  splits.train = all.subset(std::vector<std::size_t>(eval_end, order.end()));
  return splits;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  io::BinaryWriter w(os);
  w.bytes(std::string_view("ARQDATA\0", 8));
  w.u32(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.sample_shape.size()));
  for (auto d : ds.sample_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u64(ds.size());
  for (Real v : ds.values) w.f64(v);
  for (auto l : ds.labels) w.u32(l);
  if (!os) throw Error("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::BinaryReader r(is, path.string());
  r.expect_magic(std::string_view("ARQDATA\0", 8), "ARQDATA");
  r.expect_version(kDatasetFormatVersion, "ARQDATA");
  Dataset ds;
  ds.num_classes = r.u32("num_classes");
  const std::uint32_t rank = r.u32("rank");
  if (rank == 0 || rank > 8) throw FormatError(path.string() + ": bad sample rank");
  for (std::uint32_t i = 0; i < rank; ++i) ds.sample_shape.push_back(r.u32("dims"));
  const std::uint64_t count = r.u64("count");
  if (count > (1ULL << 32) / std::max<std::size_t>(1, ds.sample_size())) {
    throw FormatError(path.string() + ": implausible sample count");
  }
  ds.values.resize(count * ds.sample_size());
  for (auto& v : ds.values) v = r.f64("samples");
  ds.labels.resize(count);
  for (auto& l : ds.labels) {
    l = r.u32("labels");
    if (l >= ds.num_classes) throw FormatError(path.string() + ": label out of range");
  }
  r.expect_end();
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, std::vector<std::size_t> sample_shape,
                 std::size_t num_classes) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  Dataset ds;
  ds.sample_shape = std::move(sample_shape);
  ds.num_classes = num_classes;
  std::string line;
  std::size_t lineno = 0;
  std::vector<Real> row;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    row.clear();
    std::int64_t label = -1;
    bool first = true;
    bool header = false;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        if (first) {
          label = std::stoll(cell, &used);
        } else {
          row.push_back(std::stod(cell, &used));
        }
      } catch (const std::exception&) {
        if (lineno == 1) {
          header = true;
          break;
        }
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
      first = false;
    }
    if (header) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": label out of range");
    }
    if (row.size() != ds.sample_size()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(ds.sample_size()) + " values, got " + std::to_string(row.size()));
    }
    ds.push_back(row, static_cast<std::uint32_t>(label));
  }
  return ds;
}

}  // namespace arq::data
