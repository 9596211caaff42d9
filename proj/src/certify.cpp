#include "arq/certify.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

#include "arq/binary_io.hpp"
#include "arq/parallel.hpp"
#include "arq/stats.hpp"

namespace arq::cert {

namespace {

std::size_t top_class(const std::vector<std::uint64_t>& counts) {
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

CertificationRecord radius_record(std::size_t label, std::size_t predicted, Real p_lower, Real sigma,
                                  std::size_t n, Real alpha) {
  CertificationRecord r;
  r.label = label;
  r.predicted = predicted;
  r.p_lower = p_lower;
  r.n_used = n;
  r.sigma = sigma;
  r.alpha = alpha;
  r.abstain = !(p_lower > 0.5);
  r.radius = r.abstain ? 0.0 : sigma * stats::inv_norm_cdf(p_lower);
  r.correct = predicted == label;
  return r;
}

}  // namespace

std::vector<std::uint64_t> sample_counts(const Classifier& f, std::span<const Real> x, Real sigma,
                                         std::size_t n, Rng& rng, std::vector<std::uint16_t>* trace) {
  if (x.size() != f.input_size()) throw ShapeError("input does not match classifier input size");
  if (sigma < 0.0) throw DomainError("sigma must be nonnegative");
  std::vector<std::uint64_t> counts(f.num_classes(), 0);
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<Real> noisy(x.size());
  if (trace) trace->reserve(trace->size() + n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < x.size(); ++p) noisy[p] = x[p] + sigma * normal(rng);
    const std::size_t c = f.classify(noisy);
    if (c >= counts.size()) throw DomainError("classifier returned an out-of-range class");
    ++counts[c];
    if (trace) trace->push_back(static_cast<std::uint16_t>(c));
  }
  return counts;
}

std::size_t default_selection_size(std::size_t n) { return std::max<std::size_t>(32, n / 10); }

CertificationRecord certify_input(const Classifier& f, std::span<const Real> x, std::size_t label,
                                  Real sigma, std::size_t n_select, std::size_t n, Real alpha,
                                  Rng& select_rng, Rng& estimate_rng, std::vector<std::uint16_t>* trace) {
  if (n_select == 0 || n == 0) throw DomainError("certification needs at least one sample per phase");
  const auto selection = sample_counts(f, x, sigma, n_select, select_rng);
  const std::size_t c_a = top_class(selection);
  const auto counts = sample_counts(f, x, sigma, n, estimate_rng, trace);
  const Real p_lower = stats::binom_lower_bound(counts[c_a], n, alpha);
  return radius_record(label, c_a, p_lower, sigma, n, alpha);
}

const CacheEntry* CertCache::find(std::size_t input_id) const {
  if (input_id < entries.size() && entries[input_id].input_id == input_id) return &entries[input_id];
  for (const auto& e : entries) {
    if (e.input_id == input_id) return &e;
  }
  return nullptr;
}

Real ACRReport::clean_accuracy() const { return cert::certified_accuracy(records, 0.0); }

Real average_certified_radius(std::span<const CertificationRecord> records) {
  if (records.empty()) return 0.0;
  Real sum = 0.0;
  for (const auto& r : records) {
    if (!r.abstain && r.correct) sum += r.radius;
  }
  return sum / static_cast<Real>(records.size());
}

Real certified_accuracy(std::span<const CertificationRecord> records, Real r) {
  if (r < 0.0) throw DomainError("radius threshold must be nonnegative");
  if (records.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& rec : records) {
    if (rec.abstain || !rec.correct) continue;
    if (r == 0.0 ? rec.radius >= 0.0 : rec.radius > r) ++hits;
  }
  return static_cast<Real>(hits) / static_cast<Real>(records.size());
}

ACRReport make_report(std::vector<CertificationRecord> records) {
  ACRReport rep;
  rep.records = std::move(records);
  rep.acr = average_certified_radius(rep.records);
  for (Real r : kRadiusGrid) rep.certified_accuracy.emplace_back(r, certified_accuracy(rep.records, r));
  return rep;
}

Certification certify_dataset(const Classifier& f, const data::Dataset& inputs, const CertifyConfig& cfg) {
  if (inputs.empty()) throw DomainError("certification set is empty");
  if (f.num_classes() > 65535) throw DomainError("prediction traces support at most 65535 classes");
  const std::size_t n_select = cfg.n_select ? cfg.n_select : default_selection_size(cfg.n0);
  std::vector<CertificationRecord> records(inputs.size());
  Certification out;
  out.cache.sigma = cfg.sigma;
  out.cache.alpha = cfg.alpha;
  out.cache.n0 = cfg.n0;
  out.cache.seed = cfg.seed;
  out.cache.entries.resize(inputs.size());
  parallel_for(inputs.size(), cfg.threads, [&](std::size_t i) {
    Rng select_rng = substream(cfg.seed, i, StreamPhase::select);
    Rng estimate_rng = substream(cfg.seed, i, StreamPhase::estimate);
    CacheEntry& entry = out.cache.entries[i];
    CertificationRecord rec = certify_input(f, inputs.sample(i), inputs.labels[i], cfg.sigma, n_select,
                                            cfg.n0, cfg.alpha, select_rng, estimate_rng, &entry.trace);
    rec.input_id = i;
    entry.input_id = i;
    entry.label = inputs.labels[i];
    entry.predicted = static_cast<std::uint32_t>(rec.predicted);
    entry.p_lower = rec.p_lower;
    entry.abstain = rec.abstain;
    records[i] = rec;
  });
  out.report = make_report(std::move(records));
  return out;
}

ACRReport incremental_certify(const Classifier& modified, const CertCache& cache, const data::Dataset& inputs,
                              const IncrementalConfig& cfg, const Classifier* original) {
  if (cfg.sigma != cache.sigma) throw DomainError("incremental certification sigma differs from the cache");
  if (cfg.n == 0) throw DomainError("incremental certification needs n >= 1");
  std::vector<CertificationRecord> records(inputs.size());
  parallel_for(inputs.size(), cfg.threads, [&](std::size_t i) {
    const CacheEntry* entry = cache.find(i);
    if (!entry) throw CacheMissError("no cached certification for input " + std::to_string(i), i);
    CertificationRecord rec;
    rec.input_id = i;
    rec.label = inputs.labels[i];
    rec.predicted = entry->predicted;
    rec.correct = entry->predicted == inputs.labels[i];
    rec.sigma = cfg.sigma;
    rec.alpha = cache.alpha + cfg.alpha_zeta;
    rec.n_used = cfg.n;
    if (entry->abstain) {
      records[i] = rec;
      return;
    }
    const auto x = inputs.sample(i);
    std::uint64_t disagreements = 0;
    std::normal_distribution<Real> normal(0.0, 1.0);
    std::vector<Real> noisy(x.size());
    if (entry->trace.size() >= cfg.n) {
      Rng rng = substream(cache.seed, i, StreamPhase::estimate);
      for (std::size_t j = 0; j < cfg.n; ++j) {
        for (std::size_t p = 0; p < x.size(); ++p) noisy[p] = x[p] + cfg.sigma * normal(rng);
        if (modified.classify(noisy) != entry->trace[j]) ++disagreements;
      }
    } else if (original) {
      Rng rng = substream(cache.seed, i, StreamPhase::disagree);
      for (std::size_t j = 0; j < cfg.n; ++j) {
        for (std::size_t p = 0; p < x.size(); ++p) noisy[p] = x[p] + cfg.sigma * normal(rng);
        if (modified.classify(noisy) != original->classify(noisy)) ++disagreements;
      }
    } else {
      throw CacheMissError("cache for input " + std::to_string(i) +
                               " has too short a trace and no original classifier was given",
                           i);
    }
    const Real zeta = stats::binom_upper_bound(disagreements, cfg.n, cfg.alpha_zeta);
    const Real p = entry->p_lower - zeta;
    rec.p_lower = p;
    rec.abstain = !(p > 0.5);
    rec.radius = rec.abstain ? 0.0 : cfg.sigma * stats::inv_norm_cdf(p);
    if (rec.abstain && cfg.fallback_on_abstain) {
      Rng select_rng = substream(cache.seed, i, StreamPhase::select);
      Rng estimate_rng = substream(cache.seed, i, StreamPhase::estimate);
      rec = certify_input(modified, x, inputs.labels[i], cfg.sigma, default_selection_size(cache.n0), cache.n0,
                          cache.alpha, select_rng, estimate_rng);
      rec.input_id = i;
    }
    records[i] = rec;
  });
  return make_report(std::move(records));
}

void write_records_csv(std::ostream& os, std::span<const CertificationRecord> records) {
  os << "input_id,label,predicted,p_lower,radius,abstain,correct,n,sigma,alpha\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.9f,%.9f,%d,%d,%zu,%.6g,%.6g\n", r.input_id, r.label,
                  r.predicted, r.p_lower, r.radius, r.abstain ? 1 : 0, r.correct ? 1 : 0, r.n_used, r.sigma,
                  r.alpha);
    os << buf;
  }
}

std::vector<CertificationRecord> read_records_csv(std::istream& is, const std::string& source) {
  std::vector<CertificationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("input_id", 0) == 0) continue;
    if (line.empty()) continue;
    CertificationRecord r;
    int abstain = 0, correct = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf,%lf,%d,%d,%zu,%lf,%lf%c", &r.input_id, &r.label, &r.predicted,
                    &r.p_lower, &r.radius, &abstain, &correct, &r.n_used, &r.sigma, &r.alpha, &tail) != 10) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": malformed certification record");
    }
    r.abstain = abstain != 0;
    r.correct = correct != 0;
    out.push_back(r);
  }
  return out;
}

void save_cache(const CertCache& cache, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  io::BinaryWriter w(os);
  w.bytes("ARQCACHE");
  w.u32(kCacheFormatVersion);
  w.f64(cache.sigma);
  w.f64(cache.alpha);
  w.u64(cache.n0);
  w.u64(cache.seed);
  w.u64(cache.entries.size());
  for (const auto& e : cache.entries) {
    w.u64(e.input_id);
    w.u32(e.label);
    w.u32(e.predicted);
    w.f64(e.p_lower);
    w.u8(e.abstain ? 1 : 0);
    w.u64(e.trace.size());
    for (auto t : e.trace) w.u16(t);
  }
  if (!os) throw Error("write failed: " + path.string());
}

CertCache load_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::BinaryReader r(is, path.string());
  r.expect_magic("ARQCACHE", "ARQCACHE");
  r.expect_version(kCacheFormatVersion, "ARQCACHE");
  CertCache c;
  c.sigma = r.f64("sigma");
  c.alpha = r.f64("alpha");
  c.n0 = r.u64("n0");
  c.seed = r.u64("seed");
  const std::uint64_t count = r.u64("entry count");
  if (count > (1ULL << 28)) throw FormatError(path.string() + ": implausible entry count");
  for (std::uint64_t i = 0; i < count; ++i) {
    CacheEntry e;
    e.input_id = r.u64("input_id");
    e.label = r.u32("label");
    e.predicted = r.u32("predicted");
    e.p_lower = r.f64("p_lower");
    e.abstain = r.u8("abstain") != 0;
    const std::uint64_t len = r.u64("trace length");
    if (len > (1ULL << 32)) throw FormatError(path.string() + ": implausible trace length");
    e.trace.resize(len);
    for (auto& t : e.trace) t = r.u16("trace");
    c.entries.push_back(std::move(e));
  }
  r.expect_end();
  return c;
}

}  // namespace arq::cert
