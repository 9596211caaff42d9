#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "arq/certify.hpp"
#include "arq/stats.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace arq;

namespace {

// f(x) = 1[x_0 > 0]; under N(0, sigma^2 I) noise class 1 has probability Phi(x_0 / sigma).
cert::FunctionClassifier threshold_classifier(std::size_t dim = 2, Real shift = 0.0) {
  return cert::FunctionClassifier([shift](std::span<const Real> x) -> std::size_t { return x[0] > shift ? 1 : 0; },
                                  dim, 2);
}

data::Dataset repeated_input(Real x0, std::size_t count, std::uint32_t label = 1) {
  data::Dataset ds;
  ds.sample_shape = {2};
  ds.num_classes = 2;
  for (std::size_t i = 0; i < count; ++i) ds.push_back(std::vector<Real>{x0, 0.3}, label);
  return ds;
}

cert::CertificationRecord record(bool correct, bool abstain, Real radius) {
  cert::CertificationRecord r;
  r.correct = correct;
  r.abstain = abstain;
  r.radius = radius;
  return r;
}

}  // namespace

TEST_CASE("sample counts: sigma 0, constant classifier, analytic probability") {
  const auto f = threshold_classifier();
  const std::vector<Real> x{0.2, 0.0};
  Rng rng(1);
  CHECK(cert::sample_counts(f, x, 0.0, 50, rng) == std::vector<std::uint64_t>{0, 50});
  const cert::FunctionClassifier constant([](std::span<const Real>) -> std::size_t { return 0; }, 2, 3);
  CHECK(cert::sample_counts(constant, x, 1.0, 77, rng) == std::vector<std::uint64_t>{77, 0, 0});

  const Real sigma = 0.25;
  const std::vector<Real> at_sigma{sigma, 0.0};
  Rng rng2(2);
  std::vector<std::uint16_t> trace;
  const auto counts = cert::sample_counts(f, at_sigma, sigma, 10000, rng2, &trace);
  const Real p = oracle::phi(1.0);
  CHECK(std::abs(p - 0.8413) < 1e-4);
  CHECK(std::abs(counts[1] / 10000.0 - p) <= 3.0 * std::sqrt(p * (1 - p) / 10000));
  REQUIRE(trace.size() == 10000);
  CHECK(static_cast<std::uint64_t>(std::count(trace.begin(), trace.end(), 1)) == counts[1]);
}

TEST_CASE("selection size") {
  CHECK(cert::default_selection_size(100) == 32);
  CHECK(cert::default_selection_size(4000) == 400);
}

TEST_CASE("constant classifier certifies with the k = n closed form") {
  const cert::FunctionClassifier constant([](std::span<const Real>) -> std::size_t { return 0; }, 2, 2);
  Rng s(1), e(2);
  const auto r = cert::certify_input(constant, std::vector<Real>{0, 0}, 0, 0.5, 100, 1000, 0.001, s, e);
  CHECK(std::abs(r.p_lower - 0.993116) < 1e-6);
  CHECK(r.p_lower == std::pow(0.001, 1.0 / 1000));
  CHECK(r.radius == doctest::Approx(0.5 * oracle::phi_inv(r.p_lower)).epsilon(1e-10));
  CHECK_FALSE(r.abstain);
  CHECK(r.correct);

  Rng s2(1), e2(2);
  const auto zero_sigma = cert::certify_input(threshold_classifier(), std::vector<Real>{1, 0}, 1, 0.0, 32, 100,
                                              0.001, s2, e2);
  CHECK(zero_sigma.p_lower == std::pow(0.001, 0.01));
  CHECK(zero_sigma.p_lower > 0.5);
  CHECK(zero_sigma.radius == 0.0);  // sigma * PhiInv(p) with sigma = 0
  CHECK_FALSE(zero_sigma.abstain);
}

TEST_CASE("a coin-flip classifier abstains") {
  const auto cert = cert::certify_dataset(threshold_classifier(), repeated_input(0.0, 200),
                                          {0.25, 1000, 0, 0.001, 3, 1});
  std::size_t abstained = 0;
  for (const auto& r : cert.report.records) abstained += r.abstain;
  CHECK(abstained >= 196);
  CHECK(cert.report.acr <= 0.01);
}

TEST_CASE("certification is statistically sound") {
  const Real sigma = 0.25, x0 = 0.3;
  const Real true_radius = sigma * oracle::phi_inv(oracle::phi(x0 / sigma));
  const auto cert = cert::certify_dataset(threshold_classifier(), repeated_input(x0, 200),
                                          {sigma, 1000, 0, 0.01, 17, 2});
  std::size_t over = 0, abstained = 0;
  for (const auto& r : cert.report.records) {
    over += !r.abstain && r.radius > true_radius;
    abstained += r.abstain;
  }
  CHECK(over <= static_cast<std::size_t>(200 * (0.01 + 3 * std::sqrt(0.01 * 0.99 / 200))));
  CHECK(abstained == 0);
}

TEST_CASE("ACR and certified accuracy conventions") {
  CHECK(cert::average_certified_radius(std::vector{record(true, true, 0.0), record(true, true, 0.0)}) == 0.0);

  auto one = record(true, false, 0.25 * stats::inv_norm_cdf(0.975));
  CHECK(std::abs(cert::average_certified_radius(std::vector{one}) - 0.489991) < 1e-6);

  std::vector<cert::CertificationRecord> recs{record(true, false, 0.3), record(false, false, 0.9),
                                              record(true, true, 0.0), record(true, false, 0.5)};
  CHECK(cert::average_certified_radius(recs) == doctest::Approx(0.2));
  CHECK(cert::certified_accuracy(recs, 0.0) == 0.5);
  CHECK(cert::certified_accuracy(recs, 0.3) == 0.25);  // strict above zero
  CHECK(cert::certified_accuracy(recs, 10.0) == 0.0);
  CHECK_THROWS_AS(cert::certified_accuracy(recs, -1.0), DomainError);

  const auto rep = cert::make_report(recs);
  CHECK(rep.clean_accuracy() == 0.5);
  CHECK(rep.certified_accuracy.front().second == rep.clean_accuracy());

  auto reversed = recs;
  std::reverse(reversed.begin(), reversed.end());
  auto doubled = recs;
  doubled.insert(doubled.end(), recs.begin(), recs.end());
  CHECK(cert::average_certified_radius(reversed) == doctest::Approx(cert::average_certified_radius(recs)));
  CHECK(cert::average_certified_radius(doubled) == doctest::Approx(cert::average_certified_radius(recs)));
  CHECK(cert::certified_accuracy(doubled, 0.4) == cert::certified_accuracy(recs, 0.4));
}

TEST_CASE("incremental certification with an identical classifier matches the closed form") {
  const auto f = threshold_classifier();
  const auto inputs = repeated_input(0.2, 20);
  const auto full = cert::certify_dataset(f, inputs, {0.25, 1000, 0, 0.001, 5, 1});
  cert::IncrementalConfig ic;
  ic.n = 200;
  ic.alpha_zeta = 0.001;
  const auto inc = cert::incremental_certify(f, full.cache, inputs, ic);
  const Real zeta = 1.0 - std::pow(0.001, 1.0 / 200);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& o = full.report.records[i];
    const auto& r = inc.records[i];
    REQUIRE_FALSE(o.abstain);
    CHECK(r.p_lower == o.p_lower - zeta);
    CHECK(r.radius == 0.25 * stats::inv_norm_cdf(o.p_lower - zeta));
    CHECK(r.alpha == doctest::Approx(0.002));
    CHECK(r.n_used == 200);
  }
}

TEST_CASE("incremental radius never exceeds the cached radius") {
  const auto f = threshold_classifier();
  data::Dataset inputs;
  inputs.sample_shape = {2};
  inputs.num_classes = 2;
  for (int i = 0; i < 40; ++i) inputs.push_back(std::vector<Real>{-0.5 + i * 0.025, 0.0}, i % 3 ? 1 : 0);
  const auto full = cert::certify_dataset(f, inputs, {0.25, 800, 0, 0.001, 9, 1});
  for (Real shift : {0.0, 0.01, 0.05, -0.1, 0.3}) {
    const auto g = threshold_classifier(2, shift);
    for (bool use_trace : {true, false}) {
      cert::CertCache cache = full.cache;
      if (!use_trace) {
        for (auto& e : cache.entries) e.trace.clear();
      }
      cert::IncrementalConfig ic;
      ic.n = 100;
      const auto inc = cert::incremental_certify(g, cache, inputs, ic, &f);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        CHECK(inc.records[i].radius <= full.report.records[i].radius);
        CHECK(inc.records[i].predicted == full.report.records[i].predicted);
      }
      CHECK(inc.acr <= full.report.acr);
    }
  }
}

TEST_CASE("a classifier that always disagrees abstains everywhere") {
  const auto f = threshold_classifier();
  const cert::FunctionClassifier flipped([&](std::span<const Real> x) -> std::size_t { return 1 - f.classify(x); },
                                         2, 2);
  const auto inputs = repeated_input(0.4, 10);
  const auto full = cert::certify_dataset(f, inputs, {0.25, 500, 0, 0.001, 2, 1});
  const auto inc = cert::incremental_certify(flipped, full.cache, inputs, {0.25, 200, 0.001, 1, false});
  for (const auto& r : inc.records) CHECK(r.abstain);
  CHECK(inc.acr == 0.0);
}

TEST_CASE("fallback re-certifies abstentions from scratch") {
  const auto f = threshold_classifier();
  const cert::FunctionClassifier flipped([&](std::span<const Real> x) -> std::size_t { return 1 - f.classify(x); },
                                         2, 2);
  const auto inputs = repeated_input(0.4, 5);
  const auto full = cert::certify_dataset(f, inputs, {0.25, 500, 0, 0.001, 2, 1});
  cert::IncrementalConfig ic{0.25, 200, 0.001, 1, true};
  const auto inc = cert::incremental_certify(flipped, full.cache, inputs, ic);
  for (const auto& r : inc.records) {
    CHECK(r.predicted == 0);
    CHECK_FALSE(r.correct);
    CHECK(r.n_used == 500);
  }
}

TEST_CASE("incremental certification errors") {
  const auto f = threshold_classifier();
  const auto inputs = repeated_input(0.4, 6);
  auto full = cert::certify_dataset(f, inputs, {0.25, 300, 0, 0.001, 2, 1});
  cert::IncrementalConfig ic;
  ic.n = 200;

  auto missing = full.cache;
  missing.entries.pop_back();
  try {
    cert::incremental_certify(f, missing, inputs, ic);
    FAIL("expected cache miss");
  } catch (const CacheMissError& e) {
    CHECK(e.input_id() == 5);
    CHECK(std::string(e.what()).find("5") != std::string::npos);
  }
  ic.n = 400;  // longer than the stored trace, and no original classifier
  CHECK_THROWS_AS(cert::incremental_certify(f, full.cache, inputs, ic), CacheMissError);
  CHECK_NOTHROW(cert::incremental_certify(f, full.cache, inputs, ic, &f));
  ic.n = 100;
  ic.sigma = 0.5;
  CHECK_THROWS_AS(cert::incremental_certify(f, full.cache, inputs, ic), DomainError);
}

TEST_CASE("certification does not depend on the thread count") {
  const auto& net = fixture::toy_net();
  const auto& cert_split = fixture::toy_splits().cert;
  const cert::NetworkClassifier f(net);
  cert::CertifyConfig cfg{0.25, 300, 0, 0.001, 4, 1};
  const auto one = cert::certify_dataset(f, cert_split, cfg);
  cfg.threads = 4;
  const auto four = cert::certify_dataset(f, cert_split, cfg);
  CHECK(one.cache == four.cache);
  std::ostringstream a, b;
  cert::write_records_csv(a, one.report.records);
  cert::write_records_csv(b, four.report.records);
  CHECK(a.str() == b.str());

  const auto inc1 = cert::incremental_certify(f, one.cache, cert_split, {0.25, 100, 0.001, 1, false});
  const auto inc4 = cert::incremental_certify(f, one.cache, cert_split, {0.25, 100, 0.001, 4, false});
  std::ostringstream c, d;
  cert::write_records_csv(c, inc1.records);
  cert::write_records_csv(d, inc4.records);
  CHECK(c.str() == d.str());
}

TEST_CASE("records CSV golden layout and round trip") {
  cert::CertificationRecord r;
  r.input_id = 3;
  r.label = 1;
  r.predicted = 1;
  r.p_lower = 0.975;
  r.radius = 0.25 * 1.959963984540054;
  r.abstain = false;
  r.correct = true;
  r.n_used = 4000;
  r.sigma = 0.25;
  r.alpha = 0.001;
  auto a = r;
  a.input_id = 4;
  a.predicted = 2;
  a.p_lower = 0.4;
  a.radius = 0.0;
  a.abstain = true;
  a.correct = false;
  std::ostringstream os;
  cert::write_records_csv(os, std::vector{r, a});
  CHECK(os.str() ==
        "input_id,label,predicted,p_lower,radius,abstain,correct,n,sigma,alpha\n"
        "3,1,1,0.975000000,0.489990996,0,1,4000,0.25,0.001\n"
        "4,1,2,0.400000000,0.000000000,1,0,4000,0.25,0.001\n");

  std::istringstream is(os.str());
  const auto back = cert::read_records_csv(is);
  REQUIRE(back.size() == 2);
  CHECK(back[0].radius == doctest::Approx(r.radius).epsilon(1e-8));
  CHECK(back[1].abstain);
  CHECK(back[1].predicted == 2);

  std::istringstream bad("input_id,label\n1,2,3\n");
  CHECK_THROWS_WITH_AS(cert::read_records_csv(bad, "x.csv"), doctest::Contains("x.csv:2"), FormatError);
}

TEST_CASE("cache file round trip and corruption") {
  const auto dir = fixture::tmp_dir("cache");
  const auto full = cert::certify_dataset(threshold_classifier(), repeated_input(0.2, 4), {0.25, 64, 0, 0.01, 1, 1});
  cert::save_cache(full.cache, dir / "c.arqcache");
  CHECK(cert::load_cache(dir / "c.arqcache") == full.cache);

  std::ifstream in(dir / "c.arqcache", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  {
    std::ofstream out(dir / "t.arqcache", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 1));
  }
  CHECK_THROWS_WITH_AS(cert::load_cache(dir / "t.arqcache"), doctest::Contains("truncated"), FormatError);
  {
    std::string v = bytes;
    v[8] = 9;
    std::ofstream out(dir / "v.arqcache", std::ios::binary);
    out << v;
  }
  CHECK_THROWS_WITH_AS(cert::load_cache(dir / "v.arqcache"), doctest::Contains("version"), FormatError);
}
