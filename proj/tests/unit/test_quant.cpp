#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "arq/quant.hpp"
#include "support/fixtures.hpp"

using namespace arq;
using quant::QuantMode;

TEST_CASE("quantize_value examples") {
  for (int b : {2, 4, 8}) CHECK(quant::quantize_value(0.0, b, 0.7, QuantMode::weight) == 0.0);
  CHECK(quant::scale_for(4, 1.0) == doctest::Approx(1.0 / 7.0));
  CHECK(quant::quantize_value(0.3, 4, 1.0, QuantMode::weight) == doctest::Approx(2.0 / 7.0).epsilon(1e-15));
  CHECK(std::abs(quant::quantize_value(0.3, 4, 1.0, QuantMode::weight) - 0.285714) < 1e-6);
  CHECK(quant::quantize_value(5.0, 4, 1.0, QuantMode::weight) == 1.0);
  CHECK(quant::quantize_value(-5.0, 4, 1.0, QuantMode::weight) == -1.0);
  CHECK(quant::quantize_value(-0.5, 4, 1.0, QuantMode::activation) == 0.0);
  CHECK_THROWS_AS(quant::quantize_tensor(Tensor({1}, 0.1), 1, 1.0, QuantMode::weight), DomainError);
  CHECK_THROWS_AS(quant::quantize_tensor(Tensor({1}, 0.1), 4, 0.0, QuantMode::weight), DomainError);
}

TEST_CASE("quantizer properties over random values") {
  const auto raw = fixture::random_vector(4000, 31, -3.0, 3.0);
  const Tensor t({raw.size()}, raw);
  for (QuantMode mode : {QuantMode::weight, QuantMode::activation}) {
    for (int b : {2, 3, 4, 5, 8, 12, 16}) {
      for (Real c : {0.25, 1.0, 2.5}) {
        CAPTURE(b);
        CAPTURE(c);
        const Real s = quant::scale_for(b, c);
        const Tensor q = quant::quantize_tensor(t, b, c, mode);
        // idempotence
        CHECK(quant::quantize_tensor(q, b, c, mode) == q);
        const Real lo = mode == QuantMode::weight ? -c : 0.0;
        std::vector<std::pair<Real, Real>> pairs;
        for (std::size_t i = 0; i < raw.size(); ++i) {
          const Real v = raw[i];
          if (v >= lo && v <= c) CHECK(std::abs(q[i] - v) <= s / 2 + 1e-12);
          CHECK(q[i] >= lo);
          CHECK(q[i] <= c);
          pairs.emplace_back(v, q[i]);
        }
        std::sort(pairs.begin(), pairs.end());
        bool monotone = true;
        for (std::size_t i = 1; i < pairs.size(); ++i) monotone &= pairs[i].second >= pairs[i - 1].second;
        CHECK(monotone);
      }
    }
  }
}

TEST_CASE("lattice cardinality") {
  std::vector<Real> sweep;
  for (int i = -20000; i <= 20000; ++i) sweep.push_back(i * 1e-4);
  const Tensor t({sweep.size()}, sweep);
  for (int b : {2, 3, 4, 6, 8}) {
    const auto qw = quant::quantize_tensor(t, b, 1.5, QuantMode::weight);
    const auto qa = quant::quantize_tensor(t, b, 1.5, QuantMode::activation);
    const std::set<Real> w(qw.values.begin(), qw.values.end()), a(qa.values.begin(), qa.values.end());
    CHECK(w.size() == (std::size_t{1} << b) - 1);
    CHECK(a.size() == std::size_t{1} << (b - 1));
  }
}

TEST_CASE("round-trip error is nonincreasing in bits") {
  const auto raw = fixture::random_vector(5000, 4, -2.0, 2.0);
  for (QuantMode mode : {QuantMode::weight, QuantMode::activation}) {
    Real prev = 1e9;
    for (int b = 2; b <= 16; ++b) {
      Real worst = 0.0;
      for (Real v : raw) {
        const Real clipped = std::clamp(v, mode == QuantMode::weight ? -1.0 : 0.0, 1.0);
        worst = std::max(worst, std::abs(quant::quantize_value(v, b, 1.0, mode) - clipped));
      }
      CHECK(worst <= prev);
      prev = worst;
    }
  }
}

TEST_CASE("clip calibration examples") {
  const auto uniform = fixture::random_vector(20000, 12, -1.0, 1.0);
  const auto u = quant::calibrate_clip(uniform, 8, QuantMode::weight);
  CHECK(u.clip >= 0.9);
  CHECK(u.clip <= 1.0);
  CHECK_FALSE(u.degenerate);

  const std::vector<Real> spike{0, 0, 0, 2};
  CHECK(quant::calibrate_clip(spike, 8, QuantMode::weight).clip == 2.0);
  CHECK(quant::calibrate_clip(spike, 3, QuantMode::weight).clip == 2.0);

  const std::vector<Real> zeros(10, 0.0);
  const auto z = quant::calibrate_clip(zeros, 4, QuantMode::weight);
  CHECK(z.clip == 1.0);
  CHECK(z.degenerate);
  // negative-only values carry no activation mass
  CHECK(quant::calibrate_clip(std::vector<Real>{-1.0, -2.0}, 4, QuantMode::activation).degenerate);
  CHECK_THROWS_AS(quant::calibrate_clip(std::vector<Real>{}, 4, QuantMode::weight), DomainError);
}

TEST_CASE("calibrated clip is one of the evenly spaced candidates") {
  const auto raw = fixture::random_vector(3000, 77, -0.5, 2.0);
  const Real max_abs = std::abs(*std::max_element(raw.begin(), raw.end(),
                                                  [](Real a, Real b) { return std::abs(a) < std::abs(b); }));
  for (int b : {2, 4, 8}) {
    const Real c = quant::calibrate_clip(raw, b, QuantMode::weight).clip;
    const Real ratio = c / max_abs * quant::kClipCandidates;
    CHECK(std::abs(ratio - std::round(ratio)) < 1e-9);
    CHECK(c > 0.0);
    CHECK(c <= max_abs);
  }
}

TEST_CASE("heavy tail gets clipped at low bit-widths") {
  // Gaussian bulk with a single far outlier: the clip should move well inside it.
  std::mt19937_64 rng(1);
  std::normal_distribution<Real> n(0.0, 0.1);
  std::vector<Real> v(20000);
  for (auto& x : v) x = n(rng);
  v.push_back(5.0);
  CHECK(quant::calibrate_clip(v, 4, QuantMode::weight).clip < 1.0);
}

namespace {

nn::Network small_conv() { return nn::make_tiny_convnet(fixture::toy_model_config(), 4); }

}  // namespace

TEST_CASE("policy validation") {
  const auto net = small_conv();
  const auto q = net.quantizable_layers();
  REQUIRE(q.size() == 4);
  auto p = quant::uniform_policy(net, 4, 2, 8);
  CHECK_NOTHROW(quant::validate_policy(net, p));
  CHECK(p.entries.front().weight_bits == 8);
  CHECK(p.entries.back().act_bits == 8);
  CHECK(p.entries[1].weight_bits == 4);

  auto relu = p;
  relu.entries[1].layer = q[1] + 1;  // the ReLU after that conv
  CHECK_THROWS_WITH_AS(quant::validate_policy(net, relu), doctest::Contains(std::to_string(q[1] + 1).c_str()),
                       PolicyError);
  auto missing = p;
  missing.entries.pop_back();
  CHECK_THROWS_WITH_AS(quant::validate_policy(net, missing), doctest::Contains(std::to_string(q.back()).c_str()),
                       PolicyError);
  auto range = p;
  range.entries[1].act_bits = 9;
  CHECK_THROWS_AS(quant::validate_policy(net, range), PolicyError);
  auto pinned = p;
  pinned.entries[0].weight_bits = 4;
  CHECK_THROWS_AS(quant::validate_policy(net, pinned), PolicyError);
  pinned.pin_ends = false;
  CHECK_NOTHROW(quant::validate_policy(net, pinned));
  CHECK_THROWS_AS(quant::apply_policy(net, relu, fixture::toy_splits().train), PolicyError);
}

TEST_CASE("policy text round trip") {
  const auto net = small_conv();
  auto p = quant::uniform_policy(net, 3, 2, 6);
  p.entries[2].act_bits = 5;
  std::stringstream ss;
  quant::write_policy(ss, p);
  CHECK(quant::read_policy(ss) == p);
  CHECK(quant::policy_string(p).find(';') != std::string::npos);

  const auto dir = fixture::tmp_dir("policy");
  quant::save_policy(p, dir / "p.txt");
  CHECK(quant::load_policy(dir / "p.txt") == p);

  std::istringstream bad("bit_min 2\n0 8 x\n");
  CHECK_THROWS_AS(quant::read_policy(bad), FormatError);
  std::istringstream no_header("0 8 8\n");
  CHECK_THROWS_AS(quant::read_policy(no_header), FormatError);
}

TEST_CASE("activation modes follow the layer input sign") {
  const auto net = small_conv();
  const auto q = net.quantizable_layers();
  CHECK_FALSE(quant::input_nonnegative(net, q[0]));
  for (std::size_t i = 1; i < q.size(); ++i) CHECK(quant::input_nonnegative(net, q[i]));
  const auto qn = quant::apply_policy(net, quant::uniform_policy(net, 4, 2, 8), fixture::toy_splits().train);
  CHECK(qn.params()[0].act_mode == QuantMode::weight);
  CHECK(qn.params()[1].act_mode == QuantMode::activation);
}

TEST_CASE("apply_policy is deterministic and bit-exact on repeat") {
  const auto& net = fixture::toy_net();
  const auto& train = fixture::toy_splits().train;
  const auto p = quant::uniform_policy(net, 4, 2, 8);
  quant::CalibrationOptions o;
  o.noise_sigma = 0.25;
  o.seed = 3;
  const auto a = quant::apply_policy(net, p, train, o), b = quant::apply_policy(net, p, train, o);
  CHECK(a.params() == b.params());
  CHECK(a.overlay().weights == b.overlay().weights);
  const auto x = fixture::toy_splits().cert.sample(0);
  CHECK(quant::quantized_forward(a, x) == quant::quantized_forward(a, x));
  CHECK(quant::quantized_forward(a, x) == quant::quantized_forward(b, x));
}

TEST_CASE("2-bit weights take at most three values per layer") {
  const auto& net = fixture::toy_net();
  auto p = quant::uniform_policy(net, 2, 2, 8, false);
  const auto qn = quant::apply_policy(net, p, fixture::toy_splits().train);
  for (const auto& e : p.entries) {
    const auto& w = qn.overlay().weights[e.layer].values;
    CHECK(std::set<Real>(w.begin(), w.end()).size() <= 3);
  }
}

TEST_CASE("16-bit quantization with generous clips tracks the float network") {
  const auto& net = fixture::toy_net();
  const auto& cert = fixture::toy_splits().cert;
  const auto p = quant::uniform_policy(net, 16, 2, 16, false);
  auto qn = quant::apply_policy(net, p, fixture::toy_splits().train);

  std::vector<std::vector<Real>> inputs;
  for (std::size_t i = 0; i < 100; ++i) {
    auto x = fixture::random_vector(net.input_size(), 1000 + i, -0.5, 0.5);
    const auto s = cert.sample(i % cert.size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += s[j];
    inputs.push_back(std::move(x));
  }
  auto params = qn.params();
  for (auto& qp : params) {
    Real wmax = 0.0, amax = 0.0;
    for (Real w : net.weights[qp.layer].values) wmax = std::max(wmax, std::abs(w));
    for (const auto& x : inputs) {
      const auto tape = nn::forward_tape(net, x);
      for (Real v : tape.inputs[qp.layer]) amax = std::max(amax, std::abs(v));
    }
    qp.weight_clip = wmax;
    qp.act_clip = amax;
  }
  qn.set_params(params);
  Real worst = 0.0;
  for (const auto& x : inputs) {
    const auto f = nn::forward(net, x), q = quant::quantized_forward(qn, x);
    for (std::size_t c = 0; c < f.numel(); ++c) worst = std::max(worst, std::abs(f[c] - q[c]));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("higher bit-widths agree more often with the float network") {
  const auto& net = fixture::toy_net();
  const auto& splits = fixture::toy_splits();
  quant::CalibrationOptions o;
  o.noise_sigma = 0.25;
  auto disagreement = [&](int bits) {
    const auto qn = quant::apply_policy(net, quant::uniform_policy(net, bits, 2, 8, false), splits.train, o);
    std::size_t diff = 0, total = 0;
    for (std::size_t i = 0; i < splits.train.size(); ++i) {
      diff += nn::predict(net, splits.train.sample(i)) != quant::quantized_predict(qn, splits.train.sample(i));
      ++total;
    }
    return static_cast<Real>(diff) / total;
  };
  const Real d8 = disagreement(8), d3 = disagreement(3);
  CHECK(d8 <= 0.02);
  CHECK(d8 <= d3);
}

TEST_CASE("fine-tuning a quantized network is seeded and moves only the float weights") {
  const auto& net = fixture::toy_net();
  const auto& train = fixture::toy_splits().train;
  const auto p = quant::uniform_policy(net, 3, 2, 8);
  const auto qn = quant::apply_policy(net, p, train);
  nn::FineTuneConfig f;
  f.n1 = 128;
  f.seed = 2;
  const auto a = quant::fine_tune_quantized(qn, train, f), b = quant::fine_tune_quantized(qn, train, f);
  CHECK(a.base() == b.base());
  CHECK_FALSE(a.base() == qn.base());
  CHECK(a.policy() == p);
  // Overlay weights are the quantized fine-tuned weights.
  for (std::size_t i = 0; i < p.entries.size(); ++i) {
    const auto k = p.entries[i].layer;
    CHECK(a.overlay().weights[k] ==
          quant::quantize_tensor(a.base().weights[k], p.entries[i].weight_bits, a.params()[i].weight_clip,
                                 QuantMode::weight));
  }
  f.n1 = 0;
  CHECK(quant::fine_tune_quantized(qn, train, f).base() == qn.base());
}
