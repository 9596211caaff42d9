#include <doctest.h>

#include <fstream>
#include <numeric>
#include <set>

#include "arq/dataset.hpp"
#include "support/fixtures.hpp"

using namespace arq;

TEST_CASE("generator is deterministic and splits are disjoint") {
  data::GenConfig g;
  g.per_class = 50;
  g.cert_count = 10;
  g.eval_count = 15;
  g.seed = 7;
  const auto a = data::generate_synthetic(g), b = data::generate_synthetic(g);
  CHECK(a.train == b.train);
  CHECK(a.cert == b.cert);
  CHECK(a.eval == b.eval);
  CHECK(a.cert.size() == 10);
  CHECK(a.eval.size() == 15);
  CHECK(a.train.size() == 150 - 25);
  CHECK(a.train.sample_shape == std::vector<std::size_t>{3, 8, 8});

  std::set<std::vector<Real>> seen;
  for (const auto* ds : {&a.train, &a.cert, &a.eval}) {
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const auto s = ds->sample(i);
      seen.emplace(s.begin(), s.end());
    }
  }
  CHECK(seen.size() == 150);

  g.seed = 8;
  CHECK_FALSE(data::generate_synthetic(g).train == a.train);
}

TEST_CASE("generator rejects bad configs") {
  data::GenConfig g;
  g.num_classes = 1;
  CHECK_THROWS_AS(data::generate_synthetic(g), ConfigError);
  g = {};
  g.margin = 0.0;
  CHECK_THROWS_AS(data::generate_synthetic(g), ConfigError);
  g = {};
  g.per_class = 10;
  g.cert_count = 20;
  g.eval_count = 10;
  CHECK_THROWS_AS(data::generate_synthetic(g), ConfigError);
}

TEST_CASE("large margin makes the classes linearly separable") {
  data::GenConfig g;
  g.margin = 5.0;
  g.per_class = 200;
  g.seed = 3;
  const auto s = data::generate_synthetic(g);
  // Nearest class mean estimated on the training split.
  const std::size_t d = s.train.sample_size();
  std::vector<std::vector<Real>> mean(g.num_classes, std::vector<Real>(d, 0.0));
  std::vector<std::size_t> count(g.num_classes, 0);
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    const auto x = s.train.sample(i);
    for (std::size_t p = 0; p < d; ++p) mean[s.train.labels[i]][p] += x[p];
    ++count[s.train.labels[i]];
  }
  for (std::size_t c = 0; c < g.num_classes; ++c) {
    for (auto& v : mean[c]) v /= static_cast<Real>(count[c]);
  }
  std::size_t correct = 0, total = 0;
  for (const auto* ds : {&s.cert, &s.eval}) {
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const auto x = ds->sample(i);
      std::size_t best = 0;
      Real best_d = 1e300;
      for (std::size_t c = 0; c < g.num_classes; ++c) {
        Real dist = 0.0;
        for (std::size_t p = 0; p < d; ++p) dist += (x[p] - mean[c][p]) * (x[p] - mean[c][p]);
        if (dist < best_d) best_d = dist, best = c;
      }
      correct += best == ds->labels[i];
      ++total;
    }
  }
  CHECK(static_cast<Real>(correct) / total >= 0.99);
}

TEST_CASE("class means sit margin * std from each pairwise boundary") {
  data::GenConfig g;
  g.per_class = 2000;
  g.margin = 2.0;
  g.data_std = 0.1;
  g.cert_count = 1;
  g.eval_count = 1;
  const auto s = data::generate_synthetic(g);
  const std::size_t d = s.train.sample_size();
  std::vector<std::vector<Real>> mean(3, std::vector<Real>(d, 0.0));
  std::vector<std::size_t> count(3, 0);
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    const auto x = s.train.sample(i);
    for (std::size_t p = 0; p < d; ++p) mean[s.train.labels[i]][p] += x[p];
    ++count[s.train.labels[i]];
  }
  for (std::size_t c = 0; c < 3; ++c) {
    for (auto& v : mean[c]) v /= static_cast<Real>(count[c]);
  }
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      Real dist = 0.0;
      for (std::size_t p = 0; p < d; ++p) dist += (mean[a][p] - mean[b][p]) * (mean[a][p] - mean[b][p]);
      // Half the distance between means; sampling error of the means is ~std*sqrt(d/n).
      CHECK(std::sqrt(dist) / 2.0 == doctest::Approx(g.margin * g.data_std).epsilon(0.1));
    }
  }
}

TEST_CASE("binary dataset round trip and corruption") {
  const auto dir = fixture::tmp_dir("dataset");
  const auto& ds = fixture::toy_splits().cert;
  data::save_dataset(ds, dir / "a.arqdata");
  CHECK(data::load_dataset(dir / "a.arqdata") == ds);

  std::ifstream in(dir / "a.arqdata", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  {
    std::ofstream out(dir / "short.arqdata", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  CHECK_THROWS_AS(data::load_dataset(dir / "short.arqdata"), FormatError);
  {
    std::ofstream out(dir / "magic.arqdata", std::ios::binary);
    out << "NOTDATA" << bytes.substr(7);
  }
  CHECK_THROWS_WITH_AS(data::load_dataset(dir / "magic.arqdata"), doctest::Contains("not an ARQDATA file"),
                       FormatError);
}

TEST_CASE("CSV ingestion") {
  const auto dir = fixture::tmp_dir("dataset_csv");
  {
    std::ofstream out(dir / "d.csv");
    out << "label,a,b\n1,0.5,-1\n0,2,3e-1\n";
  }
  const auto ds = data::load_csv(dir / "d.csv", {2}, 2);
  REQUIRE(ds.size() == 2);
  CHECK(ds.labels == std::vector<std::uint32_t>{1, 0});
  CHECK(ds.values == std::vector<Real>{0.5, -1, 2, 0.3});
  {
    std::ofstream out(dir / "bad.csv");
    out << "1,0.5\n";
  }
  CHECK_THROWS_AS(data::load_csv(dir / "bad.csv", {2}, 2), FormatError);
  {
    std::ofstream out(dir / "label.csv");
    out << "3,0.5,1\n";
  }
  CHECK_THROWS_AS(data::load_csv(dir / "label.csv", {2}, 2), FormatError);
}
