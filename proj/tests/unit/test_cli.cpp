#include <doctest.h>

#include <fstream>
#include <sstream>

#include "arq/certify.hpp"
#include "arq/cli.hpp"
#include "arq/model_io.hpp"
#include "support/fixtures.hpp"

using namespace arq;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result arq_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

// Small data so every subcommand finishes quickly.
std::vector<std::string> small(const std::filesystem::path& out, std::vector<std::string> extra) {
  std::vector<std::string> args{"--out", out.string(), "--threads", "2", "--set", "data.per_class=40",
                                "--set", "data.cert_count=20", "--set", "data.eval_count=20",
                                "--set", "smoothing.n0=200", "--set", "smoothing.n=50"};
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

}  // namespace

TEST_CASE("version, help and usage errors") {
  const auto v = arq_run({"--version"});
  CHECK(v.code == cli::ok);
  CHECK(v.out.rfind("arq 1.0.0", 0) == 0);
  CHECK(v.out.find("ARQNET v1") != std::string::npos);
  CHECK(arq_run({"--help"}).code == cli::ok);
  CHECK(arq_run({}).code == cli::usage);
  CHECK(arq_run({"frobnicate"}).code == cli::usage);
  CHECK(arq_run({"gen-data", "--no-such-flag"}).code == cli::usage);
}

TEST_CASE("configuration errors exit with the config code") {
  const auto dir = fixture::tmp_dir("cli_config");
  const auto r = arq_run({"--out", dir.string(), "--set", "search.bogus=1", "gen-data"});
  CHECK(r.code == cli::config);
  CHECK(r.err.find("search.bogus") != std::string::npos);
  CHECK(arq_run({"--out", dir.string(), "--config", (dir / "missing.ini").string(), "gen-data"}).code ==
        cli::config);
}

TEST_CASE("gen-data is byte-identical for the same seed and writes a config snapshot") {
  const auto a = fixture::tmp_dir("cli_gen_a"), b = fixture::tmp_dir("cli_gen_b");
  REQUIRE(arq_run(small(a, {"--seed", "7", "gen-data"})).code == cli::ok);
  REQUIRE(arq_run(small(b, {"gen-data", "--seed", "7"})).code == cli::ok);
  for (const char* f : {"data/train.arqdata", "data/cert.arqdata", "data/eval.arqdata"}) {
    CHECK(slurp(a / f) == slurp(b / f));
    CHECK_FALSE(slurp(a / f).empty());
  }
  const auto snap = slurp(a / "config.ini");
  CHECK(snap.find("seed = 7") != std::string::npos);
  CHECK(snap.find("per_class = 40") != std::string::npos);
}

TEST_CASE("config file, --set and ARQ_SEED precedence") {
  const auto dir = fixture::tmp_dir("cli_precedence");
  {
    std::ofstream cfg(dir / "c.ini");
    cfg << "[run]\nseed = 3\n[data]\nper_class = 30\ncert_count = 5\neval_count = 5\n";
  }
  ::setenv("ARQ_SEED", "11", 1);
  const auto r = arq_run({"--out", (dir / "run").string(), "--config", (dir / "c.ini").string(), "--set",
                          "data.per_class=35", "gen-data"});
  ::unsetenv("ARQ_SEED");
  REQUIRE(r.code == cli::ok);
  const auto snap = slurp(dir / "run" / "config.ini");
  CHECK(snap.find("seed = 11") != std::string::npos);
  CHECK(snap.find("per_class = 35") != std::string::npos);
}

namespace {

std::vector<cert::CertificationRecord> certify_untrained(const std::string& name) {
  const auto dir = fixture::tmp_dir(name);
  REQUIRE(arq_run(small(dir, {"gen-data"})).code == cli::ok);
  io::save_model(nn::make_tiny_convnet({}, 77), dir / "model.arqnet");
  REQUIRE(arq_run(small(dir, {"certify"})).code == cli::ok);
  CHECK(std::filesystem::exists(dir / "cert.arqcache"));
  std::ifstream is(dir / "certify_records.csv");
  return cert::read_records_csv(is);
}

}  // namespace

TEST_CASE("certify on an untrained network sits near chance") {
  const auto recs = certify_untrained("cli_untrained");
  REQUIRE(recs.size() == 20);
  std::size_t predicted_right = 0;
  for (const auto& rec : recs) predicted_right += rec.correct;
  CHECK(static_cast<double>(predicted_right) / recs.size() <= 0.6);
}

TEST_CASE("certify on an untrained network: most inputs abstain") {
  const auto recs = certify_untrained("cli_untrained_abstain");
  REQUIRE(recs.size() == 20);
  std::size_t abstained = 0;
  for (const auto& rec : recs) abstained += rec.abstain;
  CHECK(abstained > recs.size() / 2);
}

TEST_CASE("train, search with zero episodes, evaluate and report") {
  const auto dir = fixture::tmp_dir("cli_pipeline");
  auto with = [&](std::vector<std::string> extra) { return arq_run(small(dir, std::move(extra))); };
  REQUIRE(with({"gen-data"}).code == cli::ok);
  REQUIRE(with({"--set", "train.epochs=2", "train"}).code == cli::ok);
  CHECK(std::filesystem::exists(dir / "model.arqnet"));
  CHECK(slurp(dir / "train_log.csv").rfind("epoch,loss", 0) == 0);

  REQUIRE(with({"--set", "search.episodes=0", "search"}).code == cli::ok);
  CHECK(slurp(dir / "history.csv") == "episode,reward,acr_p,bops,size_bits,policy_string\n");
  CHECK_FALSE(std::filesystem::exists(dir / "best_policy.txt"));

  const auto ev = with({"evaluate", "--uniform", "4", "--set", "search.n1=16"});
  REQUIRE(ev.code == cli::ok);
  CHECK(ev.out.find("ACR") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "evaluate_records.csv"));
  CHECK(slurp(dir / "evaluate_cost.csv").find("total") != std::string::npos);

  CHECK(with({"evaluate", "--policy", (dir / "nope.txt").string()}).code == cli::runtime);
  CHECK(with({"evaluate"}).code == cli::config);

  const auto rep = with({"report", "--records", (dir / "evaluate_records.csv").string()});
  REQUIRE(rep.code == cli::ok);
  const auto table = slurp(dir / "report.csv");
  CHECK(table.rfind("source,radius,certified_accuracy\n", 0) == 0);
  CHECK(table.find(",acr,") != std::string::npos);
}
