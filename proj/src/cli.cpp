#include "arq/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "arq/certify.hpp"
#include "arq/config.hpp"
#include "arq/cost.hpp"
#include "arq/dataset.hpp"
#include "arq/ddpg.hpp"
#include "arq/model_io.hpp"
#include "arq/quant.hpp"
#include "arq/search.hpp"
#include "arq/train.hpp"

namespace arq::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_file;
  std::vector<std::string> assignments;
  std::string out_dir = "run";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string split = "cert";
  std::string eval_split = "eval";
  std::string policy;
  std::vector<std::string> records;
  std::string baseline_bits;
};

class Run {
 public:
  Run(const Options& o, std::ostream& out) : opts_(o), out_(out) {
    if (!o.config_file.empty()) cfg_ = config::load_config(o.config_file);
    for (const auto& a : o.assignments) config::apply_assignment(cfg_, a);
    config::apply_environment(cfg_);
    if (o.seed) cfg_.seed = *o.seed;
    if (o.threads) cfg_.threads = *o.threads;
    if (cfg_.threads == 0) cfg_.threads = std::max(1u, std::thread::hardware_concurrency());
    cfg_.sync();
    dir_ = o.out_dir;
    fs::create_directories(dir_);
    std::ofstream snap(dir_ / "config.ini");
    snap << "# arq run configuration\n";
    config::write_config(snap, cfg_);
  }

  const config::RunConfig& cfg() const { return cfg_; }
  fs::path path(const std::string& name) const { return dir_ / name; }
  fs::path data_dir() const { return cfg_.data_dir.empty() ? dir_ / "data" : fs::path(cfg_.data_dir); }
  fs::path model_path() const {
    return cfg_.model_path.empty() ? dir_ / "model.arqnet" : fs::path(cfg_.model_path);
  }

  data::DatasetSplits load_splits() const {
    const auto d = data_dir();
    data::DatasetSplits s;
    s.train = data::load_dataset(d / "train.arqdata");
    s.cert = data::load_dataset(d / "cert.arqdata");
    s.eval = data::load_dataset(d / "eval.arqdata");
    return s;
  }

  static const data::Dataset& pick_split(const data::DatasetSplits& s, const std::string& name) {
    if (name == "cert") return s.cert;
    if (name == "eval") return s.eval;
    if (name == "train") return s.train;
    throw ConfigError("unknown split '" + name + "' (expected cert, eval or train)");
  }

  std::ofstream create(const std::string& name) const {
    std::ofstream os(path(name));
    if (!os) throw Error("cannot write " + path(name).string());
    return os;
  }

  std::ostream& out() const { return out_; }
  const Options& opts() const { return opts_; }

 private:
  const Options& opts_;
  std::ostream& out_;
  config::RunConfig cfg_;
  fs::path dir_;
};

void print_summary(std::ostream& out, const cert::ACRReport& rep) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "ACR %.4f  clean accuracy %.4f\n", rep.acr, rep.clean_accuracy());
  out << buf;
  for (const auto& [r, acc] : rep.certified_accuracy) {
    std::snprintf(buf, sizeof buf, "  r=%.2f  certified accuracy %.4f\n", r, acc);
    out << buf;
  }
}

void cmd_gen_data(const Run& run) {
  const auto splits = data::generate_synthetic(run.cfg().data);
  const auto d = run.data_dir();
  fs::create_directories(d);
  data::save_dataset(splits.train, d / "train.arqdata");
  data::save_dataset(splits.cert, d / "cert.arqdata");
  data::save_dataset(splits.eval, d / "eval.arqdata");
  run.out() << "wrote " << splits.train.size() << " train, " << splits.cert.size() << " cert, "
            << splits.eval.size() << " eval samples to " << d.string() << '\n';
}

void cmd_train(const Run& run) {
  const auto splits = run.load_splits();
  auto net = nn::make_tiny_convnet(run.cfg().model, substream_seed(run.cfg().seed, 0, StreamPhase::init));
  nn::TrainReport rep;
  net = nn::train_gaussian(std::move(net), splits.train, run.cfg().train, &rep);
  io::save_model(net, run.model_path());
  auto log = run.create("train_log.csv");
  log << "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f\n", e + 1, rep.epoch_loss[e]);
    log << buf;
  }
  const Real acc = nn::noisy_accuracy(net, splits.eval, run.cfg().search.sigma, run.cfg().seed);
  std::snprintf(buf, sizeof buf, "%.4f", acc);
  run.out() << "trained " << net.param_count() << " parameters; noisy eval accuracy " << buf << '\n';
}

void cmd_certify(const Run& run) {
  const auto splits = run.load_splits();
  const auto net = io::load_model(run.model_path());
  const auto cert = search::certify_original(net, Run::pick_split(splits, run.opts().split), run.cfg().search);
  auto os = run.create("certify_records.csv");
  cert::write_records_csv(os, cert.report.records);
  cert::save_cache(cert.cache, run.path("cert.arqcache"));
  print_summary(run.out(), cert.report);
}

void cmd_search(const Run& run) {
  const auto splits = run.load_splits();
  const auto net = io::load_model(run.model_path());
  auto scfg = run.cfg().search;
  if (scfg.budget == 0) scfg.budget = search::uniform_budget(net, run.cfg().budget_bits, scfg);
  auto history = run.create("history.csv");
  history << "episode,reward,acr_p,bops,size_bits,policy_string\n";
  history.flush();
  const auto result = search::run_search(net, splits, scfg, nullptr, [&](const search::EpisodeRecord& rec) {
    std::ostringstream row;
    search::write_history_csv(row, {rec});
    const std::string text = row.str();
    history << text.substr(text.find('\n') + 1);
    history.flush();
  });
  auto original = run.create("original_records.csv");
  cert::write_records_csv(original, result.original_certification.report.records);
  if (result.agent) result.agent->save_checkpoint(run.path("agent.arqddpg"));
  char buf[160];
  std::snprintf(buf, sizeof buf, "original ACR %.4f; budget %llu BitOPs; %zu episodes\n", result.original.acr,
                static_cast<unsigned long long>(result.budget), result.history.size());
  run.out() << buf;
  if (result.best_policy) {
    quant::save_policy(*result.best_policy, run.path("best_policy.txt"));
    auto cost_csv = run.create("best_policy_cost.csv");
    cost::write_cost_csv(cost_csv, cost::policy_cost(net, *result.best_policy));
    std::snprintf(buf, sizeof buf, "best reward %.4f at episode %zu: ", result.best_reward, result.best_episode);
    run.out() << buf << quant::policy_string(*result.best_policy) << '\n';
  }
}

void cmd_evaluate(const Run& run) {
  const auto splits = run.load_splits();
  const auto net = io::load_model(run.model_path());
  quant::QuantPolicy policy;
  if (!run.opts().baseline_bits.empty()) {
    int bits = 0;
    try {
      bits = std::stoi(run.opts().baseline_bits);
    } catch (const std::exception&) {
      throw ConfigError("--uniform expects an integer bit-width");
    }
    const auto& s = run.cfg().search;
    policy = quant::uniform_policy(net, bits, std::min(bits, s.bit_min), std::max(bits, s.bit_max), s.pin_ends);
  } else {
    const std::string p = !run.opts().policy.empty() ? run.opts().policy : run.cfg().policy_path;
    if (p.empty()) throw ConfigError("evaluate needs --policy, --uniform or paths.policy");
    policy = quant::load_policy(p);
  }
  const auto ev = search::evaluate_policy(net, policy, splits.train, Run::pick_split(splits, run.opts().eval_split),
                                           run.cfg().search);
  auto rec = run.create("evaluate_records.csv");
  cert::write_records_csv(rec, ev.report.records);
  auto cost_csv = run.create("evaluate_cost.csv");
  cost::write_cost_csv(cost_csv, ev.cost);
  run.out() << "policy " << quant::policy_string(policy) << "  BitOPs " << ev.cost.total_bops << '\n';
  print_summary(run.out(), ev.report);
}

void cmd_report(const Run& run) {
  std::vector<std::string> files = run.opts().records;
  if (files.empty() && !run.cfg().records_path.empty()) files.push_back(run.cfg().records_path);
  if (files.empty()) throw ConfigError("report needs --records or paths.records");
  auto os = run.create("report.csv");
  os << "source,radius,certified_accuracy\n";
  char buf[128];
  for (const auto& f : files) {
    std::ifstream is(f);
    if (!is) throw Error("cannot open " + f);
    const auto rep = cert::make_report(cert::read_records_csv(is, f));
    run.out() << f << '\n';
    print_summary(run.out(), rep);
    for (const auto& [r, acc] : rep.certified_accuracy) {
      std::snprintf(buf, sizeof buf, ",%.2f,%.6f\n", r, acc);
      os << f << buf;
    }
    std::snprintf(buf, sizeof buf, ",acr,%.6f\n", rep.acr);
    os << f << buf;
  }
}

std::string version_string() {
  return std::string("arq ") + kVersion + " (ARQNET v" + std::to_string(io::kModelFormatVersion) + ", ARQDATA v" +
         std::to_string(data::kDatasetFormatVersion) + ", ARQCACHE v" + std::to_string(cert::kCacheFormatVersion) +
         ", ARQDDPG v" + std::to_string(rl::kCheckpointFormatVersion) + ")";
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Certified-robustness-aware mixed-precision quantization search", "arq"};
  Options opts;
  bool show_version = false;
  app.add_flag("--version", show_version, "Print artifact and file format versions");
  app.add_option("--config", opts.config_file, "Configuration file ([section] key = value)");
  app.add_option("--set", opts.assignments, "Override one key, e.g. --set search.episodes=10");
  app.add_option("--out", opts.out_dir, "Run directory receiving every artifact")->capture_default_str();
  app.add_option("--seed", opts.seed, "Master seed (overrides config and ARQ_SEED)");
  app.add_option("--threads", opts.threads, "Certification threads, 0 for all cores");

  struct Sub {
    const char* name;
    const char* help;
    void (*fn)(const Run&);
  };
  const Sub subs[] = {
      {"gen-data", "Generate the synthetic train/cert/eval splits", cmd_gen_data},
      {"train", "Train a TinyConvNet with Gaussian augmentation", cmd_train},
      {"certify", "Certify the trained network with randomized smoothing", cmd_certify},
      {"search", "Search a mixed-precision policy", cmd_search},
      {"evaluate", "Fine-tune and fully certify a quantization policy", cmd_evaluate},
      {"report", "Tabulate certified accuracy against radius", cmd_report},
  };
  std::vector<CLI::App*> commands;
  for (const auto& s : subs) {
    auto* c = app.add_subcommand(s.name, s.help);
    c->fallthrough();
    commands.push_back(c);
  }
  commands[2]->add_option("--split", opts.split, "Split to certify: cert, eval or train")->capture_default_str();
  commands[4]->add_option("--policy", opts.policy, "Policy file");
  commands[4]->add_option("--uniform", opts.baseline_bits, "Evaluate the uniform policy at this bit-width");
  commands[4]->add_option("--split", opts.eval_split, "Split to certify: cert, eval or train")->capture_default_str();
  commands[5]->add_option("--records", opts.records, "Records CSV files");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "arq: " << first_line(e.what()) << '\n';
    return usage;
  }
  if (show_version) {
    out << version_string() << '\n';
    return ok;
  }
  const Sub* chosen = nullptr;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (commands[i]->parsed()) chosen = &subs[i];
  }
  if (!chosen) {
    err << "arq: expected a subcommand (gen-data, train, certify, search, evaluate, report)\n";
    return usage;
  }

  try {
    const Run r(opts, out);
    chosen->fn(r);
    return ok;
  } catch (const ConfigError& e) {
    err << "arq: config error: " << first_line(e.what()) << '\n';
    return config;
  } catch (const std::exception& e) {
    err << "arq: " << first_line(e.what()) << '\n';
    return runtime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace arq::cli
