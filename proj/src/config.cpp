#include "arq/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace arq::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("invalid value '" + value + "' for " + key + ": expected " + what);
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_unsigned<std::size_t>(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string description;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Proj>
Field size_field(std::string desc, Proj proj) {
  return {std::move(desc), [proj](RunConfig& c, const std::string& k, const std::string& v) {
            proj(c) = parse_unsigned<std::size_t>(k, v);
          },
          [proj](const RunConfig& c) { return std::to_string(proj(c)); }};
}

template <typename Proj>
Field u64_field(std::string desc, Proj proj) {
  return {std::move(desc), [proj](RunConfig& c, const std::string& k, const std::string& v) {
            proj(c) = parse_unsigned<std::uint64_t>(k, v);
          },
          [proj](const RunConfig& c) { return std::to_string(proj(c)); }};
}

template <typename Proj>
Field int_field(std::string desc, Proj proj) {
  return {std::move(desc), [proj](RunConfig& c, const std::string& k, const std::string& v) { proj(c) = parse_int(k, v); },
          [proj](const RunConfig& c) { return std::to_string(proj(c)); }};
}

template <typename Proj>
Field real_field(std::string desc, Proj proj) {
  return {std::move(desc), [proj](RunConfig& c, const std::string& k, const std::string& v) { proj(c) = parse_real(k, v); },
          [proj](const RunConfig& c) { return fmt_real(proj(c)); }};
}

template <typename Proj>
Field bool_field(std::string desc, Proj proj) {
  return {std::move(desc), [proj](RunConfig& c, const std::string& k, const std::string& v) { proj(c) = parse_bool(k, v); },
          [proj](const RunConfig& c) { return std::string(proj(c) ? "true" : "false"); }};
}

template <typename Proj>
Field string_field(std::string desc, Proj proj) {
  return {std::move(desc), [proj](RunConfig& c, const std::string&, const std::string& v) { proj(c) = v; },
          [proj](const RunConfig& c) { return proj(c); }};
}

template <typename Proj>
Field list_field(std::string desc, Proj proj) {
  return {std::move(desc), [proj](RunConfig& c, const std::string& k, const std::string& v) { proj(c) = parse_list(k, v); },
          [proj](const RunConfig& c) { return fmt_list(proj(c)); }};
}

using Registry = std::vector<std::pair<std::string, Field>>;

const Registry& registry() {
  static const Registry reg = [] {
    Registry r;
    auto add = [&r](std::string key, Field f) { r.emplace_back(std::move(key), std::move(f)); };
    // clang-format off
    add("run.seed", u64_field("master seed for every random stream", [](auto& c) -> auto& { return c.seed; }));
    add("run.threads", size_field("certification worker threads, 0 for all cores", [](auto& c) -> auto& { return c.threads; }));

    add("paths.data_dir", string_field("dataset directory (train/cert/eval .arqdata)", [](auto& c) -> auto& { return c.data_dir; }));
    add("paths.model", string_field("trained model file", [](auto& c) -> auto& { return c.model_path; }));
    add("paths.policy", string_field("policy file for evaluate", [](auto& c) -> auto& { return c.policy_path; }));
    add("paths.records", string_field("records CSV for report", [](auto& c) -> auto& { return c.records_path; }));

    add("data.classes", size_field("number of classes", [](auto& c) -> auto& { return c.data.num_classes; }));
    add("data.channels", size_field("image channels", [](auto& c) -> auto& { return c.data.channels; }));
    add("data.image_size", size_field("image side length", [](auto& c) -> auto& { return c.data.image_size; }));
    add("data.per_class", size_field("samples generated per class", [](auto& c) -> auto& { return c.data.per_class; }));
    add("data.margin", real_field("class-mean to boundary distance in units of data.std", [](auto& c) -> auto& { return c.data.margin; }));
    add("data.std", real_field("per-pixel noise of the generator", [](auto& c) -> auto& { return c.data.data_std; }));
    add("data.cert_count", size_field("size of the certification split", [](auto& c) -> auto& { return c.data.cert_count; }));
    add("data.eval_count", size_field("size of the evaluation split", [](auto& c) -> auto& { return c.data.eval_count; }));

    add("model.channels", list_field("conv block widths; every second block has stride 2", [](auto& c) -> auto& { return c.model.channels; }));
    add("model.global_pool", bool_field("average-pool before the classifier", [](auto& c) -> auto& { return c.model.global_pool; }));

    add("train.lr", real_field("learning rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
    add("train.momentum", real_field("SGD momentum", [](auto& c) -> auto& { return c.train.momentum; }));
    add("train.weight_decay", real_field("weight decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
    add("train.epochs", size_field("training epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    add("train.batch_size", size_field("mini-batch size", [](auto& c) -> auto& { return c.train.batch_size; }));
    add("train.sigma", real_field("Gaussian augmentation std", [](auto& c) -> auto& { return c.train.noise_sigma; }));

    add("smoothing.sigma", real_field("smoothing noise std", [](auto& c) -> auto& { return c.search.sigma; }));
    add("smoothing.n0", size_field("estimation samples for full certification", [](auto& c) -> auto& { return c.search.n0; }));
    add("smoothing.n", size_field("samples for incremental certification", [](auto& c) -> auto& { return c.search.n; }));
    add("smoothing.alpha", real_field("failure probability of full certification", [](auto& c) -> auto& { return c.search.alpha; }));
    add("smoothing.alpha_zeta", real_field("failure probability of the disagreement bound", [](auto& c) -> auto& { return c.search.alpha_zeta; }));

    add("search.episodes", size_field("search episodes", [](auto& c) -> auto& { return c.search.episodes; }));
    add("search.n1", size_field("fine-tuning samples per episode", [](auto& c) -> auto& { return c.search.n1; }));
    add("search.budget", u64_field("BitOPs budget, 0 to use search.budget_bits", [](auto& c) -> auto& { return c.search.budget; }));
    add("search.budget_bits", int_field("uniform bit-width whose cost is the default budget", [](auto& c) -> auto& { return c.budget_bits; }));
    add("search.bit_min", int_field("smallest bit-width", [](auto& c) -> auto& { return c.search.bit_min; }));
    add("search.bit_max", int_field("largest bit-width", [](auto& c) -> auto& { return c.search.bit_max; }));
    add("search.pin_ends", bool_field("keep first and last quantizable layers at 8 bits", [](auto& c) -> auto& { return c.search.pin_ends; }));
    add("search.finetune_lr", real_field("fine-tuning learning rate", [](auto& c) -> auto& { return c.search.finetune_lr; }));
    add("search.finetune_momentum", real_field("fine-tuning momentum", [](auto& c) -> auto& { return c.search.finetune_momentum; }));
    add("search.finetune_weight_decay", real_field("fine-tuning weight decay", [](auto& c) -> auto& { return c.search.finetune_weight_decay; }));
    add("search.finetune_batch", size_field("fine-tuning mini-batch size", [](auto& c) -> auto& { return c.search.finetune_batch; }));
    add("search.calib_samples", size_field("clip calibration samples", [](auto& c) -> auto& { return c.search.calib_samples; }));
    add("search.recalibrate", bool_field("recalibrate clips after fine-tuning", [](auto& c) -> auto& { return c.search.recalibrate; }));
    add("search.irs_fallback", bool_field("fully re-certify inputs the incremental pass abstains on", [](auto& c) -> auto& { return c.search.irs_fallback; }));
    add("search.reward_radius", real_field("radius used by reward acc_at_r", [](auto& c) -> auto& { return c.search.reward_radius; }));
    r.emplace_back("search.reward", Field{"reward mode: acr, val, acc, acc_at_r, acr_plus_acc",
        [](RunConfig& c, const std::string&, const std::string& v) { c.search.reward = search::parse_reward_mode(v); },
        [](const RunConfig& c) { return search::to_string(c.search.reward); }});

    add("agent.actor_lr", real_field("actor ADAM learning rate", [](auto& c) -> auto& { return c.search.agent.actor_lr; }));
    add("agent.critic_lr", real_field("critic ADAM learning rate", [](auto& c) -> auto& { return c.search.agent.critic_lr; }));
    add("agent.tau", real_field("target network soft-update rate", [](auto& c) -> auto& { return c.search.agent.tau; }));
    add("agent.gamma", real_field("discount", [](auto& c) -> auto& { return c.search.agent.gamma; }));
    add("agent.batch_size", size_field("replay mini-batch size", [](auto& c) -> auto& { return c.search.agent.batch_size; }));
    add("agent.warmup", size_field("episodes of random actions before updates", [](auto& c) -> auto& { return c.search.agent.warmup_episodes; }));
    add("agent.capacity", size_field("replay buffer capacity", [](auto& c) -> auto& { return c.search.agent.capacity; }));
    add("agent.explore_std", real_field("initial exploration std", [](auto& c) -> auto& { return c.search.agent.explore_std; }));
    add("agent.explore_decay", real_field("per-episode exploration decay", [](auto& c) -> auto& { return c.search.agent.explore_decay; }));
    add("agent.hidden", list_field("actor and critic hidden widths", [](auto& c) -> auto& { return c.search.agent.hidden; }));
    // clang-format on
    return r;
  }();
  return reg;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : registry()) {
    if (k == key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

void RunConfig::sync() {
  data.seed = seed;
  train.seed = seed;
  search.seed = seed;
  search.threads = threads;
  model.input_shape = {data.channels, data.image_size, data.image_size};
  model.num_classes = data.num_classes;
}

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = [] {
    std::vector<KeyInfo> out;
    for (const auto& [k, f] : registry()) out.push_back({k, f.description});
    return out;
  }();
  return keys;
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, key, trim(value));
}

std::string get_value(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

void apply_assignment(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set_value(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void read_config(std::istream& is, RunConfig& cfg, const std::string& source) {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value");
      const std::string name = trim(line.substr(0, eq));
      const std::string key = name.find('.') != std::string::npos || section.empty() ? name : section + "." + name;
      set_value(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  RunConfig cfg;
  read_config(is, cfg, path.string());
  return cfg;
}

void write_config(std::ostream& os, const RunConfig& cfg) {
  std::string section;
  for (const auto& [k, f] : registry()) {
    const auto dot = k.find('.');
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << k.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
}

void apply_environment(RunConfig& cfg) {
  if (const char* s = std::getenv("ARQ_SEED"); s && *s) set_value(cfg, "run.seed", s);
}

}  // namespace arq::config
