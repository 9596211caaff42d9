#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "arq/dataset.hpp"
#include "arq/network.hpp"
#include "arq/search.hpp"
#include "arq/train.hpp"

namespace arq::config {

/// Everything a CLI run can be told. Text form is `[section]` headers
/// followed by `key = value` lines; `#` starts a comment.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: all hardware threads

  data::GenConfig data;
  nn::TinyConvNetConfig model;
  nn::TrainConfig train;
  search::SearchConfig search;
  int budget_bits = 4;  // budget = cost of uniform policy at this width when search.budget is 0

  // Empty paths resolve inside the run directory.
  std::string data_dir;
  std::string model_path;
  std::string policy_path;
  std::string records_path;

  /// Propagates `seed` and `threads` into the nested configs.
  void sync();
};

struct KeyInfo {
  std::string key;  // section.name
  std::string description;
};

/// Every accepted key with its description.
const std::vector<KeyInfo>& known_keys();

/// Throws ConfigError for unknown keys or unparsable values.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& cfg, const std::string& key);

/// Parses `key=value` as given to --set.
void apply_assignment(RunConfig& cfg, const std::string& assignment);

void read_config(std::istream& is, RunConfig& cfg, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Full snapshot, one section per prefix, every key present.
void write_config(std::ostream& os, const RunConfig& cfg);

/// ARQ_SEED, when set, replaces the configured seed.
void apply_environment(RunConfig& cfg);

}  // namespace arq::config
