#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "moco/phantom.hpp"
#include "moco/reg_iterative.hpp"
#include "moco/reg_learned.hpp"

namespace moco {

// Flat INI-style run configuration: `[section]` headers, `key = value` lines,
// `#` comments. A `schema_version` key is required before the first section.
// Every known key has a built-in default, so a parsed config is always
// complete; unknown sections or keys are rejected by name.
struct RunConfig {
  int schema_version = 1;
  std::map<std::string, std::map<std::string, std::string>> sections;

  const std::string& get(const std::string& section, const std::string& key) const;
  double get_real(const std::string& section, const std::string& key) const;
  int get_int(const std::string& section, const std::string& key) const;
  bool get_flag(const std::string& section, const std::string& key) const;
  std::vector<double> get_list(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
};

// All defaults, no overrides.
RunConfig default_config();

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Serialized effective config (defaults merged with overrides); save_config is
// the "echo to output directory" path.
std::string config_text(const RunConfig& config);
void save_config(const RunConfig& config, const std::filesystem::path& path);

// Section-to-module adapters.
PhantomConfig phantom_config_from(const RunConfig& config);
IterativeConfig iterative_config_from(const RunConfig& config);
TrainConfig train_config_from(const RunConfig& config);
ConvNetSpec net_spec_from(const RunConfig& config, int stage);

}  // namespace moco
