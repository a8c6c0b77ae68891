#pragma once

#include <map>
#include <string>
#include <vector>

#include "ddia/attack.hpp"
#include "ddia/localizer.hpp"

namespace ddia {

// Declarative `[section]` / `key = value` text configuration. Comments start
// with '#' or ';'. Section and key names are case-sensitive.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  double get_num(const std::string& section, const std::string& key, double fallback) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
};

ConfigFile parse_config_text(const std::string& text);
ConfigFile load_config(const std::string& path);
std::string config_to_text(const ConfigFile& cfg);

// Applies a `section.key=value` command-line override.
void apply_override(ConfigFile& cfg, const std::string& spec);

// Fully-typed run settings assembled from a ConfigFile (missing keys fall back
// to defaults). Throws ConfigError naming the offending section.key.
struct RunConfig {
  std::string case_path = "data/ieee14.m";
  std::string out_dir = "out";
  AttackConfig attack;
  int n_normal = 200;
  int n_attacked = 200;
  LocalizerConfig model;
  TrainHyper train;
  uint64_t data_seed = 11;
  uint64_t model_seed = 21;
  uint64_t eval_seed = 31;
  int folds = 5;

  ConfigFile to_config() const;
};

RunConfig run_config_from(const ConfigFile& cfg);

// Manifest = effective config text plus seeds and version stamps; written next
// to every artifact so a run can be reproduced from the directory alone.
void write_manifest(const std::string& dir, const RunConfig& rc,
                    const std::map<std::string, std::string>& extra_runinfo = {});

}  // namespace ddia
