#include "ddia/config.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddia/io.hpp"

namespace ddia {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_num(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(section + "." + key + ": expected a number, got '" + v + "'");
  }
}

}  // namespace

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto s = sections.find(section);
  return s != sections.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  auto s = sections.find(section);
  if (s == sections.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

double ConfigFile::get_num(const std::string& section, const std::string& key,
                           double fallback) const {
  if (!has(section, key)) return fallback;
  return parse_num(section, key, get(section, key, ""));
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  sections[section][key] = value;
}

ConfigFile parse_config_text(const std::string& text) {
  ConfigFile cfg;
  std::stringstream ss(text);
  std::string line, section = "run";
  int ln = 0;
  while (std::getline(ss, line)) {
    ++ln;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ParseError(ln, "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw ParseError(ln, "empty section name");
      cfg.sections[section];
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(ln, "expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ParseError(ln, "empty key");
    cfg.sections[section][key] = value;
  }
  return cfg;
}

ConfigFile load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_to_text(const ConfigFile& cfg) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [name, kv] : cfg.sections) {
    if (!first) os << "\n";
    first = false;
    os << "[" << name << "]\n";
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  }
  return os.str();
}

void apply_override(ConfigFile& cfg, const std::string& spec) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like section.key=value, got '" + spec + "'");
  std::string lhs = trim(spec.substr(0, eq));
  std::string value = trim(spec.substr(eq + 1));
  size_t dot = lhs.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 >= lhs.size())
    throw ConfigError("override must look like section.key=value, got '" + spec + "'");
  cfg.set(lhs.substr(0, dot), lhs.substr(dot + 1), value);
}

RunConfig run_config_from(const ConfigFile& cfg) {
  RunConfig rc;
  rc.case_path = cfg.get("run", "case", rc.case_path);
  if (const char* env = std::getenv("DDIA_OUT_DIR")) rc.out_dir = env;
  rc.out_dir = cfg.get("run", "out_dir", rc.out_dir);
  rc.folds = static_cast<int>(cfg.get_num("run", "folds", rc.folds));
  if (rc.folds < 2) throw ConfigError("run.folds: must be at least 2");

  std::string intensity = cfg.get("attack", "intensity", "medium");
  if (intensity == "weak") rc.attack.set_intensity(Intensity::Weak);
  else if (intensity == "medium") rc.attack.set_intensity(Intensity::Medium);
  else if (intensity == "strong") rc.attack.set_intensity(Intensity::Strong);
  else throw ConfigError("attack.intensity: expected weak|medium|strong, got '" + intensity + "'");
  rc.attack.delta = cfg.get_num("attack", "delta", rc.attack.delta);
  rc.attack.sigma_overload = cfg.get_num("attack", "sigma_overload", rc.attack.sigma_overload);
  rc.attack.pool_size = static_cast<int>(cfg.get_num("attack", "pool_size", rc.attack.pool_size));
  rc.attack.integrity = cfg.get_num("attack", "integrity", rc.attack.integrity);
  rc.attack.noise_ratio = cfg.get_num("attack", "noise_ratio", rc.attack.noise_ratio);
  rc.attack.drift_margin = cfg.get_num("attack", "drift_margin", rc.attack.drift_margin);
  rc.attack.lp_rounds = static_cast<int>(cfg.get_num("attack", "lp_rounds", rc.attack.lp_rounds));
  rc.attack.window_T = static_cast<int>(cfg.get_num("attack", "window_T", rc.attack.window_T));
  rc.attack.seed = static_cast<uint64_t>(cfg.get_num("attack", "seed", rc.attack.seed));
  for (const std::string& tok : split_list(cfg.get("attack", "region", "")))
    rc.attack.region_buses.push_back(static_cast<int>(parse_num("attack", "region", tok)));
  try {
    rc.attack.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("attack: ") + e.what());
  }

  rc.n_normal = static_cast<int>(cfg.get_num("dataset", "normal", rc.n_normal));
  rc.n_attacked = static_cast<int>(cfg.get_num("dataset", "attacked", rc.n_attacked));
  if (rc.n_normal < 0 || rc.n_attacked < 0)
    throw ConfigError("dataset.normal/attacked: must be non-negative");
  rc.data_seed = static_cast<uint64_t>(cfg.get_num("dataset", "seed", rc.data_seed));

  rc.model.T = rc.attack.window_T;
  rc.model.kernel = static_cast<int>(cfg.get_num("model", "kernel", rc.model.kernel));
  rc.model.hidden = static_cast<int>(cfg.get_num("model", "hidden", rc.model.hidden));
  rc.model.scale = cfg.get_num("model", "scale", rc.model.scale);
  rc.model.cheb_order = static_cast<int>(cfg.get_num("model", "cheb_order", rc.model.cheb_order));
  rc.model.tau = cfg.get_num("model", "tau", rc.model.tau);
  rc.model.dropout = cfg.get_num("model", "dropout", rc.model.dropout);
  rc.model.n_blocks = static_cast<int>(cfg.get_num("model", "blocks", rc.model.n_blocks));
  std::string gate = cfg.get("model", "gate", rc.model.tanh_gate ? "tanh" : "sigmoid");
  if (gate == "tanh") rc.model.tanh_gate = true;
  else if (gate == "sigmoid") rc.model.tanh_gate = false;
  else throw ConfigError("model.gate: expected tanh|sigmoid, got '" + gate + "'");
  rc.model.structure = cfg.get("model", "structure", rc.model.structure);
  std::string dil = cfg.get("model", "dilations", "");
  if (!dil.empty()) {
    rc.model.dilations.clear();
    for (const std::string& tok : split_list(dil))
      rc.model.dilations.push_back(static_cast<int>(parse_num("model", "dilations", tok)));
    if (rc.model.dilations.empty()) throw ConfigError("model.dilations: empty list");
  }
  rc.model_seed = static_cast<uint64_t>(cfg.get_num("model", "seed", rc.model_seed));

  rc.train.epochs = static_cast<int>(cfg.get_num("train", "epochs", rc.train.epochs));
  rc.train.batch = static_cast<int>(cfg.get_num("train", "batch", rc.train.batch));
  rc.train.lr = cfg.get_num("train", "lr", rc.train.lr);
  rc.train.seed = static_cast<uint64_t>(cfg.get_num("train", "seed", rc.train.seed));
  if (rc.train.epochs < 0) throw ConfigError("train.epochs: must be non-negative");
  if (rc.train.batch < 1) throw ConfigError("train.batch: must be positive");

  rc.eval_seed = static_cast<uint64_t>(cfg.get_num("eval", "seed", rc.eval_seed));
  return rc;
}

namespace {

std::string num(double v) { return format_double(v); }

}  // namespace

ConfigFile RunConfig::to_config() const {
  ConfigFile cfg;
  cfg.set("run", "case", case_path);
  cfg.set("run", "out_dir", out_dir);
  cfg.set("run", "folds", num(folds));
  cfg.set("attack", "intensity", attack.intensity == Intensity::Weak     ? "weak"
                                 : attack.intensity == Intensity::Strong ? "strong"
                                                                         : "medium");
  cfg.set("attack", "delta", num(attack.delta));
  cfg.set("attack", "sigma_overload", num(attack.sigma_overload));
  cfg.set("attack", "pool_size", num(attack.pool_size));
  cfg.set("attack", "integrity", num(attack.integrity));
  cfg.set("attack", "noise_ratio", num(attack.noise_ratio));
  cfg.set("attack", "drift_margin", num(attack.drift_margin));
  cfg.set("attack", "lp_rounds", num(attack.lp_rounds));
  cfg.set("attack", "window_T", num(attack.window_T));
  cfg.set("attack", "seed", num(static_cast<double>(attack.seed)));
  if (!attack.region_buses.empty()) {
    std::string list;
    for (size_t i = 0; i < attack.region_buses.size(); ++i) {
      if (i) list += ",";
      list += std::to_string(attack.region_buses[i]);
    }
    cfg.set("attack", "region", list);
  }
  cfg.set("dataset", "normal", num(n_normal));
  cfg.set("dataset", "attacked", num(n_attacked));
  cfg.set("dataset", "seed", num(static_cast<double>(data_seed)));
  cfg.set("model", "kernel", num(model.kernel));
  cfg.set("model", "hidden", num(model.hidden));
  cfg.set("model", "scale", num(model.scale));
  cfg.set("model", "cheb_order", num(model.cheb_order));
  cfg.set("model", "tau", num(model.tau));
  cfg.set("model", "dropout", num(model.dropout));
  cfg.set("model", "blocks", num(model.n_blocks));
  cfg.set("model", "gate", model.tanh_gate ? "tanh" : "sigmoid");
  cfg.set("model", "structure", model.structure);
  {
    std::string list;
    for (size_t i = 0; i < model.dilations.size(); ++i) {
      if (i) list += ",";
      list += std::to_string(model.dilations[i]);
    }
    cfg.set("model", "dilations", list);
  }
  cfg.set("model", "seed", num(static_cast<double>(model_seed)));
  cfg.set("train", "epochs", num(train.epochs));
  cfg.set("train", "batch", num(train.batch));
  cfg.set("train", "lr", num(train.lr));
  cfg.set("train", "seed", num(static_cast<double>(train.seed)));
  cfg.set("eval", "seed", num(static_cast<double>(eval_seed)));
  return cfg;
}

void write_manifest(const std::string& dir, const RunConfig& rc,
                    const std::map<std::string, std::string>& extra_runinfo) {
  std::filesystem::create_directories(dir);
  ConfigFile cfg = rc.to_config();
  cfg.set("versions", "tool", kToolVersion);
  cfg.set("versions", "dataset_format", "1");
  cfg.set("versions", "checkpoint_format", "1");
  cfg.set("versions", "eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION));
  cfg.set("seeds", "attack", num(static_cast<double>(rc.attack.seed)));
  cfg.set("seeds", "dataset", num(static_cast<double>(rc.data_seed)));
  cfg.set("seeds", "model", num(static_cast<double>(rc.model_seed)));
  cfg.set("seeds", "train", num(static_cast<double>(rc.train.seed)));
  cfg.set("seeds", "eval", num(static_cast<double>(rc.eval_seed)));
  for (const auto& [k, v] : extra_runinfo) cfg.set("runinfo", k, v);
  std::ofstream os(dir + "/manifest.ini", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + dir);
  os << config_to_text(cfg);
}

}  // namespace ddia
