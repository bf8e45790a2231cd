#include "semicon/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "semicon/hashing.hpp"

namespace semicon {

void ModelConfig::validate() const {
  if (input_channels == 0) throw ConfigError("input_channels must be positive");
  if (input_size < 8 || input_size % 4) throw ConfigError("input_size must be a multiple of 4 and >= 8");
  if (extractor_channels == 0 || feature_channels == 0) throw ConfigError("channel counts must be positive");
  stages.validate();
  icon.validate(feature_channels);
  code_layout(bits, stages.stages);
}

void TrainConfig::validate() const {
  if (!(beta >= 0) || !(gamma >= 0) || beta + gamma == 0) {
    throw ConfigError("beta and gamma must be non-negative and not both zero");
  }
  if (iterations == 0 || epochs == 0) throw ConfigError("iterations and epochs must be positive");
  if (sample_size == 0 || batch_size == 0) throw ConfigError("sample_size and batch_size must be positive");
  if (!(lr > 0) || momentum < 0 || weight_decay < 0) throw ConfigError("invalid optimizer settings");
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  if (data.height != model.input_size || data.width != model.input_size) {
    throw ConfigError("dataset extents must equal model input_size");
  }
  if (data.channels != model.input_channels) throw ConfigError("dataset channels must equal input_channels");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (...) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("expected a real number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::map<std::string, Field> fields(RunConfig& c) {
  std::map<std::string, Field> f;
  auto size_field = [&](const char* key, std::size_t& ref) {
    f[key] = {[&ref](const std::string& v) { ref = parse_size(v); }, [&ref] { return std::to_string(ref); }};
  };
  auto u64_field = [&](const char* key, std::uint64_t& ref) {
    f[key] = {[&ref](const std::string& v) { ref = parse_size(v); }, [&ref] { return std::to_string(ref); }};
  };
  auto real_field = [&](const char* key, double& ref) {
    f[key] = {[&ref](const std::string& v) { ref = parse_real(v); }, [&ref] { return fmt_double(ref); }};
  };
  auto bool_field = [&](const char* key, bool& ref) {
    f[key] = {[&ref](const std::string& v) { ref = parse_bool(v); }, [&ref] { return std::string(ref ? "true" : "false"); }};
  };
  size_field("classes", c.data.classes);
  size_field("samples_per_class", c.data.samples_per_class);
  size_field("parts_per_class", c.data.parts_per_class);
  real_field("part_amplitude", c.data.part_amplitude);
  real_field("noise_sigma", c.data.noise_sigma);
  u64_field("data_seed", c.data.seed);

  size_field("input_channels", c.model.input_channels);
  size_field("input_size", c.model.input_size);
  size_field("extractor_channels", c.model.extractor_channels);
  size_field("feature_channels", c.model.feature_channels);
  size_field("bits", c.model.bits);
  size_field("stages", c.model.stages.stages);
  real_field("alpha", c.model.stages.alpha);
  real_field("std_floor", c.model.stages.std_floor);
  bool_field("sem", c.model.stages.suppress);
  size_field("icon_portions", c.model.icon.portions);
  real_field("icon_delta", c.model.icon.delta);
  bool_field("group_projection", c.model.icon.group_projection);
  bool_field("icon", c.model.icon_enabled);

  real_field("beta", c.train.beta);
  real_field("gamma", c.train.gamma);
  size_field("iterations", c.train.iterations);
  size_field("epochs", c.train.epochs);
  size_field("sample_size", c.train.sample_size);
  size_field("batch_size", c.train.batch_size);
  real_field("lr", c.train.lr);
  real_field("momentum", c.train.momentum);
  real_field("weight_decay", c.train.weight_decay);
  bool_field("soft_constraint", c.train.soft_constraint);
  u64_field("seed", c.seed);
  return f;
}

void sync_derived(RunConfig& c) {
  c.data.channels = c.model.input_channels;
  c.data.height = c.data.width = c.model.input_size;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  auto f = fields(cfg);
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = f.find(key);
    if (it == f.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second.set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  sync_derived(cfg);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::ostringstream os;
  for (const auto& [key, field] : fields(copy)) os << key << " = " << field.get() << '\n';
  return os.str();
}

}  // namespace semicon
