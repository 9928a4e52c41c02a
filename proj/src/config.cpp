#include "evopose/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "evopose/camera.hpp"
#include "evopose/error.hpp"
#include "evopose/evolve.hpp"
#include "evopose/regressor.hpp"
#include "evopose/validity.hpp"

namespace evopose {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* type) {
  throw Error(ErrorCode::InvalidConfig, "key '" + key + "': '" + value + "' is not a valid " + type);
}

}  // namespace

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": empty key");
    kv.values_[key] = trim(std::string_view(stripped).substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << to_text();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string KeyValueConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> KeyValueConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& kv : values_) out.push_back(kv.first);
  return out;
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::InvalidConfig, "missing key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "number");
  }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "integer");
  return out;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "unsigned integer");
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "boolean");
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=#\n") != std::string::npos) {
    throw Error(ErrorCode::InvalidConfig, "invalid key '" + key + "'");
  }
  if (value.find_first_of("#\n") != std::string::npos) {
    throw Error(ErrorCode::InvalidConfig, "value for '" + key + "' contains '#' or a newline");
  }
  values_[key] = trim(value);
}

void KeyValueConfig::set(const std::string& key, double value) { set(key, format_double(value)); }
void KeyValueConfig::set(const std::string& key, int value) { set(key, std::to_string(value)); }
void KeyValueConfig::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }
void KeyValueConfig::set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

void write_config(KeyValueConfig& kv, const EvolutionConfig& c) {
  kv.set("generations", c.generations);
  kv.set("noise_sigma", c.noise_sigma);
  kv.set("pairs_per_generation", static_cast<std::uint64_t>(c.pairs_per_generation));
  kv.set("mutation_probability", c.mutation_probability);
  kv.set("global_orientation_sigma", c.global_orientation_sigma);
  kv.set("tilt_sigma", c.tilt_sigma);
  kv.set("length_sigma", c.length_sigma);
  kv.set("length_clip_min", c.length_clip_min);
  kv.set("length_clip_max", c.length_clip_max);
  kv.set("rng_seed", c.rng_seed);
  kv.set("max_population", static_cast<std::uint64_t>(c.max_population));
}

EvolutionConfig read_evolution_config(const KeyValueConfig& kv, const EvolutionConfig& base) {
  EvolutionConfig c = base;
  c.generations = kv.get_int("generations", c.generations);
  c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
  c.pairs_per_generation = kv.get_u64("pairs_per_generation", c.pairs_per_generation);
  c.mutation_probability = kv.get_double("mutation_probability", c.mutation_probability);
  c.global_orientation_sigma = kv.get_double("global_orientation_sigma", c.global_orientation_sigma);
  c.tilt_sigma = kv.get_double("tilt_sigma", c.tilt_sigma);
  c.length_sigma = kv.get_double("length_sigma", c.length_sigma);
  c.length_clip_min = kv.get_double("length_clip_min", c.length_clip_min);
  c.length_clip_max = kv.get_double("length_clip_max", c.length_clip_max);
  c.rng_seed = kv.get_u64("rng_seed", c.rng_seed);
  c.max_population = kv.get_u64("max_population", c.max_population);
  c.validate();
  return c;
}

void write_config(KeyValueConfig& kv, const PairConfig& c) {
  kv.set("depth_min", c.depth_min);
  kv.set("depth_max", c.depth_max);
  kv.set("lateral_fraction", c.lateral_fraction);
  kv.set("max_attempts", c.max_attempts);
  kv.set("rng_seed", c.rng_seed);
}

PairConfig read_pair_config(const KeyValueConfig& kv, const PairConfig& base) {
  PairConfig c = base;
  c.depth_min = kv.get_double("depth_min", c.depth_min);
  c.depth_max = kv.get_double("depth_max", c.depth_max);
  c.lateral_fraction = kv.get_double("lateral_fraction", c.lateral_fraction);
  c.max_attempts = kv.get_int("max_attempts", c.max_attempts);
  c.rng_seed = kv.get_u64("rng_seed", c.rng_seed);
  c.validate();
  return c;
}

void write_config(KeyValueConfig& kv, const Intrinsics& c) {
  kv.set("fx", c.fx);
  kv.set("fy", c.fy);
  kv.set("cx", c.cx);
  kv.set("cy", c.cy);
  kv.set("width", c.width);
  kv.set("height", c.height);
}

Intrinsics read_intrinsics(const KeyValueConfig& kv, const Intrinsics& base) {
  Intrinsics c = base;
  c.fx = kv.get_double("fx", c.fx);
  c.fy = kv.get_double("fy", c.fy);
  c.cx = kv.get_double("cx", c.cx);
  c.cy = kv.get_double("cy", c.cy);
  c.width = kv.get_int("width", c.width);
  c.height = kv.get_int("height", c.height);
  c.validate();
  return c;
}

void write_config(KeyValueConfig& kv, const LearnerConfig& c) {
  kv.set("width", c.width);
  kv.set("blocks", c.blocks);
  kv.set("dropout", c.dropout);
  kv.set("input_dim", c.input_dim);
  kv.set("output_dim", c.output_dim);
  kv.set("bn_momentum", c.bn_momentum);
  kv.set("bn_eps", c.bn_eps);
}

LearnerConfig read_learner_config(const KeyValueConfig& kv, const LearnerConfig& base) {
  LearnerConfig c = base;
  c.width = kv.get_int("width", c.width);
  c.blocks = kv.get_int("blocks", c.blocks);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.input_dim = kv.get_int("input_dim", c.input_dim);
  c.output_dim = kv.get_int("output_dim", c.output_dim);
  c.bn_momentum = kv.get_double("bn_momentum", c.bn_momentum);
  c.bn_eps = kv.get_double("bn_eps", c.bn_eps);
  c.validate();
  return c;
}

void write_config(KeyValueConfig& kv, const TrainConfig& c) {
  kv.set("learning_rate", c.learning_rate);
  kv.set("epochs", c.epochs);
  kv.set("batch_size", c.batch_size);
  kv.set("beta1", c.beta1);
  kv.set("beta2", c.beta2);
  kv.set("adam_eps", c.adam_eps);
  kv.set("rng_seed", c.rng_seed);
  kv.set("stages", c.stages);
  kv.set("concat_prediction", c.concat_prediction);
}

TrainConfig read_train_config(const KeyValueConfig& kv, const TrainConfig& base) {
  TrainConfig c = base;
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.rng_seed = kv.get_u64("rng_seed", c.rng_seed);
  c.stages = kv.get_int("stages", c.stages);
  c.concat_prediction = kv.get_bool("concat_prediction", c.concat_prediction);
  c.validate();
  return c;
}

void write_config(KeyValueConfig& kv, const GridShape& c) {
  kv.set("theta_bins", c.theta_bins);
  kv.set("phi_bins", c.phi_bins);
  kv.set("dilation", c.dilation);
}

GridShape read_grid_shape(const KeyValueConfig& kv, const GridShape& base) {
  GridShape c = base;
  c.theta_bins = kv.get_int("theta_bins", c.theta_bins);
  c.phi_bins = kv.get_int("phi_bins", c.phi_bins);
  c.dilation = kv.get_int("dilation", c.dilation);
  if (c.theta_bins < 4 || c.phi_bins < 4) throw Error(ErrorCode::InvalidConfig, "validity grids need at least 4 bins per axis");
  if (c.dilation < 0) throw Error(ErrorCode::InvalidConfig, "dilation must be >= 0");
  return c;
}

}  // namespace evopose
