#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace evopose {

struct EvolutionConfig;
struct PairConfig;
struct Intrinsics;
struct LearnerConfig;
struct TrainConfig;
struct GridShape;

// Flat "key = value" text with '#' comments. Doubles are written with 17
// significant digits so a file round-trips every value exactly.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_text() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::vector<std::string> keys() const;
  const std::string& get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, int value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, bool value);

  // Copies every entry of `other` over this one.
  void merge(const KeyValueConfig& other);

  bool operator==(const KeyValueConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

std::string format_double(double value);

// Struct <-> key-value conversions. Readers start from `base`, override the
// keys present and validate the result (InvalidConfig on failure).
void write_config(KeyValueConfig& kv, const EvolutionConfig& c);
void write_config(KeyValueConfig& kv, const PairConfig& c);
void write_config(KeyValueConfig& kv, const Intrinsics& c);
void write_config(KeyValueConfig& kv, const LearnerConfig& c);
void write_config(KeyValueConfig& kv, const TrainConfig& c);
void write_config(KeyValueConfig& kv, const GridShape& c);

EvolutionConfig read_evolution_config(const KeyValueConfig& kv, const EvolutionConfig& base);
PairConfig read_pair_config(const KeyValueConfig& kv, const PairConfig& base);
Intrinsics read_intrinsics(const KeyValueConfig& kv, const Intrinsics& base);
LearnerConfig read_learner_config(const KeyValueConfig& kv, const LearnerConfig& base);
TrainConfig read_train_config(const KeyValueConfig& kv, const TrainConfig& base);
GridShape read_grid_shape(const KeyValueConfig& kv, const GridShape& base);

}  // namespace evopose
