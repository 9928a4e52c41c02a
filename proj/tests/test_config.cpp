#include <doctest.h>

#include "evopose/camera.hpp"
#include "evopose/config.hpp"
#include "evopose/error.hpp"
#include "evopose/evolve.hpp"
#include "evopose/regressor.hpp"
#include "evopose/validity.hpp"
#include "test_support.hpp"

using namespace evopose;
using evopose::testing::error_code_of;

TEST_CASE("key-value text parsing") {
  const KeyValueConfig kv = KeyValueConfig::parse(
      "# comment line\n"
      "  generations = 7   \n"
      "\n"
      "noise_sigma=0.125 # trailing comment\n"
      "name = hello world\n"
      "flag = yes\n");
  CHECK(kv.get_int("generations", 0) == 7);
  CHECK(kv.get_double("noise_sigma", 0) == 0.125);
  CHECK(kv.get_string("name", "") == "hello world");
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_int("missing", 42) == 42);
  CHECK(kv.keys() == std::vector<std::string>{"flag", "generations", "name", "noise_sigma"});

  CHECK(error_code_of([] { KeyValueConfig::parse("no equals sign\n"); }) == ErrorCode::InvalidConfig);
  CHECK(error_code_of([] { KeyValueConfig::parse("x = abc\n").get_int("x", 0); }) == ErrorCode::InvalidConfig);
  CHECK(error_code_of([] { KeyValueConfig::parse("x = 1.5\n").get_int("x", 0); }) == ErrorCode::InvalidConfig);
  CHECK(error_code_of([] { KeyValueConfig::parse("x = maybe\n").get_bool("x", false); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("doubles round-trip exactly through text") {
  KeyValueConfig kv;
  const double values[] = {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 1145.0};
  for (int i = 0; i < 5; ++i) kv.set("v" + std::to_string(i), values[i]);
  const KeyValueConfig back = KeyValueConfig::parse(kv.to_text());
  for (int i = 0; i < 5; ++i) CHECK(back.get_double("v" + std::to_string(i), 0) == values[i]);
  CHECK(back == kv);
}

TEST_CASE("merge overrides existing keys") {
  KeyValueConfig a = KeyValueConfig::parse("x = 1\ny = 2\n");
  a.merge(KeyValueConfig::parse("y = 3\nz = 4\n"));
  CHECK(a.get_int("x", 0) == 1);
  CHECK(a.get_int("y", 0) == 3);
  CHECK(a.get_int("z", 0) == 4);
}

TEST_CASE("struct configs round-trip") {
  EvolutionConfig e;
  e.generations = 4;
  e.noise_sigma = 0.31;
  e.rng_seed = 18446744073709551557ull;
  e.max_population = 12345;
  KeyValueConfig kv;
  write_config(kv, e);
  const EvolutionConfig e2 = read_evolution_config(KeyValueConfig::parse(kv.to_text()), EvolutionConfig{});
  CHECK(e2.generations == 4);
  CHECK(e2.noise_sigma == 0.31);
  CHECK(e2.rng_seed == e.rng_seed);
  CHECK(e2.max_population == 12345);
  CHECK(e2.tilt_sigma == e.tilt_sigma);

  Intrinsics K;
  K.fx = 999.5;
  K.height = 720;
  KeyValueConfig kk;
  write_config(kk, K);
  CHECK(read_intrinsics(kk, Intrinsics{}) == K);

  LearnerConfig lc;
  lc.width = 128;
  lc.blocks = 2;
  KeyValueConfig kl;
  write_config(kl, lc);
  CHECK(read_learner_config(kl, LearnerConfig{}) == lc);

  TrainConfig tc;
  tc.stages = 2;
  tc.concat_prediction = true;
  tc.learning_rate = 3e-4;
  KeyValueConfig kt;
  write_config(kt, tc);
  const TrainConfig tc2 = read_train_config(kt, TrainConfig{});
  CHECK(tc2.stages == 2);
  CHECK(tc2.concat_prediction);
  CHECK(tc2.learning_rate == 3e-4);

  PairConfig pc;
  pc.depth_min = 2500;
  pc.lateral_fraction = 0.5;
  KeyValueConfig kp;
  write_config(kp, pc);
  const PairConfig pc2 = read_pair_config(kp, PairConfig{});
  CHECK(pc2.depth_min == 2500);
  CHECK(pc2.lateral_fraction == 0.5);

  GridShape g{18, 36, 2};
  KeyValueConfig kg;
  write_config(kg, g);
  const GridShape g2 = read_grid_shape(kg, GridShape{});
  CHECK(g2.theta_bins == 18);
  CHECK(g2.phi_bins == 36);
  CHECK(g2.dilation == 2);
}

TEST_CASE("readers keep the base for absent keys and validate the result") {
  EvolutionConfig base;
  base.generations = 9;
  const EvolutionConfig e = read_evolution_config(KeyValueConfig::parse("noise_sigma = 0.4\n"), base);
  CHECK(e.generations == 9);
  CHECK(e.noise_sigma == 0.4);
  CHECK(error_code_of([] { read_evolution_config(KeyValueConfig::parse("generations = 0\n"), {}); }) ==
        ErrorCode::InvalidConfig);
  CHECK(error_code_of([] { read_train_config(KeyValueConfig::parse("learning_rate = -1\n"), {}); }) ==
        ErrorCode::InvalidConfig);
  CHECK(error_code_of([] { read_intrinsics(KeyValueConfig::parse("fx = 0\n"), {}); }) == ErrorCode::InvalidConfig);
  CHECK(error_code_of([] { read_grid_shape(KeyValueConfig::parse("dilation = -1\n"), {}); }) ==
        ErrorCode::InvalidConfig);
}

TEST_CASE("config files on disk") {
  testing::TempDir dir;
  KeyValueConfig kv;
  kv.set("alpha", 0.5);
  kv.set("beta", 3);
  kv.set("gamma", true);
  kv.save(dir / "c.txt");
  CHECK(KeyValueConfig::load(dir / "c.txt") == kv);
  CHECK(error_code_of([&] { KeyValueConfig::load(dir / "none.txt"); }) == ErrorCode::IoError);
}
