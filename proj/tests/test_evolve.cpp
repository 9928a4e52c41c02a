#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "evopose/error.hpp"
#include "evopose/evolve.hpp"
#include "evopose/synth.hpp"
#include "test_support.hpp"

using namespace evopose;
using evopose::testing::error_code_of;
using evopose::testing::random_pose;

namespace {

constexpr double kPi = std::numbers::pi;

const char* kChain4 = R"(format KTREE1
joint 0 root - - - 0 0 0
joint 1 A 0 torso - 0 100 0
joint 2 B 1 torso - 0 100 50
joint 3 C 2 torso - 0 120 60
landmark left_shoulder 1
landmark right_shoulder 2
landmark left_hip 1
landmark right_hip 2
landmark spine 0
landmark thorax 1
)";

// Bones whose parent joint is q or lies below q, found by walking the parent
// table upwards from each bone's start joint.
std::set<int> brute_subtree(const KinematicTree& tree, int q) {
  std::set<int> out;
  for (int j = 0; j < tree.joint_count(); ++j) {
    if (tree.parent_of(j) < 0) continue;
    for (int a = tree.parent_of(j); a >= 0; a = tree.parent_of(a)) {
      if (a == q) {
        out.insert(j - 1);
        break;
      }
    }
  }
  return out;
}

std::vector<Pose> seed_poses(std::size_t n, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.count = n;
  cfg.rng_seed = seed;
  return synthesize_poses(KinematicTree::h36m(), cfg);
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

bool same_vec(const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return (a - b).cwiseAbs().maxCoeff() == 0.0; }

}  // namespace

// Child C takes the chosen subtree from A and the rest from B; D the reverse.
TEST_CASE("crossover on a four-joint chain at the second joint swaps the last two bones") {
  const KinematicTree chain = KinematicTree::parse(kChain4);
  REQUIRE(chain.bone_count() == 3);
  Pose a{chain.rest_joints()};
  Pose b{chain.rest_joints()};
  b.joints.col(1) = Vec3(10, 90, 5);
  b.joints.col(2) = Vec3(-20, 170, 60);
  b.joints.col(3) = Vec3(-40, 300, 20);
  const auto [c, d] = crossover(a, b, 1, chain);
  const BoneSet ba = bones_of(a, chain), bb = bones_of(b, chain);
  const BoneSet bc = bones_of(c, chain), bd = bones_of(d, chain);
  CHECK(brute_subtree(chain, 1) == std::set<int>{1, 2});
  CHECK(same_vec(bc.col(0), bb.col(0)));
  CHECK(same_vec(bc.col(1), ba.col(1)));
  CHECK(same_vec(bc.col(2), ba.col(2)));
  CHECK(same_vec(bd.col(0), ba.col(0)));
  CHECK(same_vec(bd.col(1), bb.col(1)));
  CHECK(same_vec(bd.col(2), bb.col(2)));
}

TEST_CASE("crossover at the right shoulder exchanges exactly the right arm") {
  const KinematicTree& tree = KinematicTree::h36m();
  std::mt19937_64 rng(11);
  const Pose a = random_pose(tree, rng), b = random_pose(tree, rng);
  const int q = tree.joint_index("RShoulder");
  const auto [c, d] = crossover(a, b, q, tree);
  const std::set<int> swapped = brute_subtree(tree, q);
  CHECK(swapped == std::set<int>{tree.bone_ending_at(tree.joint_index("RElbow")),
                                 tree.bone_ending_at(tree.joint_index("RWrist"))});
  const BoneSet ba = bones_of(a, tree), bb = bones_of(b, tree);
  const BoneSet bc = bones_of(c, tree), bd = bones_of(d, tree);
  for (int bone = 0; bone < tree.bone_count(); ++bone) {
    const bool sw = swapped.count(bone) > 0;
    CHECK(same_vec(bc.col(bone), sw ? ba.col(bone) : bb.col(bone)));
    CHECK(same_vec(bd.col(bone), sw ? bb.col(bone) : ba.col(bone)));
  }
  for (int j = 0; j < tree.joint_count(); ++j) {
    const bool in_arm = j == tree.joint_index("RElbow") || j == tree.joint_index("RWrist");
    if (!in_arm) {
      CHECK(same_vec(c.joints.col(j), b.joints.col(j)));
      CHECK(same_vec(d.joints.col(j), a.joints.col(j)));
    }
  }
}

TEST_CASE("crossover conserves the multiset of bone vectors") {
  const KinematicTree& tree = KinematicTree::h36m();
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> pick(1, tree.joint_count() - 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const Pose a = random_pose(tree, rng), b = random_pose(tree, rng);
    const int q = pick(rng);
    const auto [c, d] = crossover(a, b, q, tree);
    const BoneSet ba = bones_of(a, tree), bb = bones_of(b, tree);
    const BoneSet bc = bones_of(c, tree), bd = bones_of(d, tree);
    for (int bone = 0; bone < tree.bone_count(); ++bone) {
      const bool straight = same_vec(bc.col(bone), ba.col(bone)) && same_vec(bd.col(bone), bb.col(bone));
      const bool crossed = same_vec(bc.col(bone), bb.col(bone)) && same_vec(bd.col(bone), ba.col(bone));
      REQUIRE((straight || crossed));
    }
  }
}

TEST_CASE("self crossover is the identity and the root is not a crossover point") {
  const KinematicTree& tree = KinematicTree::h36m();
  std::mt19937_64 rng(13);
  const Pose a = random_pose(tree, rng);
  for (int q = 1; q < tree.joint_count(); ++q) {
    const auto [c, d] = crossover(a, a, q, tree);
    CHECK(c == a);
    CHECK(d == a);
  }
  CHECK(error_code_of([&] { crossover(a, a, tree.root(), tree); }) == ErrorCode::InvalidCrossoverPoint);
  CHECK(error_code_of([&] { crossover(a, a, 99, tree); }) == ErrorCode::InvalidCrossoverPoint);
}

TEST_CASE("orientation mutation") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(20, 1);

  SUBCASE("zero noise leaves the pose unchanged") {
    for (const Pose& p : seed) {
      for (int bone = 0; bone < tree.bone_count(); ++bone) {
        REQUIRE(max_abs(mutate_orientation(p, tree, bone, 0.0, 0.0).joints - p.joints) < 1e-9);
      }
    }
  }

  SUBCASE("the left shin moves only the left foot") {
    const int foot = tree.joint_index("LFoot");
    const int shin = tree.bone_ending_at(foot);
    for (const Pose& p : seed) {
      const Pose m = mutate_orientation(p, tree, shin, 0.2, -0.3);
      for (int j = 0; j < tree.joint_count(); ++j) {
        if (j != foot) REQUIRE(same_vec(m.joints.col(j), p.joints.col(j)));
      }
      REQUIRE((m.joints.col(foot) - p.joints.col(foot)).norm() > 1.0);
    }
  }

  SUBCASE("read-back angles equal the perturbed angles and descendants keep their local angles") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 0.2);
    std::uniform_int_distribution<int> pick(0, tree.bone_count() - 1);
    for (int trial = 0; trial < 300; ++trial) {
      const Pose& p = seed[static_cast<std::size_t>(trial) % seed.size()];
      const int bone = pick(rng);
      const double gt = n(rng), gp = n(rng);
      const auto before = local_spherical(p, tree);
      Pose m;
      try {
        m = mutate_orientation(p, tree, bone, gt, gp);
      } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::DegenerateFrame);
        continue;
      }
      const auto after = local_spherical(m, tree);
      double theta = before[bone].theta + gt;
      double phi = before[bone].phi + gp;
      if (theta < 0) {
        theta = -theta;
        phi += kPi;
      } else if (theta > kPi) {
        theta = 2 * kPi - theta;
        phi += kPi;
      }
      const Vec3 want = from_spherical({1.0, theta, phi});
      const Vec3 got = from_spherical({1.0, after[bone].theta, after[bone].phi});
      REQUIRE((want - got).norm() < 1e-9);
      REQUIRE(std::abs(after[bone].r - before[bone].r) < 1e-9);
      for (int d : tree.descendant_bones(bone)) {
        const Vec3 w = from_spherical(before[d]);
        const Vec3 g = from_spherical(after[d]);
        REQUIRE((w - g).norm() < 1e-8);
      }
    }
  }
}

TEST_CASE("global mutation") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(10, 3);

  SUBCASE("zero rotation is the identity") {
    for (const Pose& p : seed) CHECK(mutate_global(p, Vec3::Zero()) == p);
  }

  SUBCASE("two half turns about the vertical return the pose") {
    for (const Pose& p : seed) {
      const Pose twice = mutate_global(mutate_global(p, Vec3(kPi, 0, 0)), Vec3(kPi, 0, 0));
      CHECK(max_abs(twice.joints - p.joints) < 1e-9);
    }
  }

  SUBCASE("rotation composition order and rigidity") {
    const Vec3 angles(0.4, -0.1, 0.07);
    const Mat3 want = Eigen::AngleAxisd(0.4, Vec3::UnitY()).toRotationMatrix() *
                      Eigen::AngleAxisd(-0.1, Vec3::UnitX()).toRotationMatrix() *
                      Eigen::AngleAxisd(0.07, Vec3::UnitZ()).toRotationMatrix();
    CHECK(max_abs(global_rotation(angles) - want) < 1e-15);
    for (const Pose& p : seed) {
      const Pose r = mutate_global(p, angles);
      CHECK(r.joints.col(tree.root()).norm() == 0.0);
      for (int i = 0; i < tree.joint_count(); ++i) {
        for (int j = i + 1; j < tree.joint_count(); ++j) {
          const double d0 = (p.joints.col(i) - p.joints.col(j)).norm();
          const double d1 = (r.joints.col(i) - r.joints.col(j)).norm();
          REQUIRE(std::abs(d0 - d1) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("length mutation") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(10, 4);
  const int r_femur = tree.bone_ending_at(tree.joint_index("RKnee"));
  const int l_femur = tree.bone_ending_at(tree.joint_index("LKnee"));

  SUBCASE("factor one is the identity") {
    for (const Pose& p : seed) CHECK(mutate_length(p, tree, r_femur, 1.0) == p);
  }

  SUBCASE("both femurs stretch and every local orientation is kept") {
    for (const Pose& p : seed) {
      const Pose m = mutate_length(p, tree, r_femur, 1.1);
      const BoneSet b0 = bones_of(p, tree), b1 = bones_of(m, tree);
      for (int b = 0; b < tree.bone_count(); ++b) {
        const double ratio = b1.col(b).norm() / b0.col(b).norm();
        const double want = (b == r_femur || b == l_femur) ? 1.1 : 1.0;
        REQUIRE(std::abs(ratio - want) < 1e-12);
      }
      const auto s0 = local_spherical(p, tree), s1 = local_spherical(m, tree);
      for (int b = 0; b < tree.bone_count(); ++b) {
        const Vec3 u0 = from_spherical({1.0, s0[b].theta, s0[b].phi});
        const Vec3 u1 = from_spherical({1.0, s1[b].theta, s1[b].phi});
        REQUIRE((u0 - u1).norm() < 1e-9);
      }
    }
  }

  SUBCASE("factors outside the clip range are refused") {
    CHECK(error_code_of([&] { mutate_length(seed[0], tree, r_femur, 2.0); }) == ErrorCode::FactorOutOfRange);
    CHECK(error_code_of([&] { mutate_length(seed[0], tree, r_femur, 0.5); }) == ErrorCode::FactorOutOfRange);
  }
}

TEST_CASE("natural selection") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(30, 5);
  const ValidityModel model = ValidityModel::fit(seed, tree);
  CHECK(natural_selection(seed, model, tree) == seed);
  CHECK(natural_selection(std::vector<Pose>{}, model, tree).empty());

  std::vector<Pose> mixed(seed.begin(), seed.begin() + 5);
  Pose bad = seed[0];
  bad.joints.col(tree.joint_index("LWrist")) = bad.joints.col(tree.joint_index("LElbow"));
  mixed.insert(mixed.begin() + 2, bad);
  const std::vector<Pose> kept = natural_selection(mixed, model, tree);
  CHECK(kept == std::vector<Pose>(seed.begin(), seed.begin() + 5));
}

TEST_CASE("evolution of a single pose without mutation reproduces the pose") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(1, 6);
  const ValidityModel model = ValidityModel::fit(seed, tree);
  EvolutionConfig cfg;
  cfg.generations = 1;
  cfg.pairs_per_generation = 25;
  cfg.mutation_probability = 0.0;
  const Population out = evolve(Population::from_seed(seed), cfg, model, tree);
  REQUIRE(out.size() == 51);
  for (const Pose& p : out.poses) CHECK(p == seed[0]);
  for (std::size_t i = 1; i < out.size(); ++i) {
    CHECK(out.provenance[i].origin == Origin::Crossover);
    CHECK(out.provenance[i].parent_a == 0);
  }
}

TEST_CASE("evolution invariants") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(40, 7);
  const ValidityModel model = ValidityModel::fit(seed, tree);
  EvolutionConfig cfg;
  cfg.generations = 3;
  cfg.pairs_per_generation = 60;
  cfg.rng_seed = 99;

  std::vector<GenerationStats> stats;
  std::size_t survivor_calls = 0;
  EvolutionObserver obs;
  obs.on_generation = [&](const GenerationStats& s) { stats.push_back(s); };
  obs.on_survivor = [&](const Pose&, const Provenance&) { ++survivor_calls; };
  const Population out = evolve(Population::from_seed(seed), cfg, model, tree, obs);

  REQUIRE(stats.size() == 3);
  std::size_t prev = seed.size();
  for (const GenerationStats& s : stats) {
    CHECK(s.candidates == 2 * cfg.pairs_per_generation);
    CHECK(s.accepted + s.rejected == s.candidates);
    CHECK(s.population == prev + s.accepted);
    CHECK(s.population >= prev);
    prev = s.population;
  }
  CHECK(out.size() == prev);
  CHECK(survivor_calls == out.size() - seed.size());
  CHECK(out.provenance.size() == out.size());

  for (std::size_t i = 0; i < seed.size(); ++i) CHECK(out.poses[i] == seed[i]);
  for (const Pose& p : out.poses) REQUIRE(model.accepts(p, tree));

  std::size_t start = seed.size();
  for (const GenerationStats& s : stats) {
    for (std::size_t i = start; i < s.population; ++i) {
      const Provenance& pr = out.provenance[i];
      REQUIRE(pr.generation == static_cast<std::uint32_t>(s.generation));
      REQUIRE(pr.parent_a < start);
      REQUIRE(pr.parent_b < start);
    }
    start = s.population;
  }

  const Population again = evolve(Population::from_seed(seed), cfg, model, tree);
  CHECK(again.poses == out.poses);
  CHECK(again.provenance == out.provenance);

  cfg.rng_seed = 100;
  const Population other = evolve(Population::from_seed(seed), cfg, model, tree);
  CHECK(other.poses != out.poses);
}

TEST_CASE("the population cap is met exactly") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(20, 8);
  const ValidityModel model = ValidityModel::fit(seed, tree);
  EvolutionConfig cfg;
  cfg.generations = 50;
  cfg.pairs_per_generation = 40;
  cfg.max_population = 75;
  const Population out = evolve(Population::from_seed(seed), cfg, model, tree);
  CHECK(out.size() == 75);
}

TEST_CASE("evolution input errors") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> seed = seed_poses(5, 9);
  const ValidityModel model = ValidityModel::fit(seed, tree);
  CHECK(error_code_of([&] { evolve(Population{}, EvolutionConfig{}, model, tree); }) == ErrorCode::EmptyPopulation);
  EvolutionConfig bad;
  bad.noise_sigma = -1.0;
  CHECK(error_code_of([&] { evolve(Population::from_seed(seed), bad, model, tree); }) == ErrorCode::InvalidConfig);
  bad = EvolutionConfig{};
  bad.mutation_probability = 1.5;
  CHECK(error_code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
}
