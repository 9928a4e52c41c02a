#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "evopose/skeleton.hpp"
#include "evopose/validity.hpp"

namespace evopose {

struct EvolutionConfig {
  int generations = 1;
  double noise_sigma = 0.2;                 // radians, orientation mutation
  std::size_t pairs_per_generation = 1000;  // parent pairs sampled per generation
  double mutation_probability = 0.5;        // per child and per mutation kind
  double global_orientation_sigma = 0.3;    // radians, yaw about the vertical axis
  double tilt_sigma = 0.05;                 // radians, the two small tilts
  double length_sigma = 0.05;               // std of the bone length factor
  double length_clip_min = 0.7;
  double length_clip_max = 1.3;
  std::uint64_t rng_seed = 0;
  std::size_t max_population = 0;  // stop once the population reaches this size; 0 = no cap

  // Throws InvalidConfig.
  void validate() const;
};

enum class Origin : std::uint8_t { Seed = 0, Crossover = 1, Mutation = 2 };

inline constexpr std::uint32_t kNoParent = std::numeric_limits<std::uint32_t>::max();

struct Provenance {
  std::uint32_t generation = 0;
  Origin origin = Origin::Seed;
  std::uint32_t parent_a = kNoParent;
  std::uint32_t parent_b = kNoParent;

  bool operator==(const Provenance&) const = default;
};

struct Population {
  std::vector<Pose> poses;
  std::vector<Provenance> provenance;

  static Population from_seed(std::vector<Pose> seed);
  std::size_t size() const noexcept { return poses.size(); }
  bool empty() const noexcept { return poses.empty(); }
};

// Bone-subtree exchange at joint q: children take the bones whose parent
// joint is q or an offspring of q from the other parent.
std::pair<Pose, Pose> crossover(const Pose& parent_a, const Pose& parent_b, int joint_q,
                                const KinematicTree& tree);

// Adds (g_theta, g_phi) to one bone's local spherical angles.
Pose mutate_orientation(const Pose& pose, const KinematicTree& tree, int bone, double g_theta,
                        double g_phi);

// Ry(yaw) * Rx(tilt_x) * Rz(tilt_z); y is the vertical axis.
Mat3 global_rotation(const Vec3& angles);
Pose rotate_about_root(const Pose& pose, const Mat3& rotation);
// angles = (yaw, tilt_x, tilt_z).
Pose mutate_global(const Pose& pose, const Vec3& angles);

// Scales bone b and its mirror counterpart by `factor`; throws
// FactorOutOfRange outside [clip_min, clip_max].
Pose mutate_length(const Pose& pose, const KinematicTree& tree, int bone, double factor,
                   double clip_min = 0.7, double clip_max = 1.3);

std::vector<Pose> natural_selection(std::span<const Pose> candidates, const ValidityModel& model,
                                    const KinematicTree& tree);

struct GenerationStats {
  int generation = 0;
  std::size_t candidates = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t population = 0;
};

struct EvolutionObserver {
  // Called for every surviving child, in append order.
  std::function<void(const Pose&, const Provenance&)> on_survivor;
  std::function<void(const GenerationStats&)> on_generation;
};

// Runs the generation loop. Deterministic given config.rng_seed.
Population evolve(const Population& seed, const EvolutionConfig& config, const ValidityModel& model,
                  const KinematicTree& tree, const EvolutionObserver& observer = {});

}  // namespace evopose
