#pragma once

#include <cstdint>
#include <vector>

#include "evopose/skeleton.hpp"

namespace evopose {

// Synthetic posture family on the default 17-joint layout. A cluster fixes
// one arm state and one leg state, both applied symmetrically; samples add
// per-bone angular noise, a random yaw and a random subject scale.
enum class ArmState : int { Down = 0, Forward = 1, Up = 2, Side = 3 };
enum class LegState : int { Stand = 0, Step = 1, Bent = 2, Side = 3 };

inline constexpr int kArmStates = 4;
inline constexpr int kLegStates = 4;
inline constexpr int kClusterCount = kArmStates * kLegStates;

inline constexpr int cluster_id(ArmState a, LegState l) { return static_cast<int>(a) * kLegStates + static_cast<int>(l); }
inline constexpr ArmState cluster_arm(int c) { return static_cast<ArmState>(c / kLegStates); }
inline constexpr LegState cluster_leg(int c) { return static_cast<LegState>(c % kLegStates); }

// Clusters with arm + leg even / odd; every individual arm or leg state
// occurs in both halves, only the combinations differ.
std::vector<int> even_clusters();
std::vector<int> odd_clusters();

struct SynthConfig {
  std::size_t count = 100;
  std::uint64_t rng_seed = 0;
  std::vector<int> clusters;        // empty = all clusters
  double angle_noise = 0.15;        // radians, per limb bone
  double torso_noise = 0.05;        // radians, per torso bone
  double yaw_range = 0.7853981633974483;  // yaw drawn uniformly in [-range, range]
  double scale_min = 0.9;
  double scale_max = 1.1;
};

struct SynthSample {
  Pose pose;
  int cluster = 0;
};

// Requires the default joint layout (h36m()).
std::vector<SynthSample> synthesize(const KinematicTree& tree, const SynthConfig& config);
std::vector<Pose> synthesize_poses(const KinematicTree& tree, const SynthConfig& config);

}  // namespace evopose
