#include "evopose/evolve.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "evopose/error.hpp"

namespace evopose {

void EvolutionConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (generations < 1) fail("generations must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be >= 0");
  if (!(mutation_probability >= 0.0 && mutation_probability <= 1.0)) fail("mutation_probability must lie in [0, 1]");
  if (!(global_orientation_sigma >= 0.0) || !std::isfinite(global_orientation_sigma)) fail("global_orientation_sigma must be >= 0");
  if (!(tilt_sigma >= 0.0) || !std::isfinite(tilt_sigma)) fail("tilt_sigma must be >= 0");
  if (!(length_sigma >= 0.0) || !std::isfinite(length_sigma)) fail("length_sigma must be >= 0");
  if (!(length_clip_min > 0.0 && length_clip_min < length_clip_max) || !std::isfinite(length_clip_max)) {
    fail("length clip must satisfy 0 < min < max");
  }
}

Population Population::from_seed(std::vector<Pose> seed) {
  Population pop;
  pop.provenance.assign(seed.size(), Provenance{});
  pop.poses = std::move(seed);
  return pop;
}

std::pair<Pose, Pose> crossover(const Pose& parent_a, const Pose& parent_b, int joint_q,
                                const KinematicTree& tree) {
  if (joint_q < 0 || joint_q >= tree.joint_count()) {
    throw Error(ErrorCode::InvalidCrossoverPoint, "joint index out of range");
  }
  if (joint_q == tree.root()) {
    throw Error(ErrorCode::InvalidCrossoverPoint, "crossover at the root swaps whole skeletons");
  }
  BoneSet a = bones_of(parent_a, tree);
  BoneSet b = bones_of(parent_b, tree);
  for (int bone : tree.subtree_bones(joint_q)) {
    a.col(bone).swap(b.col(bone));
  }
  // a now holds S_chosen(B) + S_rem(A) and b the complement.
  return {forward_kinematics(b, tree), forward_kinematics(a, tree)};
}

Pose mutate_orientation(const Pose& pose, const KinematicTree& tree, int bone, double g_theta,
                        double g_phi) {
  if (bone < 0 || bone >= tree.bone_count()) throw Error(ErrorCode::InvalidInput, "bone index out of range");
  if (!std::isfinite(g_theta) || !std::isfinite(g_phi)) throw Error(ErrorCode::InvalidInput, "non-finite noise");
  const SphericalBone current = local_spherical(pose, tree)[static_cast<std::size_t>(bone)];
  const auto [theta, phi] = canonical_angles(current.theta + g_theta, current.phi + g_phi);
  return set_bone_orientation(pose, tree, bone, theta, phi);
}

Mat3 global_rotation(const Vec3& angles) {
  return (Eigen::AngleAxisd(angles.x(), Vec3::UnitY()) * Eigen::AngleAxisd(angles.y(), Vec3::UnitX()) *
          Eigen::AngleAxisd(angles.z(), Vec3::UnitZ()))
      .toRotationMatrix();
}

Pose rotate_about_root(const Pose& pose, const Mat3& rotation) {
  Pose out{rotation * pose.joints};
  snap_to_lattice(out.joints);
  return out;
}

Pose mutate_global(const Pose& pose, const Vec3& angles) {
  if (!angles.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite rotation angles");
  if (angles.isZero(0.0)) return pose;
  return rotate_about_root(pose, global_rotation(angles));
}

Pose mutate_length(const Pose& pose, const KinematicTree& tree, int bone, double factor,
                   double clip_min, double clip_max) {
  if (bone < 0 || bone >= tree.bone_count()) throw Error(ErrorCode::InvalidInput, "bone index out of range");
  if (!(factor >= clip_min && factor <= clip_max)) {
    throw Error(ErrorCode::FactorOutOfRange, "length factor " + std::to_string(factor) + " outside [" +
                                                 std::to_string(clip_min) + ", " + std::to_string(clip_max) + "]");
  }
  BoneSet bones = bones_of(pose, tree);
  bones.col(bone) *= factor;
  const int mirror = tree.mirror_bone(bone);
  if (mirror != bone) bones.col(mirror) *= factor;
  return forward_kinematics(bones, tree);
}

std::vector<Pose> natural_selection(std::span<const Pose> candidates, const ValidityModel& model,
                                    const KinematicTree& tree) {
  std::vector<Pose> out;
  for (const Pose& p : candidates) {
    if (model.accepts(p, tree)) out.push_back(p);
  }
  return out;
}

Population evolve(const Population& seed, const EvolutionConfig& config, const ValidityModel& model,
                  const KinematicTree& tree, const EvolutionObserver& observer) {
  if (seed.empty()) throw Error(ErrorCode::EmptyPopulation, "seed population is empty");
  config.validate();
  if (model.bone_count() != tree.bone_count()) throw Error(ErrorCode::ShapeMismatch, "validity model does not match tree");

  Population pop = seed;
  if (pop.provenance.size() != pop.poses.size()) pop.provenance.assign(pop.poses.size(), Provenance{});

  std::vector<int> crossover_joints;
  for (int j = 0; j < tree.joint_count(); ++j) {
    if (j != tree.root()) crossover_joints.push_back(j);
  }

  std::mt19937_64 rng(config.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_joint(0, static_cast<int>(crossover_joints.size()) - 1);
  std::uniform_int_distribution<int> pick_bone(0, tree.bone_count() - 1);
  const std::size_t cap = config.max_population;

  for (int g = 1; g <= config.generations; ++g) {
    if (cap != 0 && pop.size() >= cap) break;
    const std::size_t n = pop.size();
    std::uniform_int_distribution<std::size_t> pick_parent(0, n - 1);
    GenerationStats stats;
    stats.generation = g;
    std::vector<Pose> survivors;
    std::vector<Provenance> survivor_tags;

    for (std::size_t k = 0; k < config.pairs_per_generation; ++k) {
      if (cap != 0 && n + survivors.size() >= cap) break;
      const std::size_t ia = pick_parent(rng);
      const std::size_t ib = pick_parent(rng);
      const int q = crossover_joints[static_cast<std::size_t>(pick_joint(rng))];
      Pose children[2];
      try {
        auto [c, d] = crossover(pop.poses[ia], pop.poses[ib], q, tree);
        children[0] = std::move(c);
        children[1] = std::move(d);
      } catch (const Error&) {
        stats.candidates += 2;
        stats.rejected += 2;
        continue;
      }
      for (Pose& child : children) {
        if (cap != 0 && n + survivors.size() >= cap) break;
        ++stats.candidates;
        const bool do_orient = unit(rng) < config.mutation_probability;
        const int orient_bone = pick_bone(rng);
        const double g_theta = config.noise_sigma * normal(rng);
        const double g_phi = config.noise_sigma * normal(rng);
        const bool do_global = unit(rng) < config.mutation_probability;
        const Vec3 angles(config.global_orientation_sigma * normal(rng), config.tilt_sigma * normal(rng),
                          config.tilt_sigma * normal(rng));
        const bool do_length = unit(rng) < config.mutation_probability;
        const int length_bone = pick_bone(rng);
        const double factor =
            std::clamp(1.0 + config.length_sigma * normal(rng), config.length_clip_min, config.length_clip_max);

        Provenance tag{static_cast<std::uint32_t>(g), Origin::Crossover, static_cast<std::uint32_t>(ia),
                       static_cast<std::uint32_t>(ib)};
        try {
          if (do_orient) child = mutate_orientation(child, tree, orient_bone, g_theta, g_phi);
          if (do_global) child = mutate_global(child, angles);
          if (do_length) {
            child = mutate_length(child, tree, length_bone, factor, config.length_clip_min, config.length_clip_max);
          }
        } catch (const Error&) {
          ++stats.rejected;
          continue;
        }
        if (do_orient || do_global || do_length) tag.origin = Origin::Mutation;
        if (!model.accepts(child, tree)) {
          ++stats.rejected;
          continue;
        }
        survivors.push_back(std::move(child));
        survivor_tags.push_back(tag);
      }
    }

    stats.accepted = survivors.size();
    for (std::size_t i = 0; i < survivors.size(); ++i) {
      if (observer.on_survivor) observer.on_survivor(survivors[i], survivor_tags[i]);
      pop.poses.push_back(std::move(survivors[i]));
      pop.provenance.push_back(survivor_tags[i]);
    }
    stats.population = pop.size();
    if (observer.on_generation) observer.on_generation(stats);
  }
  return pop;
}

}  // namespace evopose
