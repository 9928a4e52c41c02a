#include "evopose/synth.hpp"

#include <random>

#include <Eigen/Geometry>

#include "evopose/error.hpp"
#include "evopose/evolve.hpp"

namespace evopose {

namespace {

struct LimbDirections {
  Vec3 upper;
  Vec3 lower;
};

// Directions for the subject's left side (+x); the right side mirrors x.
LimbDirections arm_directions(ArmState a) {
  switch (a) {
    case ArmState::Down: return {{0.15, 1.0, 0.0}, {0.1, 0.9, -0.4}};
    case ArmState::Forward: return {{0.0, 0.1, -1.0}, {0.0, -0.5, -0.85}};
    case ArmState::Up: return {{0.2, -1.0, 0.0}, {0.1, -1.0, -0.1}};
    case ArmState::Side: return {{1.0, 0.0, 0.0}, {1.0, -0.3, -0.3}};
  }
  return {{0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}};
}

LimbDirections leg_directions(LegState l) {
  switch (l) {
    case LegState::Stand: return {{0.05, 1.0, 0.0}, {0.0, 1.0, 0.0}};
    case LegState::Step: return {{0.05, 0.85, -0.5}, {0.0, 1.0, 0.1}};
    case LegState::Bent: return {{0.3, 0.3, -0.9}, {0.0, 1.0, 0.35}};
    case LegState::Side: return {{0.5, 0.85, 0.0}, {0.4, 0.9, 0.0}};
  }
  return {{0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}};
}

Vec3 mirror_x(Vec3 v) {
  v.x() = -v.x();
  return v;
}

Vec3 jitter(const Vec3& dir, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return dir.normalized();
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 axis(n(rng), n(rng), n(rng));
  while (axis.norm() < 1e-9) axis = Vec3(n(rng), n(rng), n(rng));
  const double angle = sigma * n(rng);
  return (Eigen::AngleAxisd(angle, axis.normalized()) * dir.normalized()).normalized();
}

int require_joint(const KinematicTree& tree, const char* name) {
  const int j = tree.joint_index(name);
  if (j < 0) throw Error(ErrorCode::InvalidTree, std::string("synthetic poses need joint '") + name + "'");
  return j;
}

}  // namespace

std::vector<int> even_clusters() {
  std::vector<int> out;
  for (int c = 0; c < kClusterCount; ++c) {
    if ((static_cast<int>(cluster_arm(c)) + static_cast<int>(cluster_leg(c))) % 2 == 0) out.push_back(c);
  }
  return out;
}

std::vector<int> odd_clusters() {
  std::vector<int> out;
  for (int c = 0; c < kClusterCount; ++c) {
    if ((static_cast<int>(cluster_arm(c)) + static_cast<int>(cluster_leg(c))) % 2 == 1) out.push_back(c);
  }
  return out;
}

std::vector<SynthSample> synthesize(const KinematicTree& tree, const SynthConfig& config) {
  std::vector<int> clusters = config.clusters;
  if (clusters.empty()) {
    for (int c = 0; c < kClusterCount; ++c) clusters.push_back(c);
  }
  for (int c : clusters) {
    if (c < 0 || c >= kClusterCount) throw Error(ErrorCode::InvalidConfig, "cluster id out of range");
  }
  if (!(config.scale_min > 0.0 && config.scale_min <= config.scale_max)) {
    throw Error(ErrorCode::InvalidConfig, "scale range must satisfy 0 < min <= max");
  }

  const int l_elbow = tree.bone_ending_at(require_joint(tree, "LElbow"));
  const int l_wrist = tree.bone_ending_at(require_joint(tree, "LWrist"));
  const int r_elbow = tree.bone_ending_at(require_joint(tree, "RElbow"));
  const int r_wrist = tree.bone_ending_at(require_joint(tree, "RWrist"));
  const int l_knee = tree.bone_ending_at(require_joint(tree, "LKnee"));
  const int l_foot = tree.bone_ending_at(require_joint(tree, "LFoot"));
  const int r_knee = tree.bone_ending_at(require_joint(tree, "RKnee"));
  const int r_foot = tree.bone_ending_at(require_joint(tree, "RFoot"));

  const BoneSet rest = bones_of(rest_pose(tree), tree);
  std::mt19937_64 rng(config.rng_seed);
  std::uniform_int_distribution<std::size_t> pick_cluster(0, clusters.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<SynthSample> out;
  out.reserve(config.count);
  while (out.size() < config.count) {
    const int cluster = clusters[pick_cluster(rng)];
    const double scale = config.scale_min + (config.scale_max - config.scale_min) * unit(rng);
    const double yaw = config.yaw_range * (2.0 * unit(rng) - 1.0);

    BoneSet bones(3, tree.bone_count());
    for (int b = 0; b < tree.bone_count(); ++b) {
      bones.col(b) = scale * rest.col(b).norm() * jitter(rest.col(b), config.torso_noise, rng);
    }
    const LimbDirections arm = arm_directions(cluster_arm(cluster));
    const LimbDirections leg = leg_directions(cluster_leg(cluster));
    auto set_dir = [&](int b, const Vec3& dir) {
      bones.col(b) = scale * rest.col(b).norm() * jitter(dir, config.angle_noise, rng);
    };
    set_dir(l_elbow, arm.upper);
    set_dir(l_wrist, arm.lower);
    set_dir(r_elbow, mirror_x(arm.upper));
    set_dir(r_wrist, mirror_x(arm.lower));
    set_dir(l_knee, leg.upper);
    set_dir(l_foot, leg.lower);
    set_dir(r_knee, mirror_x(leg.upper));
    set_dir(r_foot, mirror_x(leg.lower));

    Pose pose = rotate_about_root(forward_kinematics(bones, tree), global_rotation(Vec3(yaw, 0.0, 0.0)));
    try {
      check_pose(pose, tree);
      local_frames(pose, tree);
    } catch (const Error&) {
      continue;
    }
    out.push_back({std::move(pose), cluster});
  }
  return out;
}

std::vector<Pose> synthesize_poses(const KinematicTree& tree, const SynthConfig& config) {
  std::vector<Pose> out;
  for (SynthSample& s : synthesize(tree, config)) out.push_back(std::move(s.pose));
  return out;
}

}  // namespace evopose
