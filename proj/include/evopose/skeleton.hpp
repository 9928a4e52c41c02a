#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace evopose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Column j holds joint j (mm); column b of a BoneSet holds bone b.
using Joints = Eigen::Matrix3Xd;
using BoneSet = Eigen::Matrix3Xd;

// Bones shorter than this (mm) count as degenerate.
inline constexpr double kMinBoneLength = 1.0;

// Joint coordinates live on a dyadic lattice of this spacing (mm). On the
// lattice, parent + bone and child - parent are exact in double precision for
// coordinates below 2^16 mm, so bone extraction and forward kinematics invert
// each other bit-for-bit.
inline constexpr double kLatticeScale = 68719476736.0;  // 2^36

double snap_to_lattice(double value) noexcept;
void snap_to_lattice(Joints& joints) noexcept;

enum class LimbClass : std::uint8_t { UpperLimb, LowerLimb, Torso };

std::string_view to_string(LimbClass limb) noexcept;

// Constant vectors used by the local-frame construction.
struct FrameConvention {
  Vec3 reference{0.0, 0.0, 1.0};  // the constant `a` of the parent-chain frame
  Vec3 fallback{0.0, 1.0, 0.0};   // replaces `a` when the cross product degenerates
  Vec3 vertical{0.0, -1.0, 0.0};  // up direction for root-attached bones (y points down)
};

// Semantic joints the torso-based frames are built from.
struct Landmarks {
  int left_shoulder = -1;
  int right_shoulder = -1;
  int left_hip = -1;
  int right_hip = -1;
  int spine = -1;
  int thorax = -1;
};

struct JointSpec {
  std::string name;
  int parent = -1;                      // -1 for the root
  LimbClass limb = LimbClass::Torso;    // class of the bone ending at this joint
  int mirror = -1;                      // left/right counterpart, -1 if unpaired
  Vec3 rest = Vec3::Zero();             // rest-pose position, root-relative mm
};

// Rooted joint tree. Bones are indexed in canonical order: sorted by child
// joint index, so bone b ends at the b-th non-root joint.
class KinematicTree {
 public:
  KinematicTree(std::vector<JointSpec> joints, Landmarks landmarks,
                FrameConvention convention = {});

  // Standard Human3.6M 17-joint layout with the pelvis ("Hip") as root.
  static const KinematicTree& h36m();

  static KinematicTree parse(std::string_view text);
  static KinematicTree load(const std::filesystem::path& path);
  std::string to_text() const;

  int joint_count() const noexcept { return static_cast<int>(joints_.size()); }
  int bone_count() const noexcept { return joint_count() - 1; }
  int root() const noexcept { return root_; }

  const JointSpec& joint(int j) const { return joints_.at(static_cast<std::size_t>(j)); }
  const std::string& joint_name(int j) const { return joint(j).name; }
  int joint_index(std::string_view name) const noexcept;  // -1 when unknown
  int parent_of(int j) const { return joint(j).parent; }

  int bone_child(int b) const { return bone_child_.at(static_cast<std::size_t>(b)); }
  int bone_parent_joint(int b) const { return parent_of(bone_child(b)); }
  int bone_ending_at(int j) const { return bone_of_joint_.at(static_cast<std::size_t>(j)); }
  // M(i): the bone whose child joint is bone b's parent joint, -1 if none.
  int parent_bone(int b) const { return bone_ending_at(bone_parent_joint(b)); }
  LimbClass limb_class(int b) const { return joint(bone_child(b)).limb; }
  // Left/right counterpart of bone b; b itself for unpaired bones.
  int mirror_bone(int b) const;

  // True if `j` is a strict descendant of `ancestor`.
  bool is_offspring(int j, int ancestor) const;
  // Bones whose parent joint is `q` or an offspring of `q`.
  std::vector<int> subtree_bones(int q) const;
  // Bones that are descendants of bone b (excluding b).
  std::vector<int> descendant_bones(int b) const;

  // Non-root-attached bones ordered so that every joint a frame reads is
  // final before the frame is evaluated.
  const std::vector<int>& frame_order() const noexcept { return frame_order_; }
  // Root-attached bones followed by frame_order().
  const std::vector<int>& evaluation_order() const noexcept { return evaluation_order_; }
  // Joints with every parent listed before its children, root first.
  const std::vector<int>& joint_order() const noexcept { return joint_order_; }

  const Landmarks& landmarks() const noexcept { return landmarks_; }
  const FrameConvention& convention() const noexcept { return convention_; }

  Joints rest_joints() const;

  bool operator==(const KinematicTree& other) const { return to_text() == other.to_text(); }

 private:
  std::vector<int> frame_joint_dependencies(int b) const;
  void build();

  std::vector<JointSpec> joints_;
  Landmarks landmarks_;
  FrameConvention convention_;
  int root_ = -1;
  std::vector<int> bone_child_;
  std::vector<int> bone_of_joint_;
  std::vector<int> frame_order_;
  std::vector<int> evaluation_order_;
  std::vector<int> joint_order_;
};

// Root-relative joint positions in millimetres.
struct Pose {
  Joints joints;

  int joint_count() const noexcept { return static_cast<int>(joints.cols()); }
  Vec3 joint(int j) const { return joints.col(j); }
  bool operator==(const Pose& other) const {
    return joints.cols() == other.joints.cols() && joints == other.joints;
  }
};

Pose rest_pose(const KinematicTree& tree);

// Throws unless the pose matches the tree, is finite, has its root exactly at
// the origin and no bone of length <= kMinBoneLength.
void check_pose(const Pose& pose, const KinematicTree& tree);

BoneSet bones_of(const Pose& pose, const KinematicTree& tree);
Pose forward_kinematics(const BoneSet& bones, const KinematicTree& tree);

// R = [i, j, k] in columns.
struct LocalFrame {
  Mat3 basis = Mat3::Identity();
};

// Orthonormal frame from Gram-Schmidt over (v1, v2, v1 x v2). Throws
// DegenerateFrame when the inputs are (near) collinear.
LocalFrame gram_schmidt(const Vec3& v1, const Vec3& v2);
bool nearly_collinear(const Vec3& v1, const Vec3& v2) noexcept;

std::vector<LocalFrame> local_frames(const Pose& pose, const KinematicTree& tree);
std::vector<LocalFrame> local_frames(const Pose& pose, const KinematicTree& tree,
                                     const FrameConvention& convention);
LocalFrame local_frame(int bone, const Pose& pose, const KinematicTree& tree);
LocalFrame local_frame(int bone, const Pose& pose, const KinematicTree& tree,
                       const Vec3& reference);

inline Vec3 to_local(const Vec3& bone, const LocalFrame& frame) {
  return frame.basis.transpose() * bone;
}
inline Vec3 to_global(const Vec3& local, const LocalFrame& frame) { return frame.basis * local; }

struct SphericalBone {
  double r = 0.0;
  double theta = 0.0;  // polar angle from the local k axis, [0, pi]
  double phi = 0.0;    // azimuth atan2(j, i), (-pi, pi]
};

SphericalBone to_spherical(const Vec3& v);
Vec3 from_spherical(const SphericalBone& s);

// Maps arbitrary (theta, phi) onto the canonical ranges describing the same
// direction; phi is 0 at the poles.
std::pair<double, double> canonical_angles(double theta, double phi) noexcept;

// Per-bone (r, theta, phi) in canonical bone order.
std::vector<SphericalBone> local_spherical(const Pose& pose, const KinematicTree& tree);

// Sets bone b's local orientation, keeping its length. Descendant bones keep
// their local spherical coordinates; all other joints are copied unchanged.
Pose set_bone_orientation(const Pose& pose, const KinematicTree& tree, int bone, double theta,
                          double phi);

}  // namespace evopose
