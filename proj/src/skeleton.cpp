#include "evopose/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "evopose/error.hpp"

namespace evopose {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kCollinearTolerance = 1e-8;

constexpr std::string_view kDefaultTreeText = R"(# Human3.6M 17-joint layout, pelvis-rooted, camera axes (x right, y down, z forward)
format KTREE1
reference 0 0 1
fallback 0 1 0
vertical 0 -1 0
# joint <index> <name> <parent> <limb class of the bone ending here> <mirror> <rest x y z in mm>
joint 0 Hip - - - 0 0 0
joint 1 RHip 0 torso 4 -130 0 0
joint 2 RKnee 1 upper 5 -135 445 15
joint 3 RFoot 2 lower 6 -140 880 60
joint 4 LHip 0 torso 1 130 0 0
joint 5 LKnee 4 upper 2 135 445 15
joint 6 LFoot 5 lower 3 140 880 60
joint 7 Spine 0 torso - 0 -230 10
joint 8 Thorax 7 torso - 0 -480 0
joint 9 Neck/Nose 8 torso - 0 -575 -60
joint 10 Head 9 torso - 0 -700 -20
joint 11 LShoulder 8 torso 14 160 -450 10
joint 12 LElbow 11 upper 15 195 -170 30
joint 13 LWrist 12 lower 16 215 80 -20
joint 14 RShoulder 8 torso 11 -160 -450 10
joint 15 RElbow 14 upper 12 -195 -170 30
joint 16 RWrist 15 lower 13 -215 80 -20
landmark left_shoulder 11
landmark right_shoulder 14
landmark left_hip 4
landmark right_hip 1
landmark spine 7
landmark thorax 8
)";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void tree_error(const std::string& msg) { throw Error(ErrorCode::InvalidTree, msg); }

LimbClass parse_limb(const std::string& token) {
  if (token == "upper") return LimbClass::UpperLimb;
  if (token == "lower") return LimbClass::LowerLimb;
  if (token == "torso" || token == "-") return LimbClass::Torso;
  tree_error("unknown limb class '" + token + "'");
}

std::string limb_token(LimbClass limb) {
  switch (limb) {
    case LimbClass::UpperLimb: return "upper";
    case LimbClass::LowerLimb: return "lower";
    case LimbClass::Torso: return "torso";
  }
  return "torso";
}

int parse_index(const std::string& token) {
  if (token == "-") return -1;
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size()) tree_error("bad index '" + token + "'");
    return v;
  } catch (const std::logic_error&) {
    tree_error("bad index '" + token + "'");
  }
}

}  // namespace

double snap_to_lattice(double value) noexcept {
  return std::nearbyint(value * kLatticeScale) / kLatticeScale;
}

void snap_to_lattice(Joints& joints) noexcept {
  for (Eigen::Index i = 0; i < joints.size(); ++i) joints.data()[i] = snap_to_lattice(joints.data()[i]);
}

std::string_view to_string(LimbClass limb) noexcept {
  switch (limb) {
    case LimbClass::UpperLimb: return "UpperLimb";
    case LimbClass::LowerLimb: return "LowerLimb";
    case LimbClass::Torso: return "Torso";
  }
  return "Torso";
}

// ---------------------------------------------------------------- KinematicTree

KinematicTree::KinematicTree(std::vector<JointSpec> joints, Landmarks landmarks,
                             FrameConvention convention)
    : joints_(std::move(joints)), landmarks_(landmarks), convention_(convention) {
  build();
}

const KinematicTree& KinematicTree::h36m() {
  static const KinematicTree tree = parse(kDefaultTreeText);
  return tree;
}

void KinematicTree::build() {
  const int n = joint_count();
  if (n < 2) tree_error("need at least two joints");

  root_ = -1;
  for (int j = 0; j < n; ++j) {
    const int p = joints_[static_cast<std::size_t>(j)].parent;
    if (p == -1) {
      if (root_ != -1) tree_error("more than one root");
      root_ = j;
    } else if (p < 0 || p >= n || p == j) {
      tree_error("joint " + std::to_string(j) + " has invalid parent");
    }
  }
  if (root_ == -1) tree_error("no root joint");

  // Every joint must reach the root within n steps.
  for (int j = 0; j < n; ++j) {
    int cur = j;
    int steps = 0;
    while (cur != root_) {
      cur = joints_[static_cast<std::size_t>(cur)].parent;
      if (++steps > n) tree_error("cycle through joint " + std::to_string(j));
    }
  }

  bone_child_.clear();
  bone_of_joint_.assign(static_cast<std::size_t>(n), -1);
  for (int j = 0; j < n; ++j) {
    if (j == root_) continue;
    bone_of_joint_[static_cast<std::size_t>(j)] = static_cast<int>(bone_child_.size());
    bone_child_.push_back(j);
  }

  joint_order_.clear();
  joint_order_.push_back(root_);
  for (std::size_t k = 0; k < joint_order_.size(); ++k) {
    for (int j = 0; j < n; ++j) {
      if (joints_[static_cast<std::size_t>(j)].parent == joint_order_[k]) joint_order_.push_back(j);
    }
  }

  for (int j = 0; j < n; ++j) {
    const int m = joints_[static_cast<std::size_t>(j)].mirror;
    if (m == -1) continue;
    if (m < 0 || m >= n || m == j || m == root_ || j == root_) {
      tree_error("joint " + std::to_string(j) + " has invalid mirror");
    }
    if (joints_[static_cast<std::size_t>(m)].mirror != j) tree_error("mirror map is not symmetric");
  }

  const int marks[] = {landmarks_.left_shoulder, landmarks_.right_shoulder, landmarks_.left_hip,
                       landmarks_.right_hip,     landmarks_.spine,          landmarks_.thorax};
  for (int m : marks) {
    if (m < 0 || m >= n) tree_error("missing or out-of-range landmark");
  }
  if (landmarks_.left_shoulder == landmarks_.right_shoulder ||
      landmarks_.left_hip == landmarks_.right_hip || landmarks_.spine == landmarks_.thorax) {
    tree_error("landmark pairs must be distinct joints");
  }

  for (int b = 0; b < bone_count(); ++b) {
    const int parent = bone_parent_joint(b);
    switch (limb_class(b)) {
      case LimbClass::UpperLimb: {
        const bool shoulder = parent == landmarks_.left_shoulder || parent == landmarks_.right_shoulder;
        const bool hip = parent == landmarks_.left_hip || parent == landmarks_.right_hip;
        if (!shoulder && !hip) {
          tree_error("upper-limb bone " + std::to_string(b) + " must start at a shoulder or hip");
        }
        break;
      }
      case LimbClass::LowerLimb:
        if (parent_bone(b) < 0) tree_error("lower-limb bone " + std::to_string(b) + " has no parent bone");
        break;
      case LimbClass::Torso:
        break;
    }
    const int child = bone_child(b);
    for (int dep : frame_joint_dependencies(b)) {
      if (dep == child || is_offspring(dep, child)) {
        tree_error("frame of bone " + std::to_string(b) + " depends on its own subtree");
      }
    }
  }

  // Kahn ordering over non-root-attached bones; root-attached frames read
  // only joint positions and are always available first.
  const int nb = bone_count();
  std::vector<std::vector<int>> deps(static_cast<std::size_t>(nb));
  std::vector<bool> root_attached(static_cast<std::size_t>(nb));
  for (int b = 0; b < nb; ++b) {
    root_attached[static_cast<std::size_t>(b)] = bone_parent_joint(b) == root_;
    std::vector<int> joint_deps = frame_joint_dependencies(b);
    joint_deps.push_back(bone_parent_joint(b));
    for (int j : joint_deps) {
      const int d = bone_of_joint_[static_cast<std::size_t>(j)];
      if (d >= 0 && d != b && bone_parent_joint(d) != root_) deps[static_cast<std::size_t>(b)].push_back(d);
    }
  }
  frame_order_.clear();
  std::vector<bool> done(static_cast<std::size_t>(nb), false);
  for (int b = 0; b < nb; ++b) {
    if (root_attached[static_cast<std::size_t>(b)]) done[static_cast<std::size_t>(b)] = true;
  }
  bool progress = true;
  while (progress) {
    progress = false;
    for (int b = 0; b < nb; ++b) {
      if (done[static_cast<std::size_t>(b)]) continue;
      const auto& d = deps[static_cast<std::size_t>(b)];
      if (std::all_of(d.begin(), d.end(), [&](int x) { return done[static_cast<std::size_t>(x)]; })) {
        done[static_cast<std::size_t>(b)] = true;
        frame_order_.push_back(b);
        progress = true;
        break;
      }
    }
  }
  if (std::find(done.begin(), done.end(), false) != done.end()) {
    tree_error("cyclic local-frame dependencies");
  }
  evaluation_order_.clear();
  for (int b = 0; b < nb; ++b) {
    if (root_attached[static_cast<std::size_t>(b)]) evaluation_order_.push_back(b);
  }
  evaluation_order_.insert(evaluation_order_.end(), frame_order_.begin(), frame_order_.end());

  if (!joints_[static_cast<std::size_t>(root_)].rest.isZero(0.0)) tree_error("rest root must be the origin");
  for (int b = 0; b < nb; ++b) {
    const Vec3 v = joints_[static_cast<std::size_t>(bone_child(b))].rest -
                   joints_[static_cast<std::size_t>(bone_parent_joint(b))].rest;
    if (!v.allFinite() || v.norm() <= kMinBoneLength) tree_error("degenerate rest bone " + std::to_string(b));
  }
}

std::vector<int> KinematicTree::frame_joint_dependencies(int b) const {
  const int parent = bone_parent_joint(b);
  const int child = bone_child(b);
  const Landmarks& lm = landmarks_;
  if (limb_class(b) == LimbClass::UpperLimb) {
    const bool shoulder = parent == lm.left_shoulder || parent == lm.right_shoulder;
    if (shoulder) return {lm.right_shoulder, lm.left_shoulder, lm.spine, lm.thorax};
    return {lm.right_hip, lm.left_hip, lm.spine, lm.thorax};
  }
  if (parent != root_) {
    const int grand = parent_of(parent);
    return {grand, parent};
  }
  auto in_subtree = [&](int j) { return j == child || is_offspring(j, child); };
  std::vector<int> out;
  out.push_back(in_subtree(lm.right_hip) ? root_ : lm.right_hip);
  out.push_back(in_subtree(lm.left_hip) ? root_ : lm.left_hip);
  if (!in_subtree(lm.spine) && !in_subtree(lm.thorax)) {
    out.push_back(lm.spine);
    out.push_back(lm.thorax);
  }
  return out;
}

int KinematicTree::joint_index(std::string_view name) const noexcept {
  for (int j = 0; j < joint_count(); ++j) {
    if (joints_[static_cast<std::size_t>(j)].name == name) return j;
  }
  return -1;
}

int KinematicTree::mirror_bone(int b) const {
  const int m = joint(bone_child(b)).mirror;
  return m < 0 ? b : bone_ending_at(m);
}

bool KinematicTree::is_offspring(int j, int ancestor) const {
  int cur = parent_of(j);
  while (cur != -1) {
    if (cur == ancestor) return true;
    cur = parent_of(cur);
  }
  return false;
}

std::vector<int> KinematicTree::subtree_bones(int q) const {
  std::vector<int> out;
  for (int b = 0; b < bone_count(); ++b) {
    const int p = bone_parent_joint(b);
    if (p == q || is_offspring(p, q)) out.push_back(b);
  }
  return out;
}

std::vector<int> KinematicTree::descendant_bones(int b) const { return subtree_bones(bone_child(b)); }

Joints KinematicTree::rest_joints() const {
  Joints out(3, joint_count());
  for (int j = 0; j < joint_count(); ++j) out.col(j) = joints_[static_cast<std::size_t>(j)].rest;
  snap_to_lattice(out);
  return out;
}

KinematicTree KinematicTree::parse(std::string_view text) {
  std::map<int, JointSpec> by_index;
  Landmarks lm;
  FrameConvention conv;
  bool saw_format = false;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto read_vec = [&](std::istringstream& ls) {
    Vec3 v;
    if (!(ls >> v.x() >> v.y() >> v.z())) tree_error("line " + std::to_string(line_no) + ": expected 3 numbers");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "KTREE1") tree_error("unsupported tree format '" + fmt + "'");
      saw_format = true;
    } else if (key == "reference") {
      conv.reference = read_vec(ls);
    } else if (key == "fallback") {
      conv.fallback = read_vec(ls);
    } else if (key == "vertical") {
      conv.vertical = read_vec(ls);
    } else if (key == "joint") {
      std::string idx, name, parent, limb, mirror;
      if (!(ls >> idx >> name >> parent >> limb >> mirror)) {
        tree_error("line " + std::to_string(line_no) + ": malformed joint line");
      }
      JointSpec spec;
      spec.name = name;
      spec.parent = parse_index(parent);
      spec.limb = parse_limb(limb);
      spec.mirror = parse_index(mirror);
      spec.rest = read_vec(ls);
      const int j = parse_index(idx);
      if (j < 0 || !by_index.emplace(j, spec).second) tree_error("duplicate or invalid joint index");
    } else if (key == "landmark") {
      std::string which, idx;
      if (!(ls >> which >> idx)) tree_error("line " + std::to_string(line_no) + ": malformed landmark");
      const int j = parse_index(idx);
      if (which == "left_shoulder") lm.left_shoulder = j;
      else if (which == "right_shoulder") lm.right_shoulder = j;
      else if (which == "left_hip") lm.left_hip = j;
      else if (which == "right_hip") lm.right_hip = j;
      else if (which == "spine") lm.spine = j;
      else if (which == "thorax") lm.thorax = j;
      else tree_error("unknown landmark '" + which + "'");
    } else {
      tree_error("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!saw_format) tree_error("missing 'format KTREE1' line");
  std::vector<JointSpec> joints;
  for (const auto& [j, spec] : by_index) {
    if (j != static_cast<int>(joints.size())) tree_error("joint indices must be contiguous from 0");
    joints.push_back(spec);
  }
  return KinematicTree(std::move(joints), lm, conv);
}

KinematicTree KinematicTree::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open tree file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KinematicTree::to_text() const {
  std::ostringstream out;
  auto vec = [](const Vec3& v) {
    return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
  };
  out << "format KTREE1\n";
  out << "reference " << vec(convention_.reference) << "\n";
  out << "fallback " << vec(convention_.fallback) << "\n";
  out << "vertical " << vec(convention_.vertical) << "\n";
  for (int j = 0; j < joint_count(); ++j) {
    const JointSpec& s = joints_[static_cast<std::size_t>(j)];
    out << "joint " << j << " " << s.name << " " << (s.parent < 0 ? "-" : std::to_string(s.parent)) << " "
        << (s.parent < 0 ? "-" : limb_token(s.limb)) << " "
        << (s.mirror < 0 ? "-" : std::to_string(s.mirror)) << " " << vec(s.rest) << "\n";
  }
  out << "landmark left_shoulder " << landmarks_.left_shoulder << "\n";
  out << "landmark right_shoulder " << landmarks_.right_shoulder << "\n";
  out << "landmark left_hip " << landmarks_.left_hip << "\n";
  out << "landmark right_hip " << landmarks_.right_hip << "\n";
  out << "landmark spine " << landmarks_.spine << "\n";
  out << "landmark thorax " << landmarks_.thorax << "\n";
  return out.str();
}

// ------------------------------------------------------------------------ Pose

Pose rest_pose(const KinematicTree& tree) { return Pose{tree.rest_joints()}; }

void check_pose(const Pose& pose, const KinematicTree& tree) {
  if (pose.joint_count() != tree.joint_count()) {
    throw Error(ErrorCode::ShapeMismatch, "pose has " + std::to_string(pose.joint_count()) +
                                              " joints, tree has " + std::to_string(tree.joint_count()));
  }
  if (!pose.joints.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite joint coordinate");
  if (!pose.joints.col(tree.root()).isZero(0.0)) {
    throw Error(ErrorCode::InvalidInput, "root joint is not at the origin");
  }
  bones_of(pose, tree);
}

BoneSet bones_of(const Pose& pose, const KinematicTree& tree) {
  if (pose.joint_count() != tree.joint_count()) {
    throw Error(ErrorCode::ShapeMismatch, "pose/tree joint count mismatch");
  }
  BoneSet bones(3, tree.bone_count());
  for (int b = 0; b < tree.bone_count(); ++b) {
    bones.col(b) = pose.joints.col(tree.bone_child(b)) - pose.joints.col(tree.bone_parent_joint(b));
    const double len = bones.col(b).norm();
    if (!std::isfinite(len)) throw Error(ErrorCode::InvalidInput, "non-finite bone " + std::to_string(b));
    if (len <= kMinBoneLength) {
      throw Error(ErrorCode::DegeneratePose, "bone " + std::to_string(b) + " (" +
                                                 tree.joint_name(tree.bone_parent_joint(b)) + "->" +
                                                 tree.joint_name(tree.bone_child(b)) + ") is degenerate");
    }
  }
  return bones;
}

Pose forward_kinematics(const BoneSet& bones, const KinematicTree& tree) {
  if (bones.cols() != tree.bone_count()) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(tree.bone_count()) + " bones");
  }
  Pose pose{Joints::Zero(3, tree.joint_count())};
  for (int j : tree.joint_order()) {
    if (j == tree.root()) continue;
    const int b = tree.bone_ending_at(j);
    Vec3 v = bones.col(b);
    if (!v.allFinite()) throw Error(ErrorCode::InvalidBone, "non-finite bone " + std::to_string(b));
    if (v.norm() <= kMinBoneLength) throw Error(ErrorCode::InvalidBone, "zero-length bone " + std::to_string(b));
    for (int k = 0; k < 3; ++k) v[k] = snap_to_lattice(v[k]);
    pose.joints.col(j) = pose.joints.col(tree.parent_of(j)) + v;
  }
  return pose;
}

// ---------------------------------------------------------------------- frames

bool nearly_collinear(const Vec3& v1, const Vec3& v2) noexcept {
  const double n1 = v1.norm();
  const double n2 = v2.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) return true;
  return v1.cross(v2).norm() < kCollinearTolerance * n1 * n2;
}

LocalFrame gram_schmidt(const Vec3& v1, const Vec3& v2) {
  if (nearly_collinear(v1, v2)) throw Error(ErrorCode::DegenerateFrame, "collinear basis vectors");
  const Vec3 i = v1.normalized();
  const Vec3 j = (v2 - v2.dot(i) * i).normalized();
  LocalFrame frame;
  frame.basis.col(0) = i;
  frame.basis.col(1) = j;
  frame.basis.col(2) = i.cross(j);
  return frame;
}

namespace {

LocalFrame torso_frame(const Vec3& lateral, std::initializer_list<Vec3> candidates) {
  for (const Vec3& v2 : candidates) {
    if (!nearly_collinear(lateral, v2)) return gram_schmidt(lateral, v2);
  }
  throw Error(ErrorCode::DegenerateFrame, "torso reference vectors are collinear");
}

LocalFrame frame_for(int b, const Joints& j, const std::vector<LocalFrame>& frames,
                     const KinematicTree& tree, const FrameConvention& conv) {
  const Landmarks& lm = tree.landmarks();
  const int parent = tree.bone_parent_joint(b);
  const Vec3 backbone = j.col(lm.spine) - j.col(lm.thorax);

  if (tree.limb_class(b) == LimbClass::UpperLimb) {
    const bool shoulder = parent == lm.left_shoulder || parent == lm.right_shoulder;
    const Vec3 lateral = shoulder ? Vec3(j.col(lm.right_shoulder) - j.col(lm.left_shoulder))
                                  : Vec3(j.col(lm.right_hip) - j.col(lm.left_hip));
    return torso_frame(lateral, {backbone, conv.reference, conv.fallback});
  }

  const int parent_bone = tree.parent_bone(b);
  if (parent_bone >= 0) {
    const Vec3 v1 = j.col(parent) - j.col(tree.parent_of(parent));
    const Mat3& parent_basis = frames[static_cast<std::size_t>(parent_bone)].basis;
    Vec3 v2 = (parent_basis * conv.reference).cross(v1);
    if (nearly_collinear(parent_basis * conv.reference, v1)) {
      v2 = (parent_basis * conv.fallback).cross(v1);
    }
    return gram_schmidt(v1, v2);
  }

  // Root-attached bone: lateral hip line and backbone, replacing anything
  // inside this bone's own subtree.
  const int child = tree.bone_child(b);
  auto in_subtree = [&](int jj) { return jj == child || tree.is_offspring(jj, child); };
  const int right = in_subtree(lm.right_hip) ? tree.root() : lm.right_hip;
  const int left = in_subtree(lm.left_hip) ? tree.root() : lm.left_hip;
  const Vec3 lateral = j.col(right) - j.col(left);
  if (!in_subtree(lm.spine) && !in_subtree(lm.thorax)) {
    return torso_frame(lateral, {backbone, conv.reference, conv.fallback});
  }
  return torso_frame(lateral, {conv.vertical, conv.reference, conv.fallback});
}

std::vector<LocalFrame> frames_of(const Joints& joints, const KinematicTree& tree,
                                  const FrameConvention& conv) {
  std::vector<LocalFrame> frames(static_cast<std::size_t>(tree.bone_count()));
  for (int b : tree.evaluation_order()) frames[static_cast<std::size_t>(b)] = frame_for(b, joints, frames, tree, conv);
  return frames;
}

}  // namespace

std::vector<LocalFrame> local_frames(const Pose& pose, const KinematicTree& tree) {
  return local_frames(pose, tree, tree.convention());
}

std::vector<LocalFrame> local_frames(const Pose& pose, const KinematicTree& tree,
                                     const FrameConvention& convention) {
  bones_of(pose, tree);
  return frames_of(pose.joints, tree, convention);
}

LocalFrame local_frame(int bone, const Pose& pose, const KinematicTree& tree) {
  return local_frame(bone, pose, tree, tree.convention().reference);
}

LocalFrame local_frame(int bone, const Pose& pose, const KinematicTree& tree, const Vec3& reference) {
  if (bone < 0 || bone >= tree.bone_count()) throw Error(ErrorCode::InvalidInput, "bone index out of range");
  FrameConvention conv = tree.convention();
  conv.reference = reference;
  return local_frames(pose, tree, conv)[static_cast<std::size_t>(bone)];
}

// ------------------------------------------------------------------- spherical

SphericalBone to_spherical(const Vec3& v) {
  if (!v.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite vector");
  const double r = v.norm();
  if (r == 0.0) throw Error(ErrorCode::ZeroBone, "zero vector has no direction");
  const double rho = std::hypot(v.x(), v.y());
  SphericalBone s;
  s.r = r;
  s.theta = std::atan2(rho, v.z());
  s.phi = rho == 0.0 ? 0.0 : std::atan2(v.y(), v.x());
  if (s.phi <= -kPi) s.phi += 2.0 * kPi;
  return s;
}

Vec3 from_spherical(const SphericalBone& s) {
  const double st = std::sin(s.theta);
  return s.r * Vec3(st * std::cos(s.phi), st * std::sin(s.phi), std::cos(s.theta));
}

std::pair<double, double> canonical_angles(double theta, double phi) noexcept {
  theta = std::fmod(theta, 2.0 * kPi);
  if (theta < 0.0) theta += 2.0 * kPi;
  if (theta > kPi) {
    theta = 2.0 * kPi - theta;
    phi += kPi;
  }
  phi = std::remainder(phi, 2.0 * kPi);
  if (phi <= -kPi) phi += 2.0 * kPi;
  if (theta == 0.0 || theta == kPi) phi = 0.0;
  return {theta, phi};
}

std::vector<SphericalBone> local_spherical(const Pose& pose, const KinematicTree& tree) {
  const BoneSet bones = bones_of(pose, tree);
  const auto frames = frames_of(pose.joints, tree, tree.convention());
  std::vector<SphericalBone> out;
  out.reserve(static_cast<std::size_t>(tree.bone_count()));
  for (int b = 0; b < tree.bone_count(); ++b) {
    out.push_back(to_spherical(to_local(bones.col(b), frames[static_cast<std::size_t>(b)])));
  }
  return out;
}

Pose set_bone_orientation(const Pose& pose, const KinematicTree& tree, int bone, double theta,
                          double phi) {
  if (bone < 0 || bone >= tree.bone_count()) throw Error(ErrorCode::InvalidInput, "bone index out of range");
  if (!std::isfinite(theta) || !std::isfinite(phi)) throw Error(ErrorCode::InvalidInput, "non-finite angle");
  const BoneSet bones = bones_of(pose, tree);
  std::vector<LocalFrame> frames = frames_of(pose.joints, tree, tree.convention());

  const std::vector<int> descendants = tree.descendant_bones(bone);
  std::vector<bool> moving(static_cast<std::size_t>(tree.bone_count()), false);
  std::vector<Vec3> locals(static_cast<std::size_t>(tree.bone_count()));
  for (int d : descendants) {
    moving[static_cast<std::size_t>(d)] = true;
    locals[static_cast<std::size_t>(d)] = to_local(bones.col(d), frames[static_cast<std::size_t>(d)]);
  }

  Joints joints = pose.joints;
  auto place = [&](int b, const Vec3& global) {
    const int child = tree.bone_child(b);
    const Vec3 p = joints.col(tree.bone_parent_joint(b));
    for (int k = 0; k < 3; ++k) joints(k, child) = snap_to_lattice(p[k] + global[k]);
  };

  SphericalBone target;
  target.r = bones.col(bone).norm();
  target.theta = theta;
  target.phi = phi;
  place(bone, to_global(from_spherical(target), frames[static_cast<std::size_t>(bone)]));

  for (int d : tree.frame_order()) {
    if (!moving[static_cast<std::size_t>(d)]) continue;
    frames[static_cast<std::size_t>(d)] = frame_for(d, joints, frames, tree, tree.convention());
    place(d, to_global(locals[static_cast<std::size_t>(d)], frames[static_cast<std::size_t>(d)]));
  }
  return Pose{std::move(joints)};
}

}  // namespace evopose
