#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "evopose/error.hpp"
#include "evopose/skeleton.hpp"
#include "test_support.hpp"

using namespace evopose;
using evopose::testing::error_code_of;
using evopose::testing::random_pose;

namespace {

constexpr double kPi = std::numbers::pi;

const char* kChainTree = R"(format KTREE1
joint 0 root - - - 0 0 0
joint 1 A 0 torso - 0 100 0
joint 2 B 1 torso - 0 100 50
landmark left_shoulder 1
landmark right_shoulder 2
landmark left_hip 1
landmark right_hip 2
landmark spine 0
landmark thorax 1
)";

// Parent table of the standard 17-joint layout, written out independently of
// the library's embedded tree.
const int kH36mParents[17] = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("default tree has the 17-joint topology and canonical bone order") {
  const KinematicTree& tree = KinematicTree::h36m();
  REQUIRE(tree.joint_count() == 17);
  CHECK(tree.bone_count() == 16);
  CHECK(tree.root() == 0);
  for (int j = 0; j < 17; ++j) CHECK(tree.parent_of(j) == kH36mParents[j]);
  for (int b = 0; b < 16; ++b) {
    CHECK(tree.bone_child(b) == b + 1);
    const int m = tree.parent_bone(b);
    if (m >= 0) CHECK(tree.bone_child(m) == tree.bone_parent_joint(b));
    else CHECK(tree.bone_parent_joint(b) == tree.root());
  }
  CHECK(tree.limb_class(tree.bone_ending_at(tree.joint_index("LElbow"))) == LimbClass::UpperLimb);
  CHECK(tree.limb_class(tree.bone_ending_at(tree.joint_index("LWrist"))) == LimbClass::LowerLimb);
  CHECK(tree.limb_class(tree.bone_ending_at(tree.joint_index("Spine"))) == LimbClass::Torso);
}

TEST_CASE("tree text round-trips and rejects malformed trees") {
  const KinematicTree& tree = KinematicTree::h36m();
  const KinematicTree again = KinematicTree::parse(tree.to_text());
  CHECK(again == tree);
  CHECK(again.to_text() == tree.to_text());

  CHECK(error_code_of([] {
          KinematicTree::parse("format KTREE1\njoint 0 a - - - 0 0 0\njoint 1 b - torso - 0 5 0\n");
        }) == ErrorCode::InvalidTree);
  CHECK(error_code_of([] {
          KinematicTree::parse("format KTREE1\njoint 0 a 1 torso - 0 0 0\njoint 1 b 0 torso - 0 5 0\n");
        }) == ErrorCode::InvalidTree);
  // Upper-limb bones must start at a shoulder or hip landmark.
  std::string bad(kChainTree);
  bad.replace(bad.find("joint 2 B 1 torso"), 17, "joint 2 B 1 upper");
  std::string patched = bad;
  patched.replace(patched.find("landmark left_shoulder 1"), 24, "landmark left_shoulder 2");
  patched.replace(patched.find("landmark right_shoulder 2"), 25, "landmark right_shoulder 0");
  patched.replace(patched.find("landmark left_hip 1"), 19, "landmark left_hip 2");
  patched.replace(patched.find("landmark right_hip 2"), 20, "landmark right_hip 0");
  CHECK(error_code_of([&] { KinematicTree::parse(patched); }) == ErrorCode::InvalidTree);
  CHECK(error_code_of([] { KinematicTree::parse("joint 0 a - - - 0 0 0\n"); }) == ErrorCode::InvalidTree);
}

TEST_CASE("bones_of on a three-joint chain") {
  const KinematicTree chain = KinematicTree::parse(kChainTree);
  Pose p{Joints(3, 3)};
  p.joints << 0, 0, 0, 0, 100, 100, 0, 0, 50;
  const BoneSet bones = bones_of(p, chain);
  CHECK(bones.col(0) == Vec3(0, 100, 0));
  CHECK(bones.col(1) == Vec3(0, 0, 50));

  const Pose back = forward_kinematics(bones, chain);
  CHECK(back.joints == p.joints);
}

TEST_CASE("bones_of matches per-edge subtraction on the default pose") {
  const KinematicTree& tree = KinematicTree::h36m();
  const Pose p = rest_pose(tree);
  const BoneSet bones = bones_of(p, tree);
  REQUIRE(bones.cols() == 16);
  for (int child = 1; child < 17; ++child) {
    const Vec3 oracle = p.joints.col(child) - p.joints.col(kH36mParents[child]);
    CHECK(bones.col(child - 1) == oracle);
    CHECK(std::isfinite(bones.col(child - 1).norm()));
  }
}

TEST_CASE("degenerate inputs are rejected") {
  const KinematicTree& tree = KinematicTree::h36m();
  Pose p = rest_pose(tree);
  p.joints.col(tree.joint_index("RKnee")) = p.joints.col(tree.joint_index("RHip"));
  CHECK(error_code_of([&] { bones_of(p, tree); }) == ErrorCode::DegeneratePose);

  BoneSet zeros = BoneSet::Zero(3, 16);
  CHECK(error_code_of([&] { forward_kinematics(zeros, tree); }) == ErrorCode::InvalidBone);
  BoneSet nan = bones_of(rest_pose(tree), tree);
  nan(1, 3) = std::nan("");
  CHECK(error_code_of([&] { forward_kinematics(nan, tree); }) == ErrorCode::InvalidBone);

  Pose shifted = rest_pose(tree);
  shifted.joints.colwise() += Vec3(1, 0, 0);
  CHECK(error_code_of([&] { check_pose(shifted, tree); }) == ErrorCode::InvalidInput);
}

TEST_CASE("forward kinematics inverts bone extraction exactly") {
  const KinematicTree& tree = KinematicTree::h36m();
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = random_pose(tree, rng);
    const BoneSet b = bones_of(p, tree);
    const Pose q = forward_kinematics(b, tree);
    REQUIRE(q.joints == p.joints);
    REQUIRE(bones_of(q, tree) == b);
  }
}

TEST_CASE("gram_schmidt examples") {
  CHECK(max_abs(gram_schmidt({1, 0, 0}, {0, 1, 0}).basis - Mat3::Identity()) == 0.0);
  CHECK(max_abs(gram_schmidt({2, 0, 0}, {1, 1, 0}).basis - Mat3::Identity()) < 1e-15);
  CHECK(error_code_of([] { gram_schmidt({1, 0, 0}, {-3, 0, 0}); }) == ErrorCode::DegenerateFrame);
  CHECK(nearly_collinear({1, 0, 0}, {1, 1e-9, 0}));
  CHECK_FALSE(nearly_collinear({1, 0, 0}, {1, 1e-7, 0}));
}

TEST_CASE("local frames are orthonormal and right-handed") {
  const KinematicTree& tree = KinematicTree::h36m();
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const Pose p = random_pose(tree, rng);
    for (const LocalFrame& f : local_frames(p, tree)) {
      REQUIRE(max_abs(f.basis.transpose() * f.basis - Mat3::Identity()) < 1e-9);
      REQUIRE(std::abs(f.basis.determinant() - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("local_frame with a custom reference vector") {
  const KinematicTree& tree = KinematicTree::h36m();
  const Pose p = rest_pose(tree);
  const int wrist = tree.bone_ending_at(tree.joint_index("LWrist"));
  const LocalFrame a = local_frame(wrist, p, tree);
  const LocalFrame b = local_frame(wrist, p, tree, Vec3(0, 1, 0));
  CHECK(max_abs(a.basis.transpose() * a.basis - Mat3::Identity()) < 1e-12);
  CHECK(max_abs(b.basis.transpose() * b.basis - Mat3::Identity()) < 1e-12);
  // The parent bone is the first axis whatever the reference.
  const Vec3 upper = bones_of(p, tree).col(tree.parent_bone(wrist)).normalized();
  CHECK((a.basis.col(0) - upper).norm() < 1e-12);
  CHECK((b.basis.col(0) - upper).norm() < 1e-12);
}

TEST_CASE("to_local") {
  LocalFrame id;
  CHECK(to_local({1, 2, 3}, id) == Vec3(1, 2, 3));
  LocalFrame rz;
  rz.basis << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((to_local({1, 0, 0}, rz) - Vec3(0, -1, 0)).norm() < 1e-15);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 v1 = testing::random_unit(rng) * 100.0;
    const Vec3 v2 = testing::random_unit(rng);
    if (nearly_collinear(v1, v2)) continue;
    const LocalFrame f = gram_schmidt(v1, v2);
    const Vec3 b = testing::random_unit(rng) * 437.0;
    REQUIRE(std::abs(to_local(b, f).norm() - b.norm()) <= 1e-9 * b.norm());
    REQUIRE((to_global(to_local(b, f), f) - b).norm() <= 1e-9 * b.norm());
  }
}

TEST_CASE("spherical conversion") {
  SphericalBone s = to_spherical({0, 0, 1});
  CHECK(s.r == 1.0);
  CHECK(s.theta == 0.0);
  CHECK(s.phi == 0.0);
  s = to_spherical({1, 0, 0});
  CHECK(s.theta == doctest::Approx(kPi / 2).epsilon(1e-15));
  CHECK(s.phi == 0.0);
  s = to_spherical({0, 0, -2});
  CHECK(s.theta == doctest::Approx(kPi));
  CHECK(s.phi == 0.0);
  s = to_spherical({-1, -0.0, 0});
  CHECK(s.phi == doctest::Approx(kPi));
  CHECK(s.phi > 0.0);
  CHECK(error_code_of([] { to_spherical({0, 0, 0}); }) == ErrorCode::ZeroBone);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(1e-3, 1e4);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 v = testing::random_unit(rng) * scale(rng);
    const SphericalBone sb = to_spherical(v);
    REQUIRE(sb.theta >= 0.0);
    REQUIRE(sb.theta <= kPi);
    REQUIRE(sb.phi > -kPi);
    REQUIRE(sb.phi <= kPi);
    REQUIRE((from_spherical(sb) - v).norm() <= 1e-9 * v.norm());
  }
}

TEST_CASE("canonical_angles describes the same direction") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 10000; ++i) {
    const double t = u(rng), p = u(rng);
    const auto [ct, cp] = canonical_angles(t, p);
    REQUIRE(ct >= 0.0);
    REQUIRE(ct <= kPi);
    REQUIRE(cp > -kPi);
    REQUIRE(cp <= kPi);
    const Vec3 a = from_spherical({1.0, t, p});
    const Vec3 b = from_spherical({1.0, ct, cp});
    REQUIRE((a - b).norm() < 1e-12);
  }
  CHECK(canonical_angles(0.0, 2.0).second == 0.0);
  CHECK(canonical_angles(kPi, -1.0).second == 0.0);
}

TEST_CASE("set_bone_orientation") {
  const KinematicTree& tree = KinematicTree::h36m();
  std::mt19937_64 rng(21);
  const int upper = tree.bone_ending_at(tree.joint_index("RElbow"));
  const int lower = tree.bone_ending_at(tree.joint_index("RWrist"));

  SUBCASE("current angles are a fixed point") {
    for (int i = 0; i < 50; ++i) {
      const Pose p = random_pose(tree, rng);
      const auto sph = local_spherical(p, tree);
      for (int b = 0; b < tree.bone_count(); ++b) {
        const Pose q = set_bone_orientation(p, tree, b, sph[b].theta, sph[b].phi);
        REQUIRE(max_abs(q.joints - p.joints) < 1e-9);
      }
    }
  }

  SUBCASE("rotating a lower arm only moves the wrist") {
    const Pose p = random_pose(tree, rng);
    const Pose q = set_bone_orientation(p, tree, lower, 1.1, -2.0);
    for (int j = 0; j < tree.joint_count(); ++j) {
      if (j == tree.joint_index("RWrist")) continue;
      CHECK(q.joints.col(j) == p.joints.col(j));
    }
    CHECK((q.joints.col(tree.joint_index("RWrist")) - p.joints.col(tree.joint_index("RWrist"))).norm() > 1.0);
  }

  SUBCASE("rotating an upper arm carries the forearm and preserves lengths") {
    const Pose p = random_pose(tree, rng);
    const auto before = local_spherical(p, tree);
    const Pose q = set_bone_orientation(p, tree, upper, 0.7, 2.5);
    const auto after = local_spherical(q, tree);
    CHECK((q.joints.col(tree.joint_index("RWrist")) - p.joints.col(tree.joint_index("RWrist"))).norm() > 1.0);
    for (int b = 0; b < tree.bone_count(); ++b) CHECK(std::abs(after[b].r - before[b].r) < 1e-9);
    CHECK(after[upper].theta == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(after[upper].phi == doctest::Approx(2.5).epsilon(1e-9));
    CHECK(after[lower].theta == doctest::Approx(before[lower].theta).epsilon(1e-9));
    CHECK(after[lower].phi == doctest::Approx(before[lower].phi).epsilon(1e-9));
  }

  SUBCASE("every bone reaches its requested orientation; descendants keep theirs") {
    std::uniform_real_distribution<double> th(0.3, kPi - 0.3), ph(-kPi + 0.01, kPi);
    for (int i = 0; i < 40; ++i) {
      const Pose p = random_pose(tree, rng, 0.5);
      const auto before = local_spherical(p, tree);
      const int b = static_cast<int>(rng() % 16);
      const double t = th(rng), f = ph(rng);
      Pose q;
      try {
        q = set_bone_orientation(p, tree, b, t, f);
      } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::DegenerateFrame);
        continue;
      }
      const auto after = local_spherical(q, tree);
      REQUIRE(after[b].theta == doctest::Approx(t).epsilon(1e-9));
      REQUIRE(after[b].phi == doctest::Approx(f).epsilon(1e-9));
      const auto desc = tree.descendant_bones(b);
      for (int d : desc) {
        REQUIRE(std::abs(after[d].theta - before[d].theta) < 1e-9);
        const double dphi = std::remainder(after[d].phi - before[d].phi, 2 * kPi);
        REQUIRE(std::abs(dphi) * std::sin(before[d].theta) < 1e-9);
      }
      for (int j = 0; j < tree.joint_count(); ++j) {
        const int bj = tree.bone_ending_at(j);
        const bool moves = bj == b || std::find(desc.begin(), desc.end(), bj) != desc.end();
        if (!moves) REQUIRE(q.joints.col(j) == p.joints.col(j));
      }
    }
  }
}

TEST_CASE("subtree selection matches brute-force offspring enumeration") {
  const KinematicTree& tree = KinematicTree::h36m();
  for (int q = 0; q < tree.joint_count(); ++q) {
    std::vector<int> oracle;
    for (int child = 1; child < 17; ++child) {
      int cur = kH36mParents[child];
      bool inside = false;
      while (cur != -1) {
        if (cur == q) {
          inside = true;
          break;
        }
        cur = kH36mParents[cur];
      }
      if (inside) oracle.push_back(child - 1);
    }
    CHECK(tree.subtree_bones(q) == oracle);
  }
}
