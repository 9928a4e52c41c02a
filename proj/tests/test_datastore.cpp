#include <doctest.h>

#include <bit>
#include <cstring>
#include <random>

#include "evopose/datastore.hpp"
#include "evopose/error.hpp"
#include "evopose/synth.hpp"
#include "test_support.hpp"

using namespace evopose;
using evopose::testing::error_code_of;
using evopose::testing::TempDir;

static_assert(std::endian::native == std::endian::little, "byte oracles below assume a little-endian host");

namespace {

std::vector<Pose> poses(std::size_t n, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.count = n;
  cfg.rng_seed = seed;
  return synthesize_poses(KinematicTree::h36m(), cfg);
}

void put_u32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
void put_f32(std::string& s, float v) { s.append(reinterpret_cast<const char*>(&v), 4); }
void put_f64(std::string& s, double v) { s.append(reinterpret_cast<const char*>(&v), 8); }

void set_u32(std::string& s, std::size_t offset, std::uint32_t v) { std::memcpy(s.data() + offset, &v, 4); }

std::size_t record_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const RecordError& e) {
    return e.record();
  }
  throw std::runtime_error("expected a RecordError");
}

}  // namespace

TEST_CASE("SKEL1 layout matches a hand-built byte string") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> p = poses(2, 1);
  std::string want("SKEL1\0\0\0", 8);
  put_u32(want, 1);
  put_u32(want, 2);
  put_u32(want, 17);
  for (const Pose& pose : p) {
    for (int j = 0; j < 17; ++j) {
      for (int k = 0; k < 3; ++k) put_f32(want, static_cast<float>(pose.joints(k, j)));
    }
  }
  CHECK(encode_skeletons(p, 17) == want);
  TempDir dir;
  save_skeletons(dir / "a.skel", p, tree);
  CHECK(read_file(dir / "a.skel") == want);
}

TEST_CASE("SKEL1 round trip of 1000 poses is bit-identical") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> p = poses(1000, 2);
  TempDir dir;
  save_skeletons(dir / "a.skel", p, tree);
  const std::vector<Pose> loaded = load_skeletons(dir / "a.skel", tree);
  REQUIRE(loaded.size() == 1000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    REQUIRE(loaded[i].joints == testing::float_rounded(p[i].joints));
  }
  save_skeletons(dir / "b.skel", loaded, tree);
  CHECK(read_file(dir / "a.skel") == read_file(dir / "b.skel"));

  SUBCASE("streaming writer and reader") {
    {
      SkeletonWriter w(dir / "c.skel", 17);
      for (const Pose& pose : p) w.append(pose);
      CHECK(w.count() == 1000);
    }
    CHECK(read_file(dir / "c.skel") == read_file(dir / "a.skel"));
    SkeletonReader r(dir / "c.skel", tree);
    CHECK(r.count() == 1000);
    Pose pose;
    std::size_t n = 0;
    while (r.next(pose)) REQUIRE(pose == loaded[n++]);
    CHECK(n == 1000);
  }

  SUBCASE("append") {
    const std::filesystem::path path = dir / "d.skel";
    for (std::size_t i = 0; i < 5; ++i) append_skeleton(path, p[i], tree);
    CHECK(read_file(path) == encode_skeletons(std::span(p).first(5), 17));
  }
}

TEST_CASE("SKEL1 corruption is reported") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> p = poses(10, 3);
  const std::string good = encode_skeletons(p, 17);
  TempDir dir;
  auto load = [&](const std::string& bytes) {
    write_file(dir / "x.skel", bytes);
    return load_skeletons(dir / "x.skel", tree);
  };

  std::string bad = good;
  bad[4] = '9';
  CHECK(error_code_of([&] { load(bad); }) == ErrorCode::BadMagic);

  bad = good;
  set_u32(bad, 8, 2);
  CHECK(error_code_of([&] { load(bad); }) == ErrorCode::VersionMismatch);

  bad = good.substr(0, good.size() - 17 * 12);
  CHECK(error_code_of([&] { load(bad); }) == ErrorCode::TruncatedFile);
  write_file(dir / "t.skel", bad);
  CHECK(error_code_of([&] { SkeletonReader(dir / "t.skel", tree); }) == ErrorCode::TruncatedFile);

  CHECK(error_code_of([&] { load(good.substr(0, 6)); }) == ErrorCode::TruncatedFile);
  CHECK(error_code_of([&] { load(good + "x"); }) == ErrorCode::InvariantViolation);

  std::vector<Pose> shifted = p;
  shifted[3].joints.colwise() += Vec3(5, 0, 0);
  CHECK(error_code_of([&] { load(encode_skeletons(shifted, 17)); }) == ErrorCode::InvariantViolation);
  CHECK(record_of([&] { load(encode_skeletons(shifted, 17)); }) == 3);

  CHECK(error_code_of([&] { load_skeletons(dir / "missing.skel", tree); }) == ErrorCode::IoError);
}

TEST_CASE("PROV1 round trip and validation") {
  std::vector<Provenance> recs = {{0, Origin::Seed, kNoParent, kNoParent},
                                  {1, Origin::Crossover, 0, 7},
                                  {2, Origin::Mutation, 12, 3}};
  TempDir dir;
  save_provenance(dir / "p.prov", recs);
  CHECK(load_provenance(dir / "p.prov") == recs);
  std::string bytes = read_file(dir / "p.prov");
  CHECK(bytes.size() == 8 + 4 + 4 + 3 * 13);
  bytes[16 + 13 + 4] = 9;
  write_file(dir / "q.prov", bytes);
  CHECK(record_of([&] { load_provenance(dir / "q.prov"); }) == 1);
}

TEST_CASE("PAIR1 round trip keeps the reprojection") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> p = poses(300, 4);
  Intrinsics K;
  K.fx = 1150.5;
  PairConfig pc;
  pc.rng_seed = 8;
  const std::vector<Pair2D3D> pairs = generate_pairs(p, K, pc);
  TempDir dir;
  save_pairs(dir / "a.pair", K, pairs, tree);
  const PairFile file = load_pairs(dir / "a.pair", tree);
  CHECK(file.intrinsics == K);
  REQUIRE(file.pairs.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Pair2D3D& q = file.pairs[i];
    REQUIRE(q.target == pairs[i].target);
    REQUIRE(q.translation == pairs[i].translation);
    REQUIRE(q.keypoints == testing::float_rounded(project(q.target, q.translation, K)));
  }
  save_pairs(dir / "b.pair", file.intrinsics, file.pairs, tree);
  CHECK(read_file(dir / "a.pair") == read_file(dir / "b.pair"));
  {
    PairWriter w(dir / "c.pair", K, 17);
    for (const Pair2D3D& pair : pairs) w.append(pair);
  }
  CHECK(read_file(dir / "c.pair") == read_file(dir / "a.pair"));

  const Matrix X = pair_inputs(file.pairs);
  const Matrix Y = pair_targets(file.pairs);
  CHECK(X.rows() == 34);
  CHECK(Y.rows() == 51);
  CHECK(X(2 * 5 + 1, 7) == file.pairs[7].keypoints(1, 5));
  CHECK(Y(3 * 9 + 2, 4) == file.pairs[4].target.joints(2, 9));

  SUBCASE("corrupt pair files") {
    const std::string good = read_file(dir / "a.pair");
    std::string bad = good.substr(0, good.size() - 10);
    write_file(dir / "x.pair", bad);
    CHECK(error_code_of([&] { load_pairs(dir / "x.pair", tree); }) == ErrorCode::TruncatedFile);

    bad = good;
    const std::size_t header = 8 + 12 + 48;
    const std::size_t record = 17 * 20 + 12;
    const float outside = -5.0f;
    std::memcpy(bad.data() + header + 2 * record, &outside, 4);
    write_file(dir / "y.pair", bad);
    CHECK(record_of([&] { load_pairs(dir / "y.pair", tree); }) == 2);
  }
}

TEST_CASE("VGRID1 round trip") {
  const KinematicTree& tree = KinematicTree::h36m();
  const ValidityModel model = ValidityModel::fit(poses(100, 5), tree, {36, 72, 2});
  TempDir dir;
  save_validity(dir / "v.grid", model);
  const ValidityModel loaded = load_validity(dir / "v.grid");
  CHECK(loaded == model);
  save_validity(dir / "w.grid", loaded);
  CHECK(read_file(dir / "v.grid") == read_file(dir / "w.grid"));
  std::string bytes = read_file(dir / "v.grid");
  bytes[0] = 'X';
  write_file(dir / "x.grid", bytes);
  CHECK(error_code_of([&] { load_validity(dir / "x.grid"); }) == ErrorCode::BadMagic);
}

TEST_CASE("CASC1 round trip") {
  std::mt19937_64 rng(6);
  Cascade c;
  c.config.width = 8;
  c.config.blocks = 2;
  c.config.dropout = 0.25;
  c.concat_prediction = true;
  Matrix X(34, 20), Y(51, 20);
  std::normal_distribution<double> n(0.0, 50.0);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = 500 + n(rng);
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = n(rng);
  c.stats = NormStats::from_data(X, Y);
  LearnerConfig lc = c.config;
  lc.input_dim = 34 + 51;
  for (int t = 0; t < 3; ++t) {
    DeepLearner l = DeepLearner::init(lc, rng);
    l.blocks[1].bn.running_var.setConstant(0.7);
    l.input.bn.running_mean.setConstant(-0.2);
    c.learners.push_back(std::move(l));
  }
  TempDir dir;
  save_cascade(dir / "m.casc", c);
  const Cascade loaded = load_cascade(dir / "m.casc");
  CHECK(loaded.config == c.config);
  CHECK(loaded.concat_prediction);
  CHECK(loaded.stats == c.stats);
  CHECK(loaded.learners.size() == 3);
  CHECK(loaded.predict(X) == c.predict(X));
  save_cascade(dir / "n.casc", loaded);
  CHECK(read_file(dir / "m.casc") == read_file(dir / "n.casc"));

  std::string bytes = read_file(dir / "m.casc");
  write_file(dir / "t.casc", bytes.substr(0, bytes.size() - 100));
  CHECK(error_code_of([&] { load_cascade(dir / "t.casc"); }) == ErrorCode::TruncatedFile);
  set_u32(bytes, 8, 7);
  write_file(dir / "v.casc", bytes);
  CHECK(error_code_of([&] { load_cascade(dir / "v.casc"); }) == ErrorCode::VersionMismatch);
}

TEST_CASE("npy import") {
  const KinematicTree& tree = KinematicTree::h36m();
  const std::vector<Pose> p = poses(3, 7);
  TempDir dir;

  SUBCASE("float64 (N, 17, 3) in metres with an absolute root") {
    std::string payload;
    for (const Pose& pose : p) {
      for (int j = 0; j < 17; ++j) {
        for (int k = 0; k < 3; ++k) put_f64(payload, (pose.joints(k, j) + (k == 2 ? 4000.0 : 100.0)) / 1000.0);
      }
    }
    testing::write_npy(dir / "a.npy", "<f8", "(3, 17, 3)", payload);
    const std::vector<Pose> got = import_npy(dir / "a.npy", tree, 1000.0);
    REQUIRE(got.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(got[i].joints.col(0).isZero(0.0));
      CHECK((got[i].joints - p[i].joints).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  SUBCASE("float32 (N, 51)") {
    std::string payload;
    for (const Pose& pose : p) {
      for (int j = 0; j < 17; ++j) {
        for (int k = 0; k < 3; ++k) put_f32(payload, static_cast<float>(pose.joints(k, j)));
      }
    }
    testing::write_npy(dir / "b.npy", "<f4", "(3, 51)", payload);
    const std::vector<Pose> got = import_npy(dir / "b.npy", tree);
    REQUIRE(got.size() == 3);
    CHECK(got[1].joints == testing::float_rounded(p[1].joints));
  }

  SUBCASE("bad inputs") {
    testing::write_npy(dir / "c.npy", "<f8", "(3, 16, 3)", std::string(3 * 16 * 3 * 8, '\0'));
    CHECK(error_code_of([&] { import_npy(dir / "c.npy", tree); }) == ErrorCode::ShapeMismatch);
    testing::write_npy(dir / "d.npy", "<f8", "(3, 17, 3)", std::string(100, '\0'));
    CHECK(error_code_of([&] { import_npy(dir / "d.npy", tree); }) == ErrorCode::TruncatedFile);
    write_file(dir / "e.npy", "not numpy at all");
    CHECK(error_code_of([&] { import_npy(dir / "e.npy", tree); }) == ErrorCode::BadMagic);
  }
}
