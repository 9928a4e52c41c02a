#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "evopose/camera.hpp"
#include "evopose/evolve.hpp"
#include "evopose/regressor.hpp"
#include "evopose/skeleton.hpp"
#include "evopose/validity.hpp"

namespace evopose {

// Every binary file starts with an 8-byte NUL-padded magic and a u32 version;
// all fields are little-endian.
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kSkeletonMagic[] = "SKEL1";
inline constexpr char kProvenanceMagic[] = "PROV1";
inline constexpr char kPairMagic[] = "PAIR1";
inline constexpr char kGridMagic[] = "VGRID1";
inline constexpr char kCascadeMagic[] = "CASC1";

// ---- SKEL1: count u32, joint count u32, then N x J x 3 f32 (mm).

// Streams poses to disk; the header count is patched on close().
class SkeletonWriter {
 public:
  SkeletonWriter(const std::filesystem::path& path, int joint_count);
  ~SkeletonWriter();
  SkeletonWriter(const SkeletonWriter&) = delete;
  SkeletonWriter& operator=(const SkeletonWriter&) = delete;

  void append(const Pose& pose);
  void close();
  std::uint32_t count() const noexcept { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  int joint_count_;
  std::uint32_t count_ = 0;
};

// Reads one pose at a time, validating each against the tree.
class SkeletonReader {
 public:
  SkeletonReader(const std::filesystem::path& path, const KinematicTree& tree);

  std::uint32_t count() const noexcept { return count_; }
  std::uint32_t position() const noexcept { return next_; }
  // False once every record has been read.
  bool next(Pose& pose);

 private:
  const KinematicTree& tree_;
  std::ifstream in_;
  std::uint32_t count_ = 0;
  std::uint32_t next_ = 0;
  int joint_count_ = 0;
};

void save_skeletons(const std::filesystem::path& path, std::span<const Pose> poses, const KinematicTree& tree);
std::vector<Pose> load_skeletons(const std::filesystem::path& path, const KinematicTree& tree);
// Appends one record, creating the file if needed.
void append_skeleton(const std::filesystem::path& path, const Pose& pose, const KinematicTree& tree);

// ---- PROV1: count u32, then per record generation u32, origin u8, parents u32 x 2.

void save_provenance(const std::filesystem::path& path, std::span<const Provenance> records);
std::vector<Provenance> load_provenance(const std::filesystem::path& path);

// ---- PAIR1: count u32, joint count u32, intrinsics (fx fy cx cy width height
// as f64), then per record J x 2 keypoints, J x 3 target, 3 translation (f32).

struct PairFile {
  Intrinsics intrinsics;
  std::vector<Pair2D3D> pairs;
};

class PairWriter {
 public:
  PairWriter(const std::filesystem::path& path, const Intrinsics& K, int joint_count);
  ~PairWriter();
  PairWriter(const PairWriter&) = delete;
  PairWriter& operator=(const PairWriter&) = delete;

  void append(const Pair2D3D& pair);
  void close();
  std::uint32_t count() const noexcept { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  int joint_count_;
  std::uint32_t count_ = 0;
};

void save_pairs(const std::filesystem::path& path, const Intrinsics& K, std::span<const Pair2D3D> pairs,
                const KinematicTree& tree);
PairFile load_pairs(const std::filesystem::path& path, const KinematicTree& tree);

// Stacks keypoints (2J x N) and targets (3J x N) column-wise.
Matrix pair_inputs(std::span<const Pair2D3D> pairs);
Matrix pair_targets(std::span<const Pair2D3D> pairs);

// ---- VGRID1: bones, theta bins, phi bins, dilation (u32), then per bone the
// row-major occupancy bit-packed LSB first.

void save_validity(const std::filesystem::path& path, const ValidityModel& model);
ValidityModel load_validity(const std::filesystem::path& path);

// ---- CASC1: learner count, width, blocks, input/output dims, flags (u32),
// dropout, bn momentum, bn eps (f64), normalization stats (f64), then per
// learner a tensor count and (rows u32, cols u32, f64 data) per tensor.

void save_cascade(const std::filesystem::path& path, const Cascade& cascade);
Cascade load_cascade(const std::filesystem::path& path);

// In-memory encodings used by the file functions.
std::string encode_skeletons(std::span<const Pose> poses, int joint_count);
std::vector<Pose> decode_skeletons(std::string_view bytes, const KinematicTree& tree);

// Imports a NumPy array of shape (N, J, 3) or (N, 3J), dtype <f4 or <f8.
// Coordinates are multiplied by `scale` (1000 for metres) and made root-relative.
std::vector<Pose> import_npy(const std::filesystem::path& path, const KinematicTree& tree, double scale = 1.0);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace evopose
