#include "evopose/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <regex>
#include <sstream>

#include "evopose/error.hpp"

namespace evopose {

namespace {

constexpr std::size_t kMagicSize = 8;

class ByteWriter {
 public:
  void magic(const char* m) {
    char field[kMagicSize] = {};
    std::memcpy(field, m, std::min(std::strlen(m), kMagicSize));
    buf_.append(field, kMagicSize);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view b) { buf_.append(b); }

  const std::string& str() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }
  void clear() { buf_.clear(); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  void expect_magic(const char* m) {
    need(kMagicSize, "magic");
    char field[kMagicSize] = {};
    std::memcpy(field, m, std::min(std::strlen(m), kMagicSize));
    if (std::memcmp(field, data_.data() + pos_, kMagicSize) != 0) {
      std::string found(data_.data() + pos_, kMagicSize);
      found = found.c_str();
      throw Error(ErrorCode::BadMagic, "expected '" + std::string(m) + "', found '" + found + "'");
    }
    pos_ += kMagicSize;
  }
  void expect_version() {
    const std::uint32_t v = u32();
    if (v != kFormatVersion) {
      throw Error(ErrorCode::VersionMismatch, "file version " + std::to_string(v) + ", supported " +
                                                  std::to_string(kFormatVersion));
    }
  }
  std::uint8_t u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n, "payload");
    const std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw Error(ErrorCode::TruncatedFile, std::string("file ends inside ") + what);
  }
  void expect_end() const {
    if (remaining() != 0) {
      throw Error(ErrorCode::InvariantViolation, std::to_string(remaining()) + " trailing bytes after the last record");
    }
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

constexpr std::size_t kSkeletonHeader = kMagicSize + 12;

void write_pose(ByteWriter& w, const Pose& pose) {
  for (Eigen::Index j = 0; j < pose.joints.cols(); ++j) {
    for (int k = 0; k < 3; ++k) w.f32(pose.joints(k, j));
  }
}

Pose read_pose(ByteReader& r, int joints) {
  Pose p{Joints(3, joints)};
  for (int j = 0; j < joints; ++j) {
    for (int k = 0; k < 3; ++k) p.joints(k, j) = r.f32();
  }
  return p;
}

void validate_record(const Pose& pose, const KinematicTree& tree, std::size_t index) {
  try {
    check_pose(pose, tree);
  } catch (const Error& e) {
    throw RecordError(ErrorCode::InvariantViolation, index, e.what());
  }
}

void check_pose_shape(const Pose& pose, int joint_count) {
  if (pose.joint_count() != joint_count) {
    throw Error(ErrorCode::ShapeMismatch, "pose has " + std::to_string(pose.joint_count()) + " joints, file expects " +
                                              std::to_string(joint_count));
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

void patch_u32(std::ostream& out, std::streamoff offset, std::uint32_t value) {
  ByteWriter w;
  w.u32(value);
  const auto end = out.tellp();
  out.seekp(offset);
  out.write(w.str().data(), 4);
  out.seekp(end);
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out = open_output(path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

// ------------------------------------------------------------------ SKEL1

SkeletonWriter::SkeletonWriter(const std::filesystem::path& path, int joint_count)
    : path_(path), out_(open_output(path)), joint_count_(joint_count) {
  ByteWriter w;
  w.magic(kSkeletonMagic);
  w.u32(kFormatVersion);
  w.u32(0);
  w.u32(static_cast<std::uint32_t>(joint_count));
  out_.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
}

SkeletonWriter::~SkeletonWriter() {
  try {
    close();
  } catch (const std::exception&) {
  }
}

void SkeletonWriter::append(const Pose& pose) {
  if (!out_.is_open()) throw Error(ErrorCode::IoError, "writer for " + path_.string() + " is closed");
  check_pose_shape(pose, joint_count_);
  if (count_ == UINT32_MAX) throw Error(ErrorCode::InvalidInput, "SKEL1 holds at most 2^32-1 poses");
  ByteWriter w;
  write_pose(w, pose);
  out_.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  ++count_;
}

void SkeletonWriter::close() {
  if (!out_.is_open()) return;
  patch_u32(out_, kMagicSize + 4, count_);
  out_.close();
  if (!out_) throw Error(ErrorCode::IoError, "write failed for " + path_.string());
}

SkeletonReader::SkeletonReader(const std::filesystem::path& path, const KinematicTree& tree)
    : tree_(tree), in_(path, std::ios::binary) {
  if (!in_) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string header(kSkeletonHeader, '\0');
  in_.read(header.data(), static_cast<std::streamsize>(header.size()));
  header.resize(static_cast<std::size_t>(in_.gcount()));
  ByteReader r(header);
  r.expect_magic(kSkeletonMagic);
  r.expect_version();
  count_ = r.u32();
  joint_count_ = static_cast<int>(r.u32());
  if (joint_count_ != tree.joint_count()) {
    throw Error(ErrorCode::InvariantViolation, "file stores " + std::to_string(joint_count_) + " joints, tree has " +
                                                   std::to_string(tree.joint_count()));
  }
  const auto size = std::filesystem::file_size(path);
  const std::uintmax_t expected = kSkeletonHeader + std::uintmax_t{count_} * static_cast<std::uintmax_t>(joint_count_) * 12u;
  if (size < expected) {
    throw Error(ErrorCode::TruncatedFile, "header announces " + std::to_string(count_) + " poses but the payload holds " +
                                              std::to_string((size - kSkeletonHeader) / (static_cast<std::uintmax_t>(joint_count_) * 12u)));
  }
  if (size > expected) throw Error(ErrorCode::InvariantViolation, "trailing bytes after the last pose");
}

bool SkeletonReader::next(Pose& pose) {
  if (next_ >= count_) return false;
  std::string rec(static_cast<std::size_t>(joint_count_) * 12u, '\0');
  in_.read(rec.data(), static_cast<std::streamsize>(rec.size()));
  if (static_cast<std::size_t>(in_.gcount()) != rec.size()) throw Error(ErrorCode::TruncatedFile, "file ends inside pose " + std::to_string(next_));
  ByteReader r(rec);
  pose = read_pose(r, joint_count_);
  validate_record(pose, tree_, next_);
  ++next_;
  return true;
}

std::string encode_skeletons(std::span<const Pose> poses, int joint_count) {
  ByteWriter w;
  w.magic(kSkeletonMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(poses.size()));
  w.u32(static_cast<std::uint32_t>(joint_count));
  for (const Pose& p : poses) {
    check_pose_shape(p, joint_count);
    write_pose(w, p);
  }
  return w.take();
}

std::vector<Pose> decode_skeletons(std::string_view bytes, const KinematicTree& tree) {
  ByteReader r(bytes);
  r.expect_magic(kSkeletonMagic);
  r.expect_version();
  const std::uint32_t count = r.u32();
  const int joints = static_cast<int>(r.u32());
  if (joints != tree.joint_count()) {
    throw Error(ErrorCode::InvariantViolation, "file stores " + std::to_string(joints) + " joints, tree has " +
                                                   std::to_string(tree.joint_count()));
  }
  const std::size_t record = static_cast<std::size_t>(joints) * 12u;
  if (r.remaining() < std::size_t{count} * record) {
    throw Error(ErrorCode::TruncatedFile, "header announces " + std::to_string(count) + " poses but the payload holds " +
                                              std::to_string(r.remaining() / record));
  }
  std::vector<Pose> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out.push_back(read_pose(r, joints));
    validate_record(out.back(), tree, i);
  }
  r.expect_end();
  return out;
}

void save_skeletons(const std::filesystem::path& path, std::span<const Pose> poses, const KinematicTree& tree) {
  write_file(path, encode_skeletons(poses, tree.joint_count()));
}

std::vector<Pose> load_skeletons(const std::filesystem::path& path, const KinematicTree& tree) {
  return decode_skeletons(read_file(path), tree);
}

void append_skeleton(const std::filesystem::path& path, const Pose& pose, const KinematicTree& tree) {
  check_pose(pose, tree);
  if (!std::filesystem::exists(path)) {
    SkeletonWriter w(path, tree.joint_count());
    w.append(pose);
    w.close();
    return;
  }
  std::uint32_t count = 0;
  {
    SkeletonReader reader(path, tree);  // validates header and size
    count = reader.count();
  }
  if (count == UINT32_MAX) throw Error(ErrorCode::InvalidInput, "SKEL1 holds at most 2^32-1 poses");
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for appending");
  ByteWriter w;
  write_pose(w, pose);
  f.seekp(0, std::ios::end);
  f.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  patch_u32(f, kMagicSize + 4, count + 1);
  f.close();
  if (!f) throw Error(ErrorCode::IoError, "append failed for " + path.string());
}

// ------------------------------------------------------------------ PROV1

void save_provenance(const std::filesystem::path& path, std::span<const Provenance> records) {
  ByteWriter w;
  w.magic(kProvenanceMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const Provenance& p : records) {
    w.u32(p.generation);
    w.u8(static_cast<std::uint8_t>(p.origin));
    w.u32(p.parent_a);
    w.u32(p.parent_b);
  }
  write_file(path, w.str());
}

std::vector<Provenance> load_provenance(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic(kProvenanceMagic);
  r.expect_version();
  const std::uint32_t count = r.u32();
  r.need(std::size_t{count} * 13u, "provenance records");
  std::vector<Provenance> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out[i].generation = r.u32();
    const std::uint8_t origin = r.u8();
    if (origin > static_cast<std::uint8_t>(Origin::Mutation)) {
      throw RecordError(ErrorCode::InvariantViolation, i, "unknown origin tag " + std::to_string(origin));
    }
    out[i].origin = static_cast<Origin>(origin);
    out[i].parent_a = r.u32();
    out[i].parent_b = r.u32();
  }
  r.expect_end();
  return out;
}

// ------------------------------------------------------------------ PAIR1

namespace {

constexpr std::size_t kPairHeader = kMagicSize + 12 + 6 * 8;

void write_pair_header(ByteWriter& w, const Intrinsics& K, std::uint32_t count, int joints) {
  w.magic(kPairMagic);
  w.u32(kFormatVersion);
  w.u32(count);
  w.u32(static_cast<std::uint32_t>(joints));
  w.f64(K.fx);
  w.f64(K.fy);
  w.f64(K.cx);
  w.f64(K.cy);
  w.f64(static_cast<double>(K.width));
  w.f64(static_cast<double>(K.height));
}

void write_pair(ByteWriter& w, const Pair2D3D& p, int joints) {
  if (p.keypoints.cols() != joints || p.target.joint_count() != joints) {
    throw Error(ErrorCode::ShapeMismatch, "pair does not have " + std::to_string(joints) + " joints");
  }
  for (int j = 0; j < joints; ++j) {
    w.f32(p.keypoints(0, j));
    w.f32(p.keypoints(1, j));
  }
  write_pose(w, p.target);
  for (int k = 0; k < 3; ++k) w.f32(p.translation[k]);
}

}  // namespace

PairWriter::PairWriter(const std::filesystem::path& path, const Intrinsics& K, int joint_count)
    : path_(path), out_(open_output(path)), joint_count_(joint_count) {
  K.validate();
  ByteWriter w;
  write_pair_header(w, K, 0, joint_count);
  out_.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
}

PairWriter::~PairWriter() {
  try {
    close();
  } catch (const std::exception&) {
  }
}

void PairWriter::append(const Pair2D3D& pair) {
  if (!out_.is_open()) throw Error(ErrorCode::IoError, "writer for " + path_.string() + " is closed");
  ByteWriter w;
  write_pair(w, pair, joint_count_);
  out_.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  ++count_;
}

void PairWriter::close() {
  if (!out_.is_open()) return;
  patch_u32(out_, kMagicSize + 4, count_);
  out_.close();
  if (!out_) throw Error(ErrorCode::IoError, "write failed for " + path_.string());
}

void save_pairs(const std::filesystem::path& path, const Intrinsics& K, std::span<const Pair2D3D> pairs,
                const KinematicTree& tree) {
  K.validate();
  ByteWriter w;
  write_pair_header(w, K, static_cast<std::uint32_t>(pairs.size()), tree.joint_count());
  for (const Pair2D3D& p : pairs) write_pair(w, p, tree.joint_count());
  write_file(path, w.str());
}

PairFile load_pairs(const std::filesystem::path& path, const KinematicTree& tree) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic(kPairMagic);
  r.expect_version();
  const std::uint32_t count = r.u32();
  const int joints = static_cast<int>(r.u32());
  if (joints != tree.joint_count()) {
    throw Error(ErrorCode::InvariantViolation, "file stores " + std::to_string(joints) + " joints, tree has " +
                                                   std::to_string(tree.joint_count()));
  }
  PairFile file;
  file.intrinsics.fx = r.f64();
  file.intrinsics.fy = r.f64();
  file.intrinsics.cx = r.f64();
  file.intrinsics.cy = r.f64();
  const double width = r.f64();
  const double height = r.f64();
  file.intrinsics.width = static_cast<int>(width);
  file.intrinsics.height = static_cast<int>(height);
  if (width != file.intrinsics.width || height != file.intrinsics.height) {
    throw Error(ErrorCode::InvariantViolation, "image size is not integral");
  }
  try {
    file.intrinsics.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvariantViolation, e.what());
  }
  const std::size_t record = static_cast<std::size_t>(joints) * 20u + 12u;
  if (r.remaining() < std::size_t{count} * record) {
    throw Error(ErrorCode::TruncatedFile, "header announces " + std::to_string(count) + " pairs but the payload holds " +
                                              std::to_string(r.remaining() / record));
  }
  file.pairs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Pair2D3D p;
    p.keypoints.resize(2, joints);
    for (int j = 0; j < joints; ++j) {
      p.keypoints(0, j) = r.f32();
      p.keypoints(1, j) = r.f32();
    }
    p.target = read_pose(r, joints);
    for (int k = 0; k < 3; ++k) p.translation[k] = r.f32();
    validate_record(p.target, tree, i);
    if (!p.keypoints.allFinite() || !p.translation.allFinite()) {
      throw RecordError(ErrorCode::InvariantViolation, i, "non-finite keypoints or translation");
    }
    for (int j = 0; j < joints; ++j) {
      if (!file.intrinsics.contains(p.keypoints(0, j), p.keypoints(1, j))) {
        throw RecordError(ErrorCode::InvariantViolation, i, "keypoint " + std::to_string(j) + " outside the image");
      }
      if (!(p.target.joints(2, j) + p.translation.z() > kNearPlane)) {
        throw RecordError(ErrorCode::InvariantViolation, i, "joint " + std::to_string(j) + " behind the near plane");
      }
    }
    file.pairs.push_back(std::move(p));
  }
  r.expect_end();
  return file;
}

Matrix pair_inputs(std::span<const Pair2D3D> pairs) {
  if (pairs.empty()) return Matrix(0, 0);
  const Eigen::Index J = pairs[0].keypoints.cols();
  Matrix X(2 * J, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    X.col(static_cast<Eigen::Index>(n)) = pairs[n].keypoints.reshaped();
  }
  return X;
}

Matrix pair_targets(std::span<const Pair2D3D> pairs) {
  if (pairs.empty()) return Matrix(0, 0);
  const Eigen::Index J = pairs[0].target.joints.cols();
  Matrix Y(3 * J, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    Y.col(static_cast<Eigen::Index>(n)) = pairs[n].target.joints.reshaped();
  }
  return Y;
}

// ------------------------------------------------------------------ VGRID1

void save_validity(const std::filesystem::path& path, const ValidityModel& model) {
  ByteWriter w;
  w.magic(kGridMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.bone_count()));
  if (model.bone_count() == 0) throw Error(ErrorCode::InvalidInput, "validity model has no grids");
  const ValidityGrid& g0 = model.grid(0);
  w.u32(static_cast<std::uint32_t>(g0.theta_bins()));
  w.u32(static_cast<std::uint32_t>(g0.phi_bins()));
  w.u32(static_cast<std::uint32_t>(g0.dilation()));
  for (const ValidityGrid& g : model.grids()) {
    if (g.theta_bins() != g0.theta_bins() || g.phi_bins() != g0.phi_bins() || g.dilation() != g0.dilation()) {
      throw Error(ErrorCode::InvalidInput, "all grids of a model must share one shape");
    }
    const std::size_t cells = static_cast<std::size_t>(g.theta_bins()) * static_cast<std::size_t>(g.phi_bins());
    std::string packed((cells + 7) / 8, '\0');
    for (int t = 0; t < g.theta_bins(); ++t) {
      for (int p = 0; p < g.phi_bins(); ++p) {
        if (!g.occupied(t, p)) continue;
        const std::size_t i = static_cast<std::size_t>(t) * static_cast<std::size_t>(g.phi_bins()) + static_cast<std::size_t>(p);
        packed[i / 8] = static_cast<char>(static_cast<unsigned char>(packed[i / 8]) | (1u << (i % 8)));
      }
    }
    w.bytes(packed);
  }
  write_file(path, w.str());
}

ValidityModel load_validity(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic(kGridMagic);
  r.expect_version();
  const std::uint32_t bones = r.u32();
  const std::uint32_t tb = r.u32();
  const std::uint32_t pb = r.u32();
  const std::uint32_t dil = r.u32();
  if (bones == 0 || tb < 4 || pb < 4 || tb > 100000 || pb > 100000 || dil > 100000) {
    throw Error(ErrorCode::InvariantViolation, "implausible grid header");
  }
  const std::size_t cells = std::size_t{tb} * std::size_t{pb};
  r.need(std::size_t{bones} * ((cells + 7) / 8), "grid payload");
  std::vector<ValidityGrid> grids;
  for (std::uint32_t b = 0; b < bones; ++b) {
    ValidityGrid g(static_cast<int>(tb), static_cast<int>(pb), static_cast<int>(dil));
    const std::string_view packed = r.bytes((cells + 7) / 8);
    for (std::size_t i = 0; i < cells; ++i) {
      if (static_cast<unsigned char>(packed[i / 8]) & (1u << (i % 8))) {
        g.set(static_cast<int>(i / pb), static_cast<int>(i % pb));
      }
    }
    for (std::size_t i = cells; i < packed.size() * 8; ++i) {
      if (static_cast<unsigned char>(packed[i / 8]) & (1u << (i % 8))) {
        throw RecordError(ErrorCode::InvariantViolation, b, "padding bits set");
      }
    }
    if (g.occupied_count() == 0) throw RecordError(ErrorCode::InvariantViolation, b, "grid has no valid cell");
    grids.push_back(std::move(g));
  }
  r.expect_end();
  return ValidityModel(std::move(grids));
}

// ------------------------------------------------------------------ CASC1

namespace {

void write_tensor(ByteWriter& w, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

void write_tensor(ByteWriter& w, const Vector& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.u32(1);
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v[i]);
}

Matrix read_tensor(ByteReader& r, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  const std::uint32_t nr = r.u32();
  const std::uint32_t nc = r.u32();
  if (nr != rows || nc != cols) {
    throw Error(ErrorCode::InvariantViolation, "tensor " + name + " has shape " + std::to_string(nr) + "x" +
                                                   std::to_string(nc) + ", expected " + std::to_string(rows) + "x" +
                                                   std::to_string(cols));
  }
  r.need(std::size_t{nr} * nc * 8u, "tensor data");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  if (!m.allFinite()) throw Error(ErrorCode::InvariantViolation, "tensor " + name + " holds non-finite values");
  return m;
}

Vector read_vector(ByteReader& r, Eigen::Index size, const std::string& name) {
  return read_tensor(r, size, 1, name).col(0);
}

constexpr std::uint32_t kFlagConcat = 1u;

}  // namespace

void save_cascade(const std::filesystem::path& path, const Cascade& cascade) {
  const LearnerConfig& c = cascade.config;
  ByteWriter w;
  w.magic(kCascadeMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(cascade.learners.size()));
  w.u32(static_cast<std::uint32_t>(c.width));
  w.u32(static_cast<std::uint32_t>(c.blocks));
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.output_dim));
  w.u32(cascade.concat_prediction ? kFlagConcat : 0u);
  w.f64(c.dropout);
  w.f64(c.bn_momentum);
  w.f64(c.bn_eps);
  write_tensor(w, cascade.stats.in_mean);
  write_tensor(w, cascade.stats.in_std);
  write_tensor(w, cascade.stats.out_mean);
  write_tensor(w, cascade.stats.out_std);
  for (const DeepLearner& L : cascade.learners) {
    w.u32(static_cast<std::uint32_t>(6 * L.layer_count() + 2));
    for (int i = 0; i < L.layer_count(); ++i) {
      const Layer& layer = L.layer(i);
      write_tensor(w, layer.dense.W);
      write_tensor(w, layer.dense.b);
      write_tensor(w, layer.bn.gamma);
      write_tensor(w, layer.bn.beta);
      write_tensor(w, layer.bn.running_mean);
      write_tensor(w, layer.bn.running_var);
    }
    write_tensor(w, L.output.W);
    write_tensor(w, L.output.b);
  }
  write_file(path, w.str());
}

Cascade load_cascade(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic(kCascadeMagic);
  r.expect_version();
  Cascade cascade;
  const std::uint32_t T = r.u32();
  LearnerConfig& c = cascade.config;
  c.width = static_cast<int>(r.u32());
  c.blocks = static_cast<int>(r.u32());
  c.input_dim = static_cast<int>(r.u32());
  c.output_dim = static_cast<int>(r.u32());
  const std::uint32_t flags = r.u32();
  if (flags & ~kFlagConcat) throw Error(ErrorCode::InvariantViolation, "unknown cascade flags");
  cascade.concat_prediction = (flags & kFlagConcat) != 0;
  c.dropout = r.f64();
  c.bn_momentum = r.f64();
  c.bn_eps = r.f64();
  if (c.width > (1 << 20) || c.blocks > 1024 || c.input_dim > (1 << 20) || c.output_dim > (1 << 20)) {
    throw Error(ErrorCode::InvariantViolation, "implausible cascade header");
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvariantViolation, e.what());
  }
  cascade.stats.in_mean = read_vector(r, c.input_dim, "in_mean");
  cascade.stats.in_std = read_vector(r, c.input_dim, "in_std");
  cascade.stats.out_mean = read_vector(r, c.output_dim, "out_mean");
  cascade.stats.out_std = read_vector(r, c.output_dim, "out_std");
  if ((cascade.stats.in_std.array() <= 0.0).any() || (cascade.stats.out_std.array() <= 0.0).any()) {
    throw Error(ErrorCode::InvariantViolation, "normalization std must be positive");
  }
  LearnerConfig lc = c;
  if (cascade.concat_prediction) lc.input_dim = c.input_dim + c.output_dim;
  for (std::uint32_t t = 0; t < T; ++t) {
    DeepLearner L;
    L.config = lc;
    L.blocks.resize(static_cast<std::size_t>(2 * lc.blocks));
    const std::uint32_t tensors = r.u32();
    if (tensors != static_cast<std::uint32_t>(6 * L.layer_count() + 2)) {
      throw RecordError(ErrorCode::InvariantViolation, t, "unexpected tensor count " + std::to_string(tensors));
    }
    try {
      for (int i = 0; i < L.layer_count(); ++i) {
        Layer& layer = L.layer(i);
        const Eigen::Index in = i == 0 ? lc.input_dim : lc.width;
        const std::string name = "layer" + std::to_string(i);
        layer.dense.W = read_tensor(r, lc.width, in, name + ".W");
        layer.dense.b = read_vector(r, lc.width, name + ".b");
        layer.bn.gamma = read_vector(r, lc.width, name + ".gamma");
        layer.bn.beta = read_vector(r, lc.width, name + ".beta");
        layer.bn.running_mean = read_vector(r, lc.width, name + ".running_mean");
        layer.bn.running_var = read_vector(r, lc.width, name + ".running_var");
        if ((layer.bn.running_var.array() <= 0.0).any()) {
          throw Error(ErrorCode::InvariantViolation, name + " running variance must be positive");
        }
      }
      L.output.W = read_tensor(r, lc.output_dim, lc.width, "output.W");
      L.output.b = read_vector(r, lc.output_dim, "output.b");
    } catch (const RecordError&) {
      throw;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::TruncatedFile) throw;
      throw RecordError(ErrorCode::InvariantViolation, t, e.what());
    }
    cascade.learners.push_back(std::move(L));
  }
  r.expect_end();
  return cascade;
}

// ------------------------------------------------------------------ npy import

std::vector<Pose> import_npy(const std::filesystem::path& path, const KinematicTree& tree, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw Error(ErrorCode::InvalidInput, "scale must be positive");
  const std::string bytes = read_file(path);
  ByteReader r(bytes);
  const std::string_view magic = r.bytes(6);
  if (magic != std::string_view("\x93NUMPY", 6)) throw Error(ErrorCode::BadMagic, "not a .npy file");
  const std::uint8_t major = r.u8();
  r.u8();
  std::uint32_t header_len = 0;
  if (major == 1) {
    header_len = r.u8();
    header_len |= static_cast<std::uint32_t>(r.u8()) << 8;
  } else if (major == 2 || major == 3) {
    header_len = r.u32();
  } else {
    throw Error(ErrorCode::VersionMismatch, "unsupported .npy version " + std::to_string(major));
  }
  const std::string header(r.bytes(header_len));

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']*)')"))) {
    throw Error(ErrorCode::InvalidInput, ".npy header lacks descr");
  }
  const std::string descr = m[1];
  if (descr != "<f4" && descr != "<f8") throw Error(ErrorCode::InvalidInput, "unsupported dtype " + descr);
  if (std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*True)"))) {
    throw Error(ErrorCode::InvalidInput, "Fortran-ordered arrays are not supported");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    throw Error(ErrorCode::InvalidInput, ".npy header lacks shape");
  }
  std::vector<std::size_t> shape;
  {
    const std::string dims = m[1];
    std::regex num(R"(\d+)");
    for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it) {
      shape.push_back(std::stoull(it->str()));
    }
  }
  const std::size_t J = static_cast<std::size_t>(tree.joint_count());
  const bool layout3 = shape.size() == 3 && shape[1] == J && shape[2] == 3;
  const bool layout2 = shape.size() == 2 && shape[1] == 3 * J;
  if (!layout3 && !layout2) throw Error(ErrorCode::ShapeMismatch, "expected shape (N, " + std::to_string(J) + ", 3)");
  const std::size_t N = shape[0];
  const std::size_t item = descr == "<f4" ? 4 : 8;
  r.need(N * J * 3 * item, "array data");

  std::vector<Pose> out;
  out.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    Pose p{Joints(3, static_cast<Eigen::Index>(J))};
    for (std::size_t j = 0; j < J; ++j) {
      for (int k = 0; k < 3; ++k) {
        const double v = item == 4 ? r.f32() : r.f64();
        p.joints(k, static_cast<Eigen::Index>(j)) = v * scale;
      }
    }
    p.joints.colwise() -= Vec3(p.joints.col(tree.root()));
    snap_to_lattice(p.joints);
    validate_record(p, tree, n);
    out.push_back(std::move(p));
  }
  r.expect_end();
  return out;
}

}  // namespace evopose
