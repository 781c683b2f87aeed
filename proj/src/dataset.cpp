#include "kinofe/dataset.hpp"

#include "kinofe/detail/binio.hpp"

#include <iomanip>
#include <sstream>

namespace kinofe {

namespace {

constexpr std::string_view kTrajMagic{"KFETRAJ\x01", 8};
constexpr std::string_view kEnvMagic{"KFEENV\x00\x01", 8};
constexpr std::uint32_t kFieldCount = 9 + 2 * kEmbedDim;

/// Writes through to a stream while hashing the bytes.
class HashingWriter {
 public:
  explicit HashingWriter(std::ostream& os) : os_(os) {}
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    hash_ = detail::fnv1a(p, n, hash_);
    detail::write_bytes(os_, p, n);
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::uint64_t hash() const { return hash_; }
  void reset() { hash_ = 0xcbf29ce484222325ULL; }

 private:
  std::ostream& os_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class HashingReader {
 public:
  explicit HashingReader(std::istream& is) : is_(is) {}
  template <typename T>
  T pod(const char* what) {
    T v{};
    bytes(&v, sizeof(T), what);
    return v;
  }
  void bytes(void* p, std::size_t n, const char* what) {
    detail::read_bytes(is_, p, n, what);
    hash_ = detail::fnv1a(p, n, hash_);
  }
  std::string str(const char* what, std::uint32_t limit = 1 << 20) {
    const auto n = pod<std::uint32_t>(what);
    if (n > limit) throw FormatError(std::string("implausible length for ") + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::uint64_t hash() const { return hash_; }
  void reset() { hash_ = 0xcbf29ce484222325ULL; }

 private:
  std::istream& is_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::array<double, kFieldCount> pack_record(const Trajectory& t, std::size_t i) {
  std::array<double, kFieldCount> f{};
  const auto& p = t.poses[i];
  const auto& u = t.controls[i];
  f[0] = t.time[i];
  f[1] = p.x;
  f[2] = p.y;
  f[3] = p.z;
  f[4] = p.roll;
  f[5] = p.pitch;
  f[6] = p.yaw;
  f[7] = u.steer;
  f[8] = u.speed;
  if (t.has_embeddings()) {
    for (int k = 0; k < kEmbedDim; ++k) {
      f[9 + k] = t.e_elev[i][k];
      f[9 + kEmbedDim + k] = t.e_sem[i][k];
    }
  }
  return f;
}

}  // namespace

void write_trajectory(const std::string& path, const Trajectory& traj) {
  const std::size_t n = traj.poses.size();
  if (traj.time.size() != n || traj.controls.size() != n) {
    throw InvalidArgument("write_trajectory: time, pose and control sequences differ in length");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  HashingWriter w(os);
  w.bytes(kTrajMagic.data(), kTrajMagic.size());
  w.pod<std::uint32_t>(kTrajectoryFormatVersion);
  w.str(traj.env_id);
  w.str(kTrajectorySchema);
  w.pod<std::uint32_t>(kFieldCount);
  w.pod<std::uint64_t>(n);
  w.pod<std::uint8_t>(traj.has_embeddings() ? 1 : 0);
  w.pod<std::uint8_t>(traj.boundary_flag ? 1 : 0);
  const std::uint64_t header_hash = w.hash();
  detail::write_pod(os, header_hash);
  for (std::size_t i = 0; i < n; ++i) {
    w.reset();
    w.pod<std::uint64_t>(i);
    const auto f = pack_record(traj, i);
    w.bytes(f.data(), sizeof(double) * f.size());
    const std::uint64_t h = w.hash();
    detail::write_pod(os, h);
  }
  if (!os) throw FormatError("write failed for " + path);
}

TrajectoryReader::TrajectoryReader(const std::string& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw FormatError("cannot open " + path);
  HashingReader r(in_);
  char magic[8];
  r.bytes(magic, 8, "trajectory magic");
  if (std::string_view(magic, 8) != kTrajMagic) throw FormatError(path + ": not a trajectory file");
  const auto version = r.pod<std::uint32_t>("format version");
  if (version != kTrajectoryFormatVersion) {
    throw FormatError(path + ": trajectory format version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kTrajectoryFormatVersion) + ")");
  }
  env_id_ = r.str("env id");
  const std::string schema = r.str("schema");
  const auto fields = r.pod<std::uint32_t>("field count");
  if (schema != kTrajectorySchema || fields != kFieldCount) {
    throw FormatError(path + ": unexpected field schema '" + schema + "'");
  }
  count_ = r.pod<std::uint64_t>("record count");
  has_embeddings_ = r.pod<std::uint8_t>("embedding flag") != 0;
  boundary_flag_ = r.pod<std::uint8_t>("boundary flag") != 0;
  const auto expected = r.hash();
  const auto stored = detail::read_pod<std::uint64_t>(in_, "header checksum");
  if (stored != expected) throw FormatError(path + ": header checksum mismatch");
}

std::optional<TrajectoryReader::Record> TrajectoryReader::next() {
  if (read_ == count_) return std::nullopt;
  const auto offset = static_cast<long long>(in_.tellg());
  HashingReader r(in_);
  std::array<double, kFieldCount> f{};
  std::uint64_t index = 0, stored = 0;
  try {
    index = r.pod<std::uint64_t>("record index");
    r.bytes(f.data(), sizeof(double) * f.size(), "record fields");
    stored = detail::read_pod<std::uint64_t>(in_, "record checksum");
  } catch (const FormatError&) {
    throw FormatError(path_ + ": truncated at record " + std::to_string(read_) + " (byte offset " +
                      std::to_string(offset) + ")");
  }
  if (stored != r.hash() || index != read_) {
    throw FormatError(path_ + ": corrupted record " + std::to_string(read_) + " (byte offset " +
                      std::to_string(offset) + ")");
  }
  ++read_;
  Record rec;
  rec.time = f[0];
  rec.pose = PoseState{f[1], f[2], f[3], f[4], f[5], f[6], Frame::World};
  rec.control = Control{f[7], f[8]};
  for (int k = 0; k < kEmbedDim; ++k) {
    rec.e_elev[k] = f[9 + k];
    rec.e_sem[k] = f[9 + kEmbedDim + k];
  }
  return rec;
}

Trajectory read_trajectory(const std::string& path) {
  TrajectoryReader reader(path);
  Trajectory t;
  t.env_id = reader.env_id();
  t.boundary_flag = reader.boundary_flag();
  const auto n = static_cast<std::size_t>(reader.record_count());
  t.time.reserve(n);
  t.poses.reserve(n);
  t.controls.reserve(n);
  while (auto rec = reader.next()) {
    t.time.push_back(rec->time);
    t.poses.push_back(rec->pose);
    t.controls.push_back(rec->control);
    if (reader.has_embeddings()) {
      t.e_elev.push_back(rec->e_elev);
      t.e_sem.push_back(rec->e_sem);
    }
  }
  return t;
}

void write_environment(const std::string& path, const EnvironmentSpec& env) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  HashingWriter w(os);
  w.bytes(kEnvMagic.data(), kEnvMagic.size());
  w.pod<std::uint32_t>(kEnvironmentFormatVersion);
  w.str(env.id);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(env.level));
  w.pod<std::uint64_t>(env.seed);
  w.pod<double>(env.side);
  w.pod<std::int32_t>(env.height.rows);
  w.pod<std::int32_t>(env.height.cols);
  w.pod<double>(env.height.resolution);
  for (const auto& p : env.params) {
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(p.kind));
    w.pod<double>(p.friction);
    w.pod<double>(p.restitution);
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(p.hardness));
    w.pod<double>(p.soil.cohesion);
    w.pod<double>(p.soil.stiffness);
    w.pod<double>(p.soil.hardening);
    w.pod<double>(p.nominal);
  }
  w.bytes(env.height.data.data(), sizeof(float) * env.height.data.size());
  w.bytes(env.semantic.data.data(), env.semantic.data.size());
  const std::uint64_t h = w.hash();
  detail::write_pod(os, h);
  if (!os) throw FormatError("write failed for " + path);
}

EnvironmentSpec read_environment(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  HashingReader r(is);
  char magic[8];
  r.bytes(magic, 8, "environment magic");
  if (std::string_view(magic, 8) != kEnvMagic) throw FormatError(path + ": not an environment file");
  const auto version = r.pod<std::uint32_t>("format version");
  if (version != kEnvironmentFormatVersion) {
    throw FormatError(path + ": environment format version " + std::to_string(version) + " unsupported");
  }
  EnvironmentSpec env;
  env.id = r.str("env id");
  const auto level = r.pod<std::uint8_t>("level");
  if (level > 2) throw FormatError(path + ": bad elevation level");
  env.level = static_cast<ElevationLevel>(level);
  env.seed = r.pod<std::uint64_t>("seed");
  env.side = r.pod<double>("side");
  const auto rows = r.pod<std::int32_t>("rows");
  const auto cols = r.pod<std::int32_t>("cols");
  const auto res = r.pod<double>("resolution");
  if (rows < 2 || cols < 2 || rows > 100000 || cols > 100000 || !(res > 0.0)) {
    throw FormatError(path + ": implausible raster dimensions");
  }
  for (auto& p : env.params) {
    p.kind = static_cast<TerrainKind>(r.pod<std::uint8_t>("class kind"));
    p.friction = r.pod<double>("friction");
    p.restitution = r.pod<double>("restitution");
    p.hardness = static_cast<Hardness>(r.pod<std::uint8_t>("hardness"));
    p.soil.cohesion = r.pod<double>("cohesion");
    p.soil.stiffness = r.pod<double>("stiffness");
    p.soil.hardening = r.pod<double>("hardening");
    p.nominal = r.pod<double>("nominal");
  }
  env.height = Grid<float>(rows, cols, res);
  env.semantic = Grid<std::uint8_t>(rows, cols, res);
  r.bytes(env.height.data.data(), sizeof(float) * env.height.data.size(), "heightfield");
  r.bytes(env.semantic.data.data(), env.semantic.data.size(), "semantic raster");
  const auto expected = r.hash();
  const auto stored = detail::read_pod<std::uint64_t>(is, "environment checksum");
  if (stored != expected) throw FormatError(path + ": environment checksum mismatch");
  for (auto c : env.semantic.data)
    if (c >= kNumClasses) throw FormatError(path + ": semantic class out of range");
  return env;
}

std::size_t Dataset::trajectory_count() const {
  std::size_t n = 0;
  for (const auto& e : envs) n += e.trajectories.size();
  return n;
}

const EnvironmentData& Dataset::env(const std::string& id) const {
  for (const auto& e : envs)
    if (e.id == id) return e;
  throw InvalidArgument("dataset has no environment '" + id + "'");
}

Dataset ablate(const Dataset& data, bool drop_elevation, bool drop_semantic) {
  Dataset out = data;
  for (auto& env : out.envs) {
    for (auto& t : env.trajectories) {
      if (drop_elevation)
        for (auto& e : t.e_elev) e.setZero();
      if (drop_semantic)
        for (auto& e : t.e_sem) e.setZero();
    }
  }
  return out;
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = detail::fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace kinofe
