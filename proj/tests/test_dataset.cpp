#include "kinofe/dataset.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

using namespace kinofe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("kinofe_dataset_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Trajectory sample_trajectory(bool embedded, int n = 25) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Trajectory t;
  t.env_id = "low_03";
  for (int i = 0; i < n; ++i) {
    t.time.push_back(0.1 * i);
    t.poses.push_back(PoseState{u(rng), u(rng), u(rng), 0.1 * u(rng), 0.1 * u(rng), u(rng)});
    t.controls.push_back(Control{u(rng), 1.5 + u(rng)});
    if (embedded) {
      t.e_elev.push_back(Vec8::Random());
      t.e_sem.push_back(Vec8::Random());
    }
  }
  t.boundary_flag = true;
  return t;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST_CASE("trajectory files round trip") {
  TempDir dir;
  for (bool embedded : {false, true}) {
    const auto t = sample_trajectory(embedded);
    write_trajectory(dir.file("t.traj"), t);
    CHECK(read_trajectory(dir.file("t.traj")) == t);
  }
  Trajectory empty;
  empty.env_id = "x";
  write_trajectory(dir.file("e.traj"), empty);
  CHECK(read_trajectory(dir.file("e.traj")).size() == 0);
}

TEST_CASE("streaming reader") {
  TempDir dir;
  const auto t = sample_trajectory(true);
  write_trajectory(dir.file("t.traj"), t);
  TrajectoryReader r(dir.file("t.traj"));
  CHECK(r.env_id() == "low_03");
  CHECK(r.record_count() == t.size());
  CHECK(r.has_embeddings());
  CHECK(r.boundary_flag());
  std::size_t i = 0;
  while (auto rec = r.next()) {
    CHECK(rec->pose == t.poses[i]);
    CHECK(rec->e_sem == t.e_sem[i]);
    ++i;
  }
  CHECK(i == t.size());
}

TEST_CASE("corrupted trajectory files are rejected") {
  TempDir dir;
  write_trajectory(dir.file("t.traj"), sample_trajectory(true));
  const std::string bytes = slurp(dir.file("t.traj"));

  SUBCASE("flipped byte in the last record") {
    std::string bad = bytes;
    bad[bad.size() - 20] ^= 0x5a;
    spit(dir.file("b.traj"), bad);
    try {
      read_trajectory(dir.file("b.traj"));
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("record") != std::string::npos);
    }
  }
  SUBCASE("truncated") {
    spit(dir.file("b.traj"), bytes.substr(0, bytes.size() - 7));
    CHECK_THROWS_AS(read_trajectory(dir.file("b.traj")), FormatError);
  }
  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = '#';
    spit(dir.file("b.traj"), bad);
    CHECK_THROWS_AS(TrajectoryReader(dir.file("b.traj")), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS(read_trajectory(dir.file("missing.traj")));
  }
}

TEST_CASE("environment files round trip") {
  TempDir dir;
  WorldConfig cfg;
  cfg.side = 20.0;
  cfg.resolution = 0.25;
  cfg.voronoi_sites = 6;
  const auto env = generate_environment(ElevationLevel::High, 17, cfg, "high_01");
  write_environment(dir.file("e.env"), env);
  const auto back = read_environment(dir.file("e.env"));
  CHECK(back.id == env.id);
  CHECK(back.level == env.level);
  CHECK(back.seed == env.seed);
  CHECK(back.height == env.height);
  CHECK(back.semantic == env.semantic);
  for (int i = 0; i < kNumClasses; ++i) CHECK(back.params[i].friction == env.params[i].friction);
  CHECK(back.friction_at(7.3, 4.1) == env.friction_at(7.3, 4.1));

  std::string bytes = slurp(dir.file("e.env"));
  bytes[bytes.size() / 2] ^= 0x01;
  spit(dir.file("bad.env"), bytes);
  CHECK_THROWS_AS(read_environment(dir.file("bad.env")), FormatError);
}

TEST_CASE("ablation zeroes only the selected embeddings") {
  Dataset d;
  d.envs.push_back(EnvironmentData{"a", ElevationLevel::Low, {sample_trajectory(true, 5)}});
  const auto& t = d.envs[0].trajectories[0];
  const auto no_sem = ablate(d, false, true).envs[0].trajectories[0];
  CHECK(no_sem.e_elev == t.e_elev);
  for (const auto& e : no_sem.e_sem) CHECK(e.isZero(0.0));
  CHECK(no_sem.poses == t.poses);
  const auto none = ablate(d, true, true).envs[0].trajectories[0];
  for (const auto& e : none.e_elev) CHECK(e.isZero(0.0));
  CHECK(ablate(d, false, false).envs[0].trajectories[0] == t);
}

TEST_CASE("dataset lookup and checksums") {
  Dataset d;
  d.envs.push_back(EnvironmentData{"a", ElevationLevel::Low, {sample_trajectory(false), sample_trajectory(false)}});
  CHECK(d.trajectory_count() == 2);
  CHECK(d.env("a").id == "a");
  CHECK_THROWS_AS(d.env("b"), InvalidArgument);

  TempDir dir;
  spit(dir.file("x"), "");
  CHECK(hex64(file_checksum(dir.file("x"))) == "cbf29ce484222325");  // FNV-1a offset basis
  spit(dir.file("x"), "a");
  CHECK(hex64(file_checksum(dir.file("x"))) == "af63dc4c8601ec8c");
}
