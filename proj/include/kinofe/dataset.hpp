#pragma once

#include "kinofe/world.hpp"

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace kinofe {

inline constexpr std::uint32_t kTrajectoryFormatVersion = 1;
inline constexpr std::uint32_t kEnvironmentFormatVersion = 1;
inline constexpr int kDatasetVersion = 1;

/// Field order of one trajectory record.
inline constexpr const char* kTrajectorySchema =
    "t,x,y,z,roll,pitch,yaw,steer,speed,e_elev[8],e_sem[8]";

void write_trajectory(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory(const std::string& path);

/// Record-at-a-time reader. Checks the header on open and every record's
/// checksum as it streams; failures name the record index and byte offset.
class TrajectoryReader {
 public:
  explicit TrajectoryReader(const std::string& path);

  const std::string& env_id() const { return env_id_; }
  std::uint64_t record_count() const { return count_; }
  bool has_embeddings() const { return has_embeddings_; }
  bool boundary_flag() const { return boundary_flag_; }

  struct Record {
    double time = 0.0;
    PoseState pose;
    Control control;
    Vec8 e_elev = Vec8::Zero();
    Vec8 e_sem = Vec8::Zero();
  };

  /// Next record, or nullopt after the last one.
  std::optional<Record> next();

 private:
  std::string path_;
  std::ifstream in_;
  std::string env_id_;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
  bool has_embeddings_ = false;
  bool boundary_flag_ = false;
};

void write_environment(const std::string& path, const EnvironmentSpec& env);
EnvironmentSpec read_environment(const std::string& path);

/// Trajectories of one environment, as used by training and evaluation.
struct EnvironmentData {
  std::string id;
  ElevationLevel level = ElevationLevel::Low;
  std::vector<Trajectory> trajectories;
};

struct Dataset {
  std::vector<EnvironmentData> envs;

  std::size_t trajectory_count() const;
  const EnvironmentData& env(const std::string& id) const;
};

/// Dataset with the embedding slots selected by the flags zeroed in every record.
Dataset ablate(const Dataset& data, bool drop_elevation, bool drop_semantic);

/// FNV-1a over a file's bytes.
std::uint64_t file_checksum(const std::string& path);
std::string hex64(std::uint64_t v);

}  // namespace kinofe
