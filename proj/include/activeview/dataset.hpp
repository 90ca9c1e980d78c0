#pragma once

// .iptask shard I/O and the parallel dataset generator.
//
// Record block layout (little-endian):
//   "IPTK" | u8 version | u32 header length | JSON header | payloads
// The header lists {name, dtype, shape} for rgb, depth, mask, poses and tokens
// in payload order and carries scene/spec metadata under "meta". A shard file
// is a concatenation of record blocks.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeview/microworld.hpp"

namespace av {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr uint8_t kTaskFormatVersion = 1;
inline constexpr int kManifestSchemaVersion = 1;

std::string serialize_record(const TaskRecord& r);
void write_record(std::ostream& os, const TaskRecord& r);
/// Reads one record block at the current stream position.
TaskRecord read_record(std::istream& is);
TaskRecord deserialize_record(const std::string& bytes);

struct ManifestEntry {
  std::string file;  // shard file name relative to the dataset dir; empty if skipped
  int64_t offset = -1;
  uint64_t seed = 0;
  int64_t index = 0;
  bool skipped = false;
  std::string reason;
};

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  MicroworldParams params;
  uint64_t seed = 0;
  int64_t count = 0;
  std::vector<ManifestEntry> records;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  size_t num_valid() const;
};

/// Per-record seed; order-independent so any worker may generate any record.
uint64_t record_seed(uint64_t dataset_seed, int64_t index);

/// Writes shard files and manifest.json into out_dir (created if missing).
/// Output bytes depend only on (count, seed, params), never on params.workers.
Manifest generate_dataset(int64_t count, uint64_t seed, const std::filesystem::path& out_dir,
                          const MicroworldParams& params);

class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path dir);

  const Manifest& manifest() const { return manifest_; }
  /// Number of non-skipped records.
  size_t size() const { return valid_.size(); }
  TaskRecord load(size_t i) const;
  std::vector<TaskRecord> load_all() const;

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
  std::vector<size_t> valid_;
};

}  // namespace av
