#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "activeview/dataset.hpp"

using namespace av;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("av_test_dataset_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("record serialization round-trips bit-identically") {
  const MicroworldParams p;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const TaskRecord r = generate_task(seed, static_cast<int64_t>(seed), p);
    const std::string bytes = serialize_record(r);
    CHECK(bytes.substr(0, 4) == "IPTK");
    CHECK(static_cast<uint8_t>(bytes[4]) == kTaskFormatVersion);
    const TaskRecord back = deserialize_record(bytes);
    CHECK(serialize_record(back) == bytes);
    REQUIRE(back.num_context() == r.num_context());
    for (int i = 0; i < r.num_context(); ++i) {
      CHECK(back.frames[i].rgb == r.frames[i].rgb);
      CHECK(back.frames[i].depth == r.frames[i].depth);
      CHECK(back.frames[i].mask == r.frames[i].mask);
      CHECK(encode_pose(back.frames[i].pose) == encode_pose(r.frames[i].pose));
    }
    CHECK(encode_pose(back.target.pose) == encode_pose(r.target.pose));
    CHECK(encode_pose(back.start_world) == encode_pose(r.start_world));
    CHECK(back.instruction_tokens == r.instruction_tokens);
    CHECK(scene_to_json(back.scene) == scene_to_json(r.scene));
    CHECK(validate_record(back).empty());
  }
}

TEST_CASE("corrupt records are rejected") {
  const std::string bytes = serialize_record(generate_task(1, 0, MicroworldParams{}));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_record(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(deserialize_record(bad), FormatError);
  CHECK_THROWS_AS(deserialize_record(bytes.substr(0, bytes.size() - 10)), FormatError);
}

TEST_CASE("generate_dataset: empty dataset") {
  const fs::path dir = scratch("empty");
  const Manifest m = generate_dataset(0, 1, dir, MicroworldParams{});
  CHECK(m.records.empty());
  const auto files = dir_bytes(dir);
  CHECK(files.size() == 1);
  CHECK(files.count("manifest.json") == 1);
  CHECK(DatasetReader(dir).size() == 0);
  fs::remove_all(dir);
}

TEST_CASE("generate_dataset is byte-identical across reruns and worker counts") {
  MicroworldParams p;
  p.records_per_shard = 3;
  const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
  generate_dataset(8, 42, a, p);
  generate_dataset(8, 42, b, p);
  p.workers = 3;
  generate_dataset(8, 42, c, p);
  const auto ba = dir_bytes(a);
  CHECK(ba.size() == 4);  // three shards plus the manifest
  CHECK(ba == dir_bytes(b));
  CHECK(ba == dir_bytes(c));

  const DatasetReader reader(a);
  CHECK(reader.manifest().records.size() == 8);
  for (size_t i = 0; i < reader.size(); ++i) {
    const TaskRecord r = reader.load(i);
    CHECK(validate_record(r).empty());
    const auto& e = reader.manifest().records[static_cast<size_t>(r.index)];
    CHECK(e.seed == r.seed);
    CHECK(e.seed == record_seed(42, r.index));
    CHECK(serialize_record(r) == serialize_record(generate_task(e.seed, r.index, p)));
  }
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("manifest json round-trip") {
  Manifest m;
  m.seed = 7;
  m.count = 2;
  m.records = {{"shard_00000.iptask", 0, 11, 0, false, ""}, {"", -1, 12, 1, true, "no view"}};
  const Manifest back = Manifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(back.num_valid() == 1);
  auto j = m.to_json();
  j["schema_version"] = 99;
  CHECK_THROWS_AS(Manifest::from_json(j), FormatError);
}

TEST_CASE("500 generated records satisfy the record validator") {
  const fs::path dir = scratch("500");
  const Manifest m = generate_dataset(500, 2024, dir, MicroworldParams{});
  const DatasetReader reader(dir);
  CHECK(reader.size() == m.num_valid());
  CHECK(m.num_valid() >= 490);
  for (size_t i = 0; i < reader.size(); ++i) {
    const auto errs = validate_record(reader.load(i));
    CHECK(errs.empty());
  }
  fs::remove_all(dir);
}
