#include "activeview/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace av {

static_assert(std::endian::native == std::endian::little, "shard I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'I', 'P', 'T', 'K'};

nlohmann::json spec_to_json(const InstructionSpec& s) {
  nlohmann::json j{{"target_id", s.target_id}, {"qualifier", qualifier_name(s.qualifier)}};
  j["functional_suffix"] = s.functional_suffix ? nlohmann::json(*s.functional_suffix) : nlohmann::json();
  j["disambiguation_point"] = s.disambiguation_point
                                  ? nlohmann::json({(*s.disambiguation_point)[0], (*s.disambiguation_point)[1]})
                                  : nlohmann::json();
  return j;
}

InstructionSpec spec_from_json(const nlohmann::json& j) {
  InstructionSpec s;
  s.target_id = j.at("target_id").get<int>();
  s.qualifier = qualifier_from_name(j.at("qualifier").get<std::string>());
  if (!j.at("functional_suffix").is_null()) s.functional_suffix = j.at("functional_suffix").get<int>();
  if (!j.at("disambiguation_point").is_null()) {
    const auto& p = j.at("disambiguation_point");
    s.disambiguation_point = std::array<int, 2>{p.at(0).get<int>(), p.at(1).get<int>()};
  }
  return s;
}

template <typename T>
void append_raw(std::string& out, const std::vector<T>& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> take_raw(const char*& p, const char* end, size_t n) {
  if (static_cast<size_t>(end - p) < n * sizeof(T)) throw FormatError("record payload truncated");
  std::vector<T> v(n);
  std::memcpy(v.data(), p, n * sizeof(T));
  p += n * sizeof(T);
  return v;
}

std::vector<const Frame*> all_frames(const TaskRecord& r) {
  std::vector<const Frame*> f;
  for (const auto& fr : r.frames) f.push_back(&fr);
  f.push_back(&r.target);
  return f;
}

}  // namespace

std::string serialize_record(const TaskRecord& r) {
  const auto frames = all_frames(r);
  const int64_t n1 = static_cast<int64_t>(frames.size());
  const int h = r.target.height;
  const int w = r.target.width;
  for (const Frame* f : frames) {
    if (f->width != w || f->height != h) throw FormatError("frames differ in resolution");
  }
  const int64_t t = static_cast<int64_t>(r.instruction_tokens.size());

  nlohmann::json header;
  header["arrays"] = nlohmann::json::array({
      {{"name", "rgb"}, {"dtype", "f32"}, {"shape", {n1, h, w, 3}}},
      {{"name", "depth"}, {"dtype", "f32"}, {"shape", {n1, h, w}}},
      {{"name", "mask"}, {"dtype", "u16"}, {"shape", {n1, h, w}}},
      {{"name", "poses"}, {"dtype", "f32"}, {"shape", {n1, 9}}},
      {{"name", "tokens"}, {"dtype", "i32"}, {"shape", {t}}},
  });
  header["meta"] = {{"scene", scene_to_json(r.scene)},
                    {"spec", spec_to_json(r.spec)},
                    {"start_world", pose_to_json(r.start_world)},
                    {"seed", r.seed},
                    {"index", r.index}};
  const std::string hs = header.dump();

  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kTaskFormatVersion));
  const uint32_t hl = static_cast<uint32_t>(hs.size());
  out.append(reinterpret_cast<const char*>(&hl), 4);
  out += hs;
  for (const Frame* f : frames) append_raw(out, f->rgb);
  for (const Frame* f : frames) append_raw(out, f->depth);
  for (const Frame* f : frames) append_raw(out, f->mask);
  for (const Frame* f : frames) {
    const PoseEncoding e = encode_pose(f->pose);
    std::vector<float> pf(e.begin(), e.end());
    append_raw(out, pf);
  }
  append_raw(out, r.instruction_tokens);
  return out;
}

void write_record(std::ostream& os, const TaskRecord& r) {
  const std::string bytes = serialize_record(r);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed");
}

namespace {

size_t payload_size(const nlohmann::json& arrays) {
  size_t total = 0;
  for (const auto& a : arrays) {
    size_t n = 1;
    for (const auto& d : a.at("shape")) n *= d.get<size_t>();
    const std::string dt = a.at("dtype").get<std::string>();
    const size_t es = dt == "u16" ? 2 : dt == "u8" ? 1 : 4;
    total += n * es;
  }
  return total;
}

TaskRecord decode(const nlohmann::json& header, const char* p, const char* end) {
  const auto& arrays = header.at("arrays");
  if (arrays.size() != 5) throw FormatError("unexpected array count");
  const std::array<std::pair<const char*, const char*>, 5> expect = {
      {{"rgb", "f32"}, {"depth", "f32"}, {"mask", "u16"}, {"poses", "f32"}, {"tokens", "i32"}}};
  for (size_t i = 0; i < 5; ++i) {
    if (arrays[i].at("name") != expect[i].first || arrays[i].at("dtype") != expect[i].second) {
      throw FormatError("unexpected array layout");
    }
  }
  const auto shape = arrays[0].at("shape").get<std::vector<int64_t>>();
  if (shape.size() != 4 || shape[3] != 3 || shape[0] < 1) throw FormatError("bad rgb shape");
  const size_t n1 = static_cast<size_t>(shape[0]);
  const int h = static_cast<int>(shape[1]);
  const int w = static_cast<int>(shape[2]);
  const size_t px = static_cast<size_t>(h) * w;
  const size_t t = arrays[4].at("shape").at(0).get<size_t>();

  std::vector<Frame> frames(n1);
  for (auto& f : frames) {
    f.width = w;
    f.height = h;
  }
  for (auto& f : frames) f.rgb = take_raw<float>(p, end, px * 3);
  for (auto& f : frames) f.depth = take_raw<float>(p, end, px);
  for (auto& f : frames) f.mask = take_raw<uint16_t>(p, end, px);
  for (auto& f : frames) {
    const auto e = take_raw<float>(p, end, 9);
    // Poses were stored from f32-rounded values; rebuild them without renormalizing.
    f.pose.q = {e[0], e[1], e[2], e[3]};
    f.pose.t = Vec3(e[4], e[5], e[6]);
    f.pose.fov = Vec2(e[7], e[8]);
  }
  TaskRecord r;
  r.instruction_tokens = take_raw<int32_t>(p, end, t);
  r.target = std::move(frames.back());
  frames.pop_back();
  r.frames = std::move(frames);
  const auto& meta = header.at("meta");
  r.scene = scene_from_json(meta.at("scene"));
  r.spec = spec_from_json(meta.at("spec"));
  r.start_world = pose_from_json(meta.at("start_world"));
  r.seed = meta.at("seed").get<uint64_t>();
  r.index = meta.at("index").get<int64_t>();
  return r;
}

nlohmann::json read_header(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("unexpected end of stream");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic, not an .iptask record");
  char version = 0;
  is.read(&version, 1);
  if (static_cast<uint8_t>(version) != kTaskFormatVersion) {
    throw FormatError(fmt::format("unsupported .iptask version {}", static_cast<int>(version)));
  }
  uint32_t hl = 0;
  is.read(reinterpret_cast<char*>(&hl), 4);
  std::string hs(hl, '\0');
  if (!is.read(hs.data(), hl)) throw FormatError("record header truncated");
  try {
    return nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad record header: ") + e.what());
  }
}

}  // namespace

TaskRecord read_record(std::istream& is) {
  const nlohmann::json header = read_header(is);
  const size_t n = payload_size(header.at("arrays"));
  std::string payload(n, '\0');
  if (!is.read(payload.data(), static_cast<std::streamsize>(n))) throw FormatError("record payload truncated");
  return decode(header, payload.data(), payload.data() + payload.size());
}

TaskRecord deserialize_record(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_record(is);
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& e : records) {
    recs.push_back({{"file", e.file},
                    {"offset", e.offset},
                    {"seed", e.seed},
                    {"index", e.index},
                    {"skipped", e.skipped},
                    {"reason", e.reason}});
  }
  nlohmann::json p;
  av::to_json(p, params);
  p.erase("workers");  // execution detail; keeps manifests identical across worker counts
  return {{"schema_version", schema_version}, {"params", p}, {"seed", seed}, {"count", count}, {"records", recs}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kManifestSchemaVersion) {
    throw FormatError(fmt::format("unsupported manifest schema_version {}", m.schema_version));
  }
  av::from_json(j.at("params"), m.params);
  m.seed = j.at("seed").get<uint64_t>();
  m.count = j.at("count").get<int64_t>();
  for (const auto& e : j.at("records")) {
    ManifestEntry me;
    me.file = e.at("file").get<std::string>();
    me.offset = e.at("offset").get<int64_t>();
    me.seed = e.at("seed").get<uint64_t>();
    me.index = e.at("index").get<int64_t>();
    me.skipped = e.at("skipped").get<bool>();
    me.reason = e.value("reason", "");
    m.records.push_back(std::move(me));
  }
  return m;
}

size_t Manifest::num_valid() const {
  return static_cast<size_t>(std::count_if(records.begin(), records.end(), [](const auto& e) { return !e.skipped; }));
}

uint64_t record_seed(uint64_t dataset_seed, int64_t index) {
  return mix_seed(dataset_seed, static_cast<uint64_t>(index));
}

Manifest generate_dataset(int64_t count, uint64_t seed, const std::filesystem::path& out_dir,
                          const MicroworldParams& params) {
  params.validate();
  if (count < 0) throw GenerationError("count must be non-negative");
  std::filesystem::create_directories(out_dir);

  Manifest m;
  m.params = params;
  m.seed = seed;
  m.count = count;
  m.records.resize(static_cast<size_t>(count));

  const int64_t per_shard = params.records_per_shard;
  const int64_t num_shards = (count + per_shard - 1) / per_shard;
  std::atomic<int64_t> next_shard{0};
  std::mutex log_mu;

  auto work = [&] {
    for (int64_t s = next_shard++; s < num_shards; s = next_shard++) {
      const std::string name = fmt::format("shard_{:05d}.iptask", s);
      std::ofstream os(out_dir / name, std::ios::binary | std::ios::trunc);
      if (!os) throw FormatError("cannot open " + (out_dir / name).string());
      int64_t offset = 0;
      for (int64_t i = s * per_shard; i < std::min(count, (s + 1) * per_shard); ++i) {
        ManifestEntry& e = m.records[static_cast<size_t>(i)];
        e.seed = record_seed(seed, i);
        e.index = i;
        try {
          const std::string bytes = serialize_record(generate_task(e.seed, i, params));
          os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
          e.file = name;
          e.offset = offset;
          offset += static_cast<int64_t>(bytes.size());
        } catch (const GenerationError& err) {
          e.skipped = true;
          e.reason = err.what();
          std::lock_guard lk(log_mu);
          spdlog::warn("record {} (seed {}) skipped: {}", i, e.seed, err.what());
        }
      }
      if (!os) throw FormatError("write failed for " + name);
    }
  };

  const int workers = static_cast<int>(std::min<int64_t>(params.workers, std::max<int64_t>(num_shards, 1)));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work();
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
          next_shard = num_shards;
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ofstream mf(out_dir / "manifest.json", std::ios::trunc);
  mf << m.to_json().dump(2) << "\n";
  if (!mf) throw FormatError("cannot write manifest");
  spdlog::info("generated {} records ({} skipped) in {} shards", count, count - static_cast<int64_t>(m.num_valid()),
               num_shards);
  return m;
}

DatasetReader::DatasetReader(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::ifstream is(dir_ / "manifest.json");
  if (!is) throw FormatError("cannot open manifest in " + dir_.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
  manifest_ = Manifest::from_json(j);
  for (size_t i = 0; i < manifest_.records.size(); ++i) {
    if (!manifest_.records[i].skipped) valid_.push_back(i);
  }
}

TaskRecord DatasetReader::load(size_t i) const {
  if (i >= valid_.size()) throw FormatError("record index out of range");
  const ManifestEntry& e = manifest_.records[valid_[i]];
  std::ifstream is(dir_ / e.file, std::ios::binary);
  if (!is) throw FormatError("cannot open shard " + e.file);
  is.seekg(e.offset);
  return read_record(is);
}

std::vector<TaskRecord> DatasetReader::load_all() const {
  std::vector<TaskRecord> out;
  out.reserve(size());
  for (size_t i = 0; i < size(); ++i) out.push_back(load(i));
  return out;
}

}  // namespace av
