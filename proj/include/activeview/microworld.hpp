#pragma once

// Procedural indoor box scenes, a raycast renderer, and the task sampler that
// turns scenes into supervised view-prediction records.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeview/geometry.hpp"
#include "activeview/scene.hpp"

namespace av {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic 64-bit generator with a portable uniform helper; the
/// standard distributions are implementation-defined, so they are avoided.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi_inclusive);  // closed range
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

uint64_t mix_seed(uint64_t seed, uint64_t stream);

struct MicroworldParams {
  int width = 64;
  int height = 64;
  double fov_deg = 70.0;
  int min_objects = 3;
  int max_objects = 8;
  double room_min_xy = 5.0;
  double room_max_xy = 7.0;
  double room_min_height = 2.7;
  double room_max_height = 3.0;
  double multiplicity_prob = 0.3;  // chance a new object repeats a used category
  int min_context = 2;
  int max_context = 6;
  double voxel_resolution = 0.15;
  int records_per_shard = 64;
  int workers = 1;

  Resolution resolution() const { return {width, height}; }
  Vec2 fov() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const MicroworldParams& p);
void from_json(const nlohmann::json& j, MicroworldParams& p);

Scene generate_scene(uint64_t seed, const MicroworldParams& params);

struct Frame {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;     // H*W*3, row-major, values in [0, 1]
  std::vector<float> depth;   // H*W, camera-frame z; 0 = no hit
  std::vector<uint16_t> mask; // H*W, 0 = background/room, else object id
  CameraPose pose;

  size_t pixels() const { return static_cast<size_t>(width) * height; }
  double coverage(int object_id) const;
};

Frame render(const Scene& scene, const CameraPose& g, const Resolution& res);

enum class Qualifier : uint8_t { kNone, kEyeLevel, kFromAbove, kCloseUp };
std::string qualifier_name(Qualifier q);
Qualifier qualifier_from_name(const std::string& s);

inline constexpr double kMinTargetCoverage = 0.03;
inline constexpr double kMaxStartCoverage = 0.20;

/// Look-at view of `object` in a qualifier-dependent distance band, resampled
/// until the object covers >= 3% of a test render and the camera is free.
CameraPose sample_target_view(const Scene& scene, const SceneObject& object, Qualifier qualifier,
                              const MicroworldParams& params, Rng& rng);

/// Start pose followed by n-1 context poses along a coarse walk through the
/// room, drifting toward the target viewpoint.
std::vector<CameraPose> sample_context_trajectory(const Scene& scene, const SceneObject& target,
                                                  const CameraPose& target_pose, int n,
                                                  const MicroworldParams& params, Rng& rng);

struct InstructionSpec {
  int target_id = 0;
  Qualifier qualifier = Qualifier::kNone;
  std::optional<int> functional_suffix;
  std::optional<std::array<int, 2>> disambiguation_point;
};

/// Raised when the disambiguation point cannot be placed in the start image.
class DisambiguationError : public GenerationError {
 public:
  using GenerationError::GenerationError;
};

/// Pixel of the object center in the start frame, quantized. Throws
/// DisambiguationError when the center is behind or outside the start camera.
std::array<int, 2> disambiguation_pixel(const Scene& scene, int object_id, const Frame& start);

/// Template text for the instruction; point coordinates come from the spec.
std::string instruction_text(const InstructionSpec& spec, const Scene& scene);
std::vector<int32_t> compose_instruction(const InstructionSpec& spec, const Frame& start,
                                         const Scene& scene);

struct TaskRecord {
  std::vector<Frame> frames;  // N context frames, poses relative to frames[0]
  std::vector<int32_t> instruction_tokens;
  Frame target;               // ground-truth frame N, relative pose
  InstructionSpec spec;
  Scene scene;
  CameraPose start_world;     // world pose of frames[0]
  uint64_t seed = 0;
  int64_t index = 0;

  int num_context() const { return static_cast<int>(frames.size()); }
  Resolution resolution() const { return {target.width, target.height}; }
  /// Relative pose into the world frame of the scene.
  CameraPose to_world(const CameraPose& relative) const { return compose(start_world, relative); }
};

/// Full sampling pipeline for one record. Throws GenerationError on failure.
TaskRecord generate_task(uint64_t seed, int64_t index, const MicroworldParams& params);

/// Violations of the record invariants; empty when the record is valid.
std::vector<std::string> validate_record(const TaskRecord& record);

nlohmann::json scene_to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);
nlohmann::json pose_to_json(const CameraPose& g);
CameraPose pose_from_json(const nlohmann::json& j);

}  // namespace av
