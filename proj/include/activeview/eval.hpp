#pragma once

// Per-task metrics, suite aggregation with reference baselines, and the
// closed-loop observe/predict runner.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeview/dataset.hpp"
#include "activeview/model.hpp"
#include "activeview/voxel.hpp"

namespace av {

struct EvalParams {
  double voxel_resolution = kDefaultVoxelResolution;
  int workers = 1;
  uint64_t seed = 0;  // random baseline stream
  bool baselines = true;
  bool include_gt = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalParams& p);
void from_json(const nlohmann::json& j, EvalParams& p);

struct TaskMetrics {
  double iou = 0;
  double e_t = 0;
  double e_r = 0;
  double target_coverage = 0;
  bool degenerate = false;  // predicted encoding needed clamping on decode
};

nlohmann::json metrics_json(const TaskMetrics& m);

/// Metrics of a relative (start-frame) pose against the record's target.
TaskMetrics eval_pose(const TaskRecord& record, const DecodedPose& predicted, const VoxelGrid& grid);
TaskMetrics eval_pose(const TaskRecord& record, const DecodedPose& predicted, double voxel_resolution);

/// Maps the current task state (context frames, instruction, scene) to a
/// relative target pose.
using PosePredictor = std::function<DecodedPose(const TaskRecord&)>;

PosePredictor model_predictor(Model<float>& model);
PosePredictor gt_predictor();

enum class BaselineKind { kStart, kRandom };

/// Relative pose of a reference baseline. Start: identity. Random: uniform
/// free position in the room (0.2 clearance), uniform yaw, pitch in
/// [-30, 30] degrees, no roll. Throws GenerationError after 1000 failed draws.
CameraPose baseline_pose(BaselineKind kind, const TaskRecord& record, Rng& rng);

TaskMetrics eval_task(Model<float>& model, const TaskRecord& record, double voxel_resolution);

struct MethodSummary {
  std::string name;
  int count = 0;
  int failures = 0;
  int degenerate = 0;
  double mean_iou = 0, median_iou = 0;
  double mean_e_t = 0, median_e_t = 0;
  double mean_e_r = 0, median_e_r = 0;
  double mean_coverage = 0, median_coverage = 0;
  std::vector<TaskMetrics> per_record;
  std::vector<int64_t> record_index;
  std::vector<PoseEncoding> poses;  // predicted relative pose per record
};

MethodSummary summarize(const std::string& name, const std::vector<TaskMetrics>& metrics);

struct SuiteReport {
  std::vector<MethodSummary> methods;

  const MethodSummary* find(const std::string& name) const;
  nlohmann::json to_json() const;
  /// Aligned table: method | n | IoU% | e_t | e_r | coverage%.
  std::string to_text() const;
};

/// Evaluates `predictor` (named `name`) plus the start and random baselines
/// (and optionally ground truth) on `count` records. Per-record failures are
/// logged, counted and excluded.
SuiteReport eval_suite(const std::string& name, const PosePredictor& predictor,
                       const std::function<TaskRecord(size_t)>& load, size_t count, const EvalParams& params);
SuiteReport eval_suite(Model<float>& model, const DatasetReader& data, const EvalParams& params);

// ---- closed loop ----------------------------------------------------------------------

struct LoopStep {
  int step = 0;
  DecodedPose predicted;  // relative to the original start frame
  Frame observation;      // render at the predicted pose
  TaskMetrics metrics;
  int context_size = 0;   // frames fed to the predictor at this step
};

/// Runs `steps` rounds of predict -> render -> append. Frame 0 is never
/// evicted; beyond max_context frames the oldest non-start frame is dropped.
std::vector<LoopStep> closed_loop_run(const PosePredictor& predictor, const TaskRecord& initial, int steps,
                                      int max_context, double voxel_resolution);

nlohmann::json loop_json(const std::vector<LoopStep>& steps);

/// Records whose target covers less than `max_start_coverage` of the start frame.
bool occluded_start(const TaskRecord& record, double max_start_coverage = 0.02);

/// Per-step mean target coverage (and IoU) over several loop runs.
struct LoopTable {
  std::vector<double> mean_coverage;
  std::vector<double> mean_iou;
  int runs = 0;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

LoopTable tabulate(const std::vector<std::vector<LoopStep>>& runs);

}  // namespace av
