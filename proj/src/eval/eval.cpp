#include "activeview/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace av {

// ---- params -------------------------------------------------------------------------

void EvalParams::validate() const {
  if (!(voxel_resolution > 0) || !std::isfinite(voxel_resolution))
    throw ConfigError("invalid eval params: voxel_resolution must be positive");
  if (workers < 1) throw ConfigError("invalid eval params: workers must be >= 1");
}

void to_json(nlohmann::json& j, const EvalParams& p) {
  j = {{"voxel_resolution", p.voxel_resolution},
       {"workers", p.workers},
       {"seed", p.seed},
       {"baselines", p.baselines},
       {"include_gt", p.include_gt}};
}

void from_json(const nlohmann::json& j, EvalParams& p) {
  const EvalParams d;
  if (!j.is_object()) throw ConfigError("eval params must be a JSON object");
  const nlohmann::json known = d;
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError(fmt::format("unknown eval key '{}'", key));
  }
  p.voxel_resolution = j.value("voxel_resolution", d.voxel_resolution);
  p.workers = j.value("workers", d.workers);
  p.seed = j.value("seed", d.seed);
  p.baselines = j.value("baselines", d.baselines);
  p.include_gt = j.value("include_gt", d.include_gt);
}

// ---- single task --------------------------------------------------------------------

nlohmann::json metrics_json(const TaskMetrics& m) {
  return {{"iou", m.iou}, {"e_t", m.e_t}, {"e_r", m.e_r}, {"target_coverage", m.target_coverage},
          {"degenerate", m.degenerate}};
}

TaskMetrics eval_pose(const TaskRecord& record, const DecodedPose& predicted, const VoxelGrid& grid) {
  const Resolution res = record.resolution();
  const CameraPose pred_world = record.to_world(predicted.pose);
  const CameraPose gt_world = record.to_world(record.target.pose);

  TaskMetrics m;
  m.iou = view_coverage_iou(visible_voxels(grid, record.scene, pred_world, res),
                            visible_voxels(grid, record.scene, gt_world, res));
  m.e_t = translation_error(predicted.pose.t, record.target.pose.t);
  m.e_r = rotation_geodesic(predicted.pose.q, record.target.pose.q);
  m.target_coverage = render(record.scene, pred_world, res).coverage(record.spec.target_id);
  m.degenerate = !predicted.valid;
  return m;
}

TaskMetrics eval_pose(const TaskRecord& record, const DecodedPose& predicted, double voxel_resolution) {
  return eval_pose(record, predicted, VoxelGrid::from_scene(record.scene, voxel_resolution));
}

PosePredictor model_predictor(Model<float>& model) {
  return [&model](const TaskRecord& r) {
    const ModelOutput out = model.predict(make_input(r));
    return decode_pose(out.poses.back());
  };
}

PosePredictor gt_predictor() {
  return [](const TaskRecord& r) { return DecodedPose{r.target.pose, true}; };
}

CameraPose baseline_pose(BaselineKind kind, const TaskRecord& record, Rng& rng) {
  const Vec2 fov = record.target.pose.fov;
  if (kind == BaselineKind::kStart) return CameraPose::identity(fov);

  constexpr double kClearance = 0.2;
  constexpr double kMaxPitch = std::numbers::pi / 6.0;
  const Aabb& room = record.scene.room;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Vec3 eye;
    for (int k = 0; k < 3; ++k) eye[k] = rng.uniform(room.min[k] + kClearance, room.max[k] - kClearance);
    const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double pitch = rng.uniform(-kMaxPitch, kMaxPitch);
    if (!record.scene.is_free(eye, kClearance)) continue;
    const Vec3 dir(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch));
    const CameraPose world = look_at(eye, eye + dir, fov);
    return compose(inverse(record.start_world), world);
  }
  throw GenerationError("random baseline: no free camera position after 1000 draws");
}

TaskMetrics eval_task(Model<float>& model, const TaskRecord& record, double voxel_resolution) {
  return eval_pose(record, model_predictor(model)(record), voxel_resolution);
}

// ---- aggregation -------------------------------------------------------------------

namespace {

double mean_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nlohmann::json summary_json(const MethodSummary& s) {
  nlohmann::json records = nlohmann::json::array();
  for (size_t i = 0; i < s.per_record.size(); ++i) {
    nlohmann::json r = metrics_json(s.per_record[i]);
    if (i < s.record_index.size()) r["index"] = s.record_index[i];
    if (i < s.poses.size()) r["pose"] = s.poses[i];
    records.push_back(std::move(r));
  }
  return {{"name", s.name},
          {"count", s.count},
          {"failures", s.failures},
          {"degenerate", s.degenerate},
          {"mean", {{"iou", s.mean_iou}, {"e_t", s.mean_e_t}, {"e_r", s.mean_e_r}, {"target_coverage", s.mean_coverage}}},
          {"median",
           {{"iou", s.median_iou}, {"e_t", s.median_e_t}, {"e_r", s.median_e_r}, {"target_coverage", s.median_coverage}}},
          {"records", std::move(records)}};
}

}  // namespace

MethodSummary summarize(const std::string& name, const std::vector<TaskMetrics>& metrics) {
  MethodSummary s;
  s.name = name;
  s.count = static_cast<int>(metrics.size());
  s.per_record = metrics;
  std::vector<double> iou, et, er, cov;
  for (const TaskMetrics& m : metrics) {
    iou.push_back(m.iou);
    et.push_back(m.e_t);
    er.push_back(m.e_r);
    cov.push_back(m.target_coverage);
    s.degenerate += m.degenerate ? 1 : 0;
  }
  s.mean_iou = mean_of(iou);
  s.median_iou = median_of(iou);
  s.mean_e_t = mean_of(et);
  s.median_e_t = median_of(et);
  s.mean_e_r = mean_of(er);
  s.median_e_r = median_of(er);
  s.mean_coverage = mean_of(cov);
  s.median_coverage = median_of(cov);
  return s;
}

const MethodSummary* SuiteReport::find(const std::string& name) const {
  for (const MethodSummary& m : methods) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

nlohmann::json SuiteReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const MethodSummary& m : methods) arr.push_back(summary_json(m));
  return {{"methods", std::move(arr)}};
}

std::string SuiteReport::to_text() const {
  std::string out = fmt::format("{:<12} {:>5} {:>8} {:>8} {:>8} {:>10} {:>6}\n", "method", "n", "IoU%", "e_t",
                                "e_r", "coverage%", "fail");
  for (const MethodSummary& m : methods) {
    out += fmt::format("{:<12} {:>5} {:>8.2f} {:>8.4f} {:>8.4f} {:>10.2f} {:>6}\n", m.name, m.count,
                       100.0 * m.mean_iou, m.mean_e_t, m.mean_e_r, 100.0 * m.mean_coverage, m.failures);
  }
  return out;
}

SuiteReport eval_suite(const std::string& name, const PosePredictor& predictor,
                       const std::function<TaskRecord(size_t)>& load, size_t count, const EvalParams& params) {
  params.validate();
  struct Method {
    std::string name;
    std::function<DecodedPose(const TaskRecord&)> predict;
    std::vector<TaskMetrics> metrics;
    std::vector<int64_t> index;
    std::vector<PoseEncoding> poses;
    int failures = 0;
  };
  std::vector<Method> methods;
  methods.push_back({name, predictor, {}, {}, {}, 0});
  if (params.include_gt) methods.push_back({"gt", gt_predictor(), {}, {}, {}, 0});
  if (params.baselines) {
    methods.push_back({"start", [](const TaskRecord& r) {
                         Rng unused(0);
                         return DecodedPose{baseline_pose(BaselineKind::kStart, r, unused), true};
                       }, {}, {}, {}, 0});
    const uint64_t seed = params.seed;
    methods.push_back({"random", [seed](const TaskRecord& r) {
                         Rng rng(mix_seed(seed, static_cast<uint64_t>(r.index)));
                         return DecodedPose{baseline_pose(BaselineKind::kRandom, r, rng), true};
                       }, {}, {}, {}, 0});
  }

  for (size_t i = 0; i < count; ++i) {
    TaskRecord record;
    try {
      record = load(i);
    } catch (const std::exception& e) {
      spdlog::warn("eval: record {} could not be loaded: {}", i, e.what());
      for (Method& m : methods) ++m.failures;
      continue;
    }
    const VoxelGrid grid = VoxelGrid::from_scene(record.scene, params.voxel_resolution);
    const Resolution res = record.resolution();
    const auto gt_visible = visible_voxels(grid, record.scene, record.to_world(record.target.pose), res, params.workers);
    for (Method& m : methods) {
      try {
        const DecodedPose p = m.predict(record);
        const CameraPose world = record.to_world(p.pose);
        TaskMetrics t;
        t.iou = view_coverage_iou(visible_voxels(grid, record.scene, world, res, params.workers), gt_visible);
        t.e_t = translation_error(p.pose.t, record.target.pose.t);
        t.e_r = rotation_geodesic(p.pose.q, record.target.pose.q);
        t.target_coverage = render(record.scene, world, res).coverage(record.spec.target_id);
        t.degenerate = !p.valid;
        if (!std::isfinite(t.iou) || !std::isfinite(t.e_t) || !std::isfinite(t.e_r))
          throw std::runtime_error("non-finite metric");
        m.metrics.push_back(t);
        m.index.push_back(record.index);
        m.poses.push_back(encode_pose(p.pose));
      } catch (const std::exception& e) {
        spdlog::warn("eval: {} failed on record {}: {}", m.name, i, e.what());
        ++m.failures;
      }
    }
  }

  SuiteReport report;
  for (Method& m : methods) {
    MethodSummary s = summarize(m.name, m.metrics);
    s.failures = m.failures;
    s.record_index = std::move(m.index);
    s.poses = std::move(m.poses);
    report.methods.push_back(std::move(s));
  }
  return report;
}

SuiteReport eval_suite(Model<float>& model, const DatasetReader& data, const EvalParams& params) {
  return eval_suite("model", model_predictor(model), [&data](size_t i) { return data.load(i); }, data.size(),
                    params);
}

// ---- closed loop --------------------------------------------------------------------

std::vector<LoopStep> closed_loop_run(const PosePredictor& predictor, const TaskRecord& initial, int steps,
                                      int max_context, double voxel_resolution) {
  if (steps < 1) throw ConfigError("closed loop needs steps >= 1");
  if (max_context < 1) throw ConfigError("closed loop needs max_context >= 1");
  if (initial.frames.empty()) throw ConfigError("closed loop needs a start frame");

  TaskRecord state = initial;
  while (state.num_context() > max_context) state.frames.erase(state.frames.begin() + 1);

  const VoxelGrid grid = VoxelGrid::from_scene(state.scene, voxel_resolution);
  const Resolution res = state.resolution();
  std::vector<LoopStep> out;
  for (int k = 1; k <= steps; ++k) {
    LoopStep s;
    s.step = k;
    s.context_size = state.num_context();
    s.predicted = predictor(state);
    s.metrics = eval_pose(state, s.predicted, grid);
    // Poses stay expressed in the original start frame, so the new observation
    // carries the relative pose directly.
    s.observation = render(state.scene, state.to_world(s.predicted.pose), res);
    s.observation.pose = s.predicted.pose;
    state.frames.push_back(s.observation);
    if (state.num_context() > max_context) state.frames.erase(state.frames.begin() + 1);
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json loop_json(const std::vector<LoopStep>& steps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const LoopStep& s : steps) {
    nlohmann::json j = metrics_json(s.metrics);
    j["step"] = s.step;
    j["context_size"] = s.context_size;
    j["pose"] = pose_to_json(s.predicted.pose);
    const PoseEncoding e = encode_pose(s.predicted.pose);
    j["encoding"] = std::vector<double>(e.begin(), e.end());
    arr.push_back(std::move(j));
  }
  return {{"steps", std::move(arr)}};
}

bool occluded_start(const TaskRecord& record, double max_start_coverage) {
  return !record.frames.empty() && record.frames.front().coverage(record.spec.target_id) < max_start_coverage;
}

LoopTable tabulate(const std::vector<std::vector<LoopStep>>& runs) {
  LoopTable t;
  t.runs = static_cast<int>(runs.size());
  size_t len = 0;
  for (const auto& r : runs) len = std::max(len, r.size());
  for (size_t k = 0; k < len; ++k) {
    std::vector<double> cov, iou;
    for (const auto& r : runs) {
      if (k < r.size()) {
        cov.push_back(r[k].metrics.target_coverage);
        iou.push_back(r[k].metrics.iou);
      }
    }
    t.mean_coverage.push_back(mean_of(cov));
    t.mean_iou.push_back(mean_of(iou));
  }
  return t;
}

std::string LoopTable::to_text() const {
  std::string out = fmt::format("{:>5} {:>10} {:>8}   ({} runs)\n", "step", "coverage%", "IoU%", runs);
  for (size_t k = 0; k < mean_coverage.size(); ++k) {
    out += fmt::format("{:>5} {:>10.3f} {:>8.2f}\n", k + 1, 100.0 * mean_coverage[k], 100.0 * mean_iou[k]);
  }
  return out;
}

nlohmann::json LoopTable::to_json() const {
  return {{"runs", runs}, {"mean_target_coverage", mean_coverage}, {"mean_iou", mean_iou}};
}

}  // namespace av
