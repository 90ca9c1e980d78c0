#pragma once

// Losses, the optimizer, the two-stage trainer and the finite-difference
// gradient check.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeview/dataset.hpp"
#include "activeview/model.hpp"

namespace av {

struct LossWeights {
  double cam = 1.0;
  double depth = 0.5;
  double point = 0.5;
  double heat = 0.25;
  double mask = 0.25;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct TrainConfig {
  int stage = 1;
  int steps = 2000;
  int warmup_steps = 100;
  double lr = 1.5e-3;
  double min_lr_ratio = 0.05;  // cosine floor as a fraction of the peak
  int accumulation = 2;
  uint64_t seed = 0;
  int adapter_rank = 4;
  double clip_norm = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 500;  // 0 disables periodic checkpoints
  int max_records = 0;         // 0 = every record of the dataset
  double huber_delta = 0.1;
  double heat_sigma = 2.0;
  LossWeights weights;

  void validate() const;
  /// Weights actually applied: stage 2 disables the heatmap and mask terms.
  LossWeights effective_weights() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(int step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// ---- targets and losses --------------------------------------------------------

/// Dense ground truth for all F = N + 1 frames (context frames, then the target).
struct LossTargets {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<PoseEncoding> poses;
  std::vector<float> depth;   // F*H*W
  std::vector<float> points;  // F*H*W x 3 (pixel-major), start-frame coordinates
  std::vector<float> valid;   // F*H*W, 1 where depth > 0
  std::vector<float> heat;    // F*H*W, unit-peak Gaussian or all zero
  std::vector<float> mask;    // F*H*W, 1 on the target object
};

LossTargets make_targets(const TaskRecord& record, double heat_sigma = 2.0);

struct LossComponents {
  double cam = 0;
  double depth = 0;
  double point = 0;
  double heat = 0;
  double mask = 0;
  double total = 0;
  int empty_frames = 0;  // frames without valid depth, skipped by depth/point terms
};

nlohmann::json components_json(const LossComponents& c);

template <typename T>
struct LossVars {
  ag::Var cam, depth, point, heat, mask, total;
  LossComponents values;
};

/// Builds every loss term on the graph. Throws ShapeError when the model
/// outputs do not match the targets.
template <typename T>
LossVars<T> total_loss(ag::Graph<T>& g, const ForwardVars& out, const LossTargets& tgt, const LossWeights& w,
                       double huber_delta = 0.1);

// ---- optimizer -------------------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam. Moment buffers exist only for trainable parameters.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  void step(ag::ParamStore<float>& params, double lr);
  int64_t steps() const { return t_; }
  size_t state_size() const { return state_.size(); }

 private:
  struct Moments {
    ag::Mat<float> m, v;
  };
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Linear warmup to the peak, then cosine decay to peak * min_lr_ratio at `steps`.
double lr_at(const TrainConfig& c, int step);

/// Global L2 norm of trainable gradients.
double grad_norm(const ag::ParamStore<float>& params);
/// Scales trainable gradients so the global norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(ag::ParamStore<float>& params, double max_norm);

// ---- stages --------------------------------------------------------------------------

/// Stage 1 trains everything but the backbone. Stage 2 attaches adapters (if
/// absent) and trains everything but the backbone base weights.
void configure_stage(Model<float>& model, const TrainConfig& config);

/// Trainable scalars added by adapters of rank r: sum of r*(in+out).
size_t adapter_param_count(const ModelConfig& c, int rank);

// ---- trainer ------------------------------------------------------------------------------

struct StepMetrics {
  int step = 0;
  int stage = 1;
  LossComponents loss;
  double grad_norm = 0;
  double lr = 0;
  double wallclock = 0;

  nlohmann::json to_json() const;
};

/// Deterministic record order: a seeded shuffle per epoch over `count` records.
class RecordSampler {
 public:
  RecordSampler(size_t count, uint64_t seed);
  size_t next();

 private:
  void reshuffle();
  size_t count_;
  uint64_t seed_;
  uint64_t epoch_ = 0;
  size_t pos_ = 0;
  std::vector<size_t> order_;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  std::vector<StepMetrics> metrics;
  std::filesystem::path final_checkpoint;
};

/// Runs config.steps optimizer steps, each accumulating config.accumulation
/// single-record passes. Writes metrics.ndjson, periodic ckpt_XXXXXX.ipck and
/// final.ipck into out_dir. Throws TrainingDivergence on non-finite loss or
/// gradients after saving the last good parameters as last_good.ipck.
TrainResult train(Model<float>& model, const TrainConfig& config, const std::function<TaskRecord(size_t)>& load,
                  size_t num_records, const TrainOptions& opt = {});
TrainResult train(Model<float>& model, const TrainConfig& config, const DatasetReader& data,
                  const TrainOptions& opt = {});

// ---- gradient check ---------------------------------------------------------------------

struct GradcheckOptions {
  int samples = 240;
  uint64_t seed = 0;
  double rel_tol = 1e-4;
  double step_scale = 1e-4;  // h = step_scale * max(1, |x|)
  /// Give zero-initialized gates and adapter B matrices random values first so
  /// that every group carries signal.
  bool perturb_gates = true;
};

struct GroupCheck {
  std::string group;
  bool frozen = false;
  int sampled = 0;
  int passed = 0;
  int inactive = 0;  // samples where both gradients are exactly zero
  double max_rel_error = 0;
  double max_abs_analytic = 0;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;
  int sampled = 0;
  int passed = 0;
  double pass_fraction() const { return sampled ? static_cast<double>(passed) / sampled : 0.0; }
  bool ok(double min_fraction = 0.95) const;
  nlohmann::json to_json() const;
};

GradcheckReport gradcheck(Model<double>& model, const TaskRecord& record, const LossWeights& weights,
                          const GradcheckOptions& opt = {});

/// Configuration used by the gradient-check acceptance run.
ModelConfig gradcheck_model_config();
MicroworldParams gradcheck_world_params();

}  // namespace av
