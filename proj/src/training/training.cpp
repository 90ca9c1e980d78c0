#include "activeview/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace av {

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError(fmt::format("unknown {} key '{}'", what, key));
  }
}

}  // namespace

// ---- config --------------------------------------------------------------------------

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"cam", w.cam}, {"depth", w.depth}, {"point", w.point}, {"heat", w.heat}, {"mask", w.mask}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  const LossWeights d;
  reject_unknown(j, nlohmann::json(d), "loss weight");
  w.cam = j.value("cam", d.cam);
  w.depth = j.value("depth", d.depth);
  w.point = j.value("point", d.point);
  w.heat = j.value("heat", d.heat);
  w.mask = j.value("mask", d.mask);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"stage", c.stage},
       {"steps", c.steps},
       {"warmup_steps", c.warmup_steps},
       {"lr", c.lr},
       {"min_lr_ratio", c.min_lr_ratio},
       {"accumulation", c.accumulation},
       {"seed", c.seed},
       {"adapter_rank", c.adapter_rank},
       {"clip_norm", c.clip_norm},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"checkpoint_every", c.checkpoint_every},
       {"max_records", c.max_records},
       {"huber_delta", c.huber_delta},
       {"heat_sigma", c.heat_sigma},
       {"weights", c.weights}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  reject_unknown(j, nlohmann::json(d), "train config");
  c.stage = j.value("stage", d.stage);
  c.steps = j.value("steps", d.steps);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.lr = j.value("lr", d.lr);
  c.min_lr_ratio = j.value("min_lr_ratio", d.min_lr_ratio);
  c.accumulation = j.value("accumulation", d.accumulation);
  c.seed = j.value("seed", d.seed);
  c.adapter_rank = j.value("adapter_rank", d.adapter_rank);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.max_records = j.value("max_records", d.max_records);
  c.huber_delta = j.value("huber_delta", d.huber_delta);
  c.heat_sigma = j.value("heat_sigma", d.heat_sigma);
  c.weights = j.contains("weights") ? j.at("weights").get<LossWeights>() : d.weights;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid train config: " + m); };
  if (stage != 1 && stage != 2) fail("stage must be 1 or 2");
  if (steps < 0 || warmup_steps < 0) fail("steps and warmup_steps must be >= 0");
  if (!(lr > 0) || !(min_lr_ratio >= 0 && min_lr_ratio <= 1)) fail("lr must be > 0, min_lr_ratio in [0, 1]");
  if (accumulation < 1) fail("accumulation must be >= 1");
  if (adapter_rank < 0) fail("adapter_rank must be >= 0");
  if (!(clip_norm > 0)) fail("clip_norm must be > 0");
  if (weight_decay < 0 || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(adam_eps > 0)) {
    fail("optimizer hyperparameters out of range");
  }
  if (checkpoint_every < 0 || max_records < 0) fail("checkpoint_every and max_records must be >= 0");
  if (!(huber_delta > 0) || !(heat_sigma > 0)) fail("huber_delta and heat_sigma must be > 0");
  for (double w : {weights.cam, weights.depth, weights.point, weights.heat, weights.mask}) {
    if (!(w >= 0) || !std::isfinite(w)) fail("loss weights must be finite and >= 0");
  }
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (stage == 2) w.heat = w.mask = 0.0;
  return w;
}

// ---- targets -----------------------------------------------------------------------------

LossTargets make_targets(const TaskRecord& record, double heat_sigma) {
  LossTargets t;
  const Resolution res = record.resolution();
  t.frames = record.num_context() + 1;
  t.width = res.width;
  t.height = res.height;
  const size_t px = static_cast<size_t>(res.width) * res.height;
  const size_t total = px * static_cast<size_t>(t.frames);
  t.depth.assign(total, 0.f);
  t.points.assign(3 * total, 0.f);
  t.valid.assign(total, 0.f);
  t.heat.assign(total, 0.f);
  t.mask.assign(total, 0.f);

  const int target_id = record.spec.target_id;
  const SceneObject* obj = record.scene.find(target_id);
  if (!obj) throw GenerationError("record target object missing from scene");
  const Vec3 center = record.start_world.to_camera(obj->box.center());
  const double inv2s2 = 1.0 / (2.0 * heat_sigma * heat_sigma);

  for (int f = 0; f < t.frames; ++f) {
    const Frame& fr = f < record.num_context() ? record.frames[static_cast<size_t>(f)] : record.target;
    if (fr.width != res.width || fr.height != res.height) throw GenerationError("frame resolution mismatch");
    t.poses.push_back(encode_pose(fr.pose));
    const Intrinsics k = intrinsics_for(fr.pose.fov, res);
    const Projection pc = project_point(center, fr.pose, res);
    const size_t base = static_cast<size_t>(f) * px;
    for (int y = 0; y < res.height; ++y) {
      for (int x = 0; x < res.width; ++x) {
        const size_t i = static_cast<size_t>(y) * res.width + x;
        const float d = fr.depth[i];
        t.depth[base + i] = d;
        if (d > 0.f) {
          t.valid[base + i] = 1.f;
          const Vec3 p = fr.pose.to_reference(pixel_ray(x + 0.5, y + 0.5, k) * static_cast<double>(d));
          for (int c = 0; c < 3; ++c) t.points[3 * (base + i) + c] = static_cast<float>(p[c]);
        }
        t.mask[base + i] = fr.mask[i] == target_id ? 1.f : 0.f;
        if (pc.in_image()) {
          const double dx = x + 0.5 - pc.pixel.x(), dy = y + 0.5 - pc.pixel.y();
          t.heat[base + i] = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv2s2));
        }
      }
    }
  }
  return t;
}

nlohmann::json components_json(const LossComponents& c) {
  return {{"total", c.total}, {"cam", c.cam},   {"depth", c.depth},
          {"point", c.point}, {"heat", c.heat}, {"mask", c.mask}, {"empty_frames", c.empty_frames}};
}

// ---- losses ---------------------------------------------------------------------------------

template <typename T>
LossVars<T> total_loss(ag::Graph<T>& g, const ForwardVars& out, const LossTargets& tgt, const LossWeights& w,
                       double huber_delta) {
  using M = ag::Mat<T>;
  const int F = tgt.frames;
  const size_t px = static_cast<size_t>(tgt.width) * tgt.height;
  const auto rows = static_cast<Eigen::Index>(px * static_cast<size_t>(F));
  const M P = g.value(out.poses);
  if (P.rows() != F || P.cols() != 9 || g.value(out.depth).rows() != rows || g.value(out.points).rows() != rows ||
      g.value(out.heat).rows() != rows || g.value(out.mask).rows() != rows) {
    throw ag::ShapeError("model outputs do not match loss targets");
  }
  LossVars<T> lv;
  // Terms with zero weight are evaluated on detached values: reported, never differentiated.
  auto source = [&](ag::Var v, double weight) { return weight > 0 ? v : g.constant(g.value(v)); };

  M cam_t(F, 9), cam_w = M::Zero(F, 9);
  for (int f = 0; f < F; ++f) {
    const auto& e = tgt.poses[static_cast<size_t>(f)];
    double dot = 0;
    for (int i = 0; i < 4; ++i) dot += static_cast<double>(P(f, i)) * e[static_cast<size_t>(i)];
    const double sign = dot < 0 ? -1.0 : 1.0;
    for (int i = 0; i < 9; ++i) cam_t(f, i) = static_cast<T>(i < 4 ? sign * e[static_cast<size_t>(i)] : e[static_cast<size_t>(i)]);
    if (f > 0) cam_w.row(f).setConstant(static_cast<T>(1.0 / (F - 1)));
  }
  lv.cam = ag::elementwise_loss(g, source(out.poses, w.cam), std::move(cam_t), std::move(cam_w), ag::LossKind::kHuber,
                                static_cast<T>(huber_delta));

  std::vector<size_t> counts(static_cast<size_t>(F), 0);
  int nonempty = 0;
  for (int f = 0; f < F; ++f) {
    for (size_t i = 0; i < px; ++i) counts[static_cast<size_t>(f)] += tgt.valid[f * px + i] > 0.f;
    if (counts[static_cast<size_t>(f)] > 0) ++nonempty;
  }
  lv.values.empty_frames = F - nonempty;
  M d_t(rows, 1), d_w = M::Zero(rows, 1), p_t(rows, 3), p_w = M::Zero(rows, 3);
  for (int f = 0; f < F; ++f) {
    const double c = static_cast<double>(counts[static_cast<size_t>(f)]);
    for (size_t i = 0; i < px; ++i) {
      const auto r = static_cast<Eigen::Index>(f * px + i);
      d_t(r, 0) = static_cast<T>(tgt.depth[static_cast<size_t>(r)]);
      for (int k = 0; k < 3; ++k) p_t(r, k) = static_cast<T>(tgt.points[3 * static_cast<size_t>(r) + k]);
      if (tgt.valid[static_cast<size_t>(r)] > 0.f) {
        d_w(r, 0) = static_cast<T>(1.0 / (c * nonempty));
        p_w.row(r).setConstant(static_cast<T>(1.0 / (3.0 * c * nonempty)));
      }
    }
  }
  lv.depth = ag::elementwise_loss(g, source(out.depth, w.depth), std::move(d_t), std::move(d_w), ag::LossKind::kL1);
  lv.point = ag::elementwise_loss(g, source(out.points, w.point), std::move(p_t), std::move(p_w), ag::LossKind::kL1);

  const M dense_w = M::Constant(rows, 1, static_cast<T>(1.0 / static_cast<double>(rows)));
  M h_t(rows, 1), m_t(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    h_t(r, 0) = static_cast<T>(tgt.heat[static_cast<size_t>(r)]);
    m_t(r, 0) = static_cast<T>(tgt.mask[static_cast<size_t>(r)]);
  }
  lv.heat = ag::elementwise_loss(g, source(out.heat, w.heat), std::move(h_t), dense_w, ag::LossKind::kBceLogits);
  lv.mask = ag::elementwise_loss(g, source(out.mask, w.mask), std::move(m_t), dense_w, ag::LossKind::kBceLogits);

  lv.total = ag::weighted_sum(g, {lv.cam, lv.depth, lv.point, lv.heat, lv.mask},
                              {static_cast<T>(w.cam), static_cast<T>(w.depth), static_cast<T>(w.point),
                               static_cast<T>(w.heat), static_cast<T>(w.mask)});
  auto val = [&](ag::Var v) { return static_cast<double>(g.value(v)(0, 0)); };
  lv.values.cam = val(lv.cam);
  lv.values.depth = val(lv.depth);
  lv.values.point = val(lv.point);
  lv.values.heat = val(lv.heat);
  lv.values.mask = val(lv.mask);
  lv.values.total = val(lv.total);
  return lv;
}

template LossVars<float> total_loss<float>(ag::Graph<float>&, const ForwardVars&, const LossTargets&,
                                           const LossWeights&, double);
template LossVars<double> total_loss<double>(ag::Graph<double>&, const ForwardVars&, const LossTargets&,
                                             const LossWeights&, double);

// ---- optimizer -------------------------------------------------------------------------------

void AdamW::step(ag::ParamStore<float>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  for (auto* p : params.all()) {
    if (!p->trainable) continue;
    auto it = state_.find(p->name);
    if (it == state_.end()) {
      it = state_.emplace(p->name, Moments{ag::Mat<float>::Zero(p->value.rows(), p->value.cols()),
                                           ag::Mat<float>::Zero(p->value.rows(), p->value.cols())})
               .first;
    }
    auto& [m, v] = it->second;
    if (p->grad.size() != p->value.size()) p->zero_grad();
    const float decay = p->decay ? static_cast<float>(lr * cfg_.weight_decay) : 0.f;
    const float a = static_cast<float>(lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(cfg_.eps);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const float gi = p->grad.data()[i];
      float& mi = m.data()[i];
      float& vi = v.data()[i];
      mi = b1 * mi + (1.f - b1) * gi;
      vi = b2 * vi + (1.f - b2) * gi * gi;
      float& x = p->value.data()[i];
      x -= decay * x;
      x -= a * mi / (std::sqrt(vi * inv_bc2) + eps);
    }
  }
}

double lr_at(const TrainConfig& c, int step) {
  if (step < c.warmup_steps) return c.lr * (step + 1) / c.warmup_steps;
  const double span = std::max(1, c.steps - c.warmup_steps);
  const double progress = std::min(1.0, (step - c.warmup_steps) / span);
  const double floor = c.lr * c.min_lr_ratio;
  return floor + (c.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double grad_norm(const ag::ParamStore<float>& params) {
  double s = 0;
  for (const auto* p : params.all()) {
    if (!p->trainable || p->grad.size() == 0) continue;
    s += p->grad.template cast<double>().squaredNorm();
  }
  return std::sqrt(s);
}

double clip_grad_norm(ag::ParamStore<float>& params, double max_norm) {
  const double n = grad_norm(params);
  if (std::isfinite(n) && n > max_norm) {
    const float s = static_cast<float>(max_norm / n);
    for (auto* p : params.all()) {
      if (p->trainable && p->grad.size()) p->grad *= s;
    }
  }
  return n;
}

// ---- stages ----------------------------------------------------------------------------------

void configure_stage(Model<float>& model, const TrainConfig& config) {
  if (config.stage == 1) {
    model.params().set_trainable([](const auto& p) { return p.group != "backbone" && p.group != "adapter"; });
    return;
  }
  if (model.adapter_rank() == 0) model.attach_adapters(config.adapter_rank, mix_seed(config.seed, 0x10ca));
  model.params().set_trainable([](const auto& p) { return p.group != "backbone"; });
}

size_t adapter_param_count(const ModelConfig& c, int rank) {
  const size_t per = static_cast<size_t>(rank) * (c.vlm_width + c.vlm_width);
  return per * 4 * static_cast<size_t>(c.vlm_depth);
}

// ---- trainer -----------------------------------------------------------------------------------

nlohmann::json StepMetrics::to_json() const {
  nlohmann::json j = components_json(loss);
  j["step"] = step;
  j["stage"] = stage;
  j["grad_norm"] = grad_norm;
  j["lr"] = lr;
  j["wallclock"] = wallclock;
  return j;
}

RecordSampler::RecordSampler(size_t count, uint64_t seed) : count_(count), seed_(seed) {
  if (count_ == 0) throw ConfigError("no records to sample from");
  reshuffle();
}

void RecordSampler::reshuffle() {
  order_.resize(count_);
  for (size_t i = 0; i < count_; ++i) order_[i] = i;
  Rng rng(mix_seed(seed_, epoch_));
  for (size_t i = count_ - 1; i > 0; --i) {
    const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i)));
    std::swap(order_[i], order_[j]);
  }
  pos_ = 0;
}

size_t RecordSampler::next() {
  if (pos_ == count_) {
    ++epoch_;
    reshuffle();
  }
  return order_[pos_++];
}

TrainResult train(Model<float>& model, const TrainConfig& config, const std::function<TaskRecord(size_t)>& load,
                  size_t num_records, const TrainOptions& opt) {
  config.validate();
  configure_stage(model, config);
  const LossWeights weights = config.effective_weights();
  const size_t n = config.max_records > 0 ? std::min<size_t>(static_cast<size_t>(config.max_records), num_records)
                                          : num_records;
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  nlohmann::json train_json = config;

  std::ofstream log;
  auto save = [&](const std::string& name, int completed) {
    if (opt.out_dir.empty()) return std::filesystem::path{};
    nlohmann::json j = train_json;
    j["completed_steps"] = completed;
    const auto path = opt.out_dir / name;
    save_checkpoint(path, model, j);
    return path;
  };
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    log.open(opt.out_dir / "metrics.ndjson", std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open metrics log in " + opt.out_dir.string());
  }
  if (config.steps > 0 && n == 0) throw ConfigError("training needs at least one record");

  std::optional<RecordSampler> sampler;
  if (n > 0) sampler.emplace(n, mix_seed(config.seed, 0x5a3e));
  AdamW adam({config.beta1, config.beta2, config.adam_eps, config.weight_decay});
  auto& params = model.params();

  for (int step = 0; step < config.steps; ++step) {
    params.zero_grad();
    StepMetrics m;
    m.step = step;
    m.stage = config.stage;
    for (int a = 0; a < config.accumulation; ++a) {
      const TaskRecord rec = load(sampler->next());
      const LossTargets tgt = make_targets(rec, config.heat_sigma);
      ag::Graph<float> g;
      const ForwardVars fv = model.forward(g, make_input(rec));
      const LossVars<float> lv = total_loss(g, fv, tgt, weights, config.huber_delta);
      if (!std::isfinite(lv.values.total)) {
        save("last_good.ipck", step);
        throw TrainingDivergence(step, fmt::format("non-finite loss on record {}", rec.index));
      }
      g.backward(lv.total);
      m.loss.cam += lv.values.cam;
      m.loss.depth += lv.values.depth;
      m.loss.point += lv.values.point;
      m.loss.heat += lv.values.heat;
      m.loss.mask += lv.values.mask;
      m.loss.total += lv.values.total;
      m.loss.empty_frames += lv.values.empty_frames;
    }
    const double inv = 1.0 / config.accumulation;
    for (double* v : {&m.loss.cam, &m.loss.depth, &m.loss.point, &m.loss.heat, &m.loss.mask, &m.loss.total}) *v *= inv;
    if (m.loss.empty_frames > 0) spdlog::warn("step {}: {} frame(s) without valid depth", step, m.loss.empty_frames);
    if (config.accumulation > 1) {
      for (auto* p : params.all()) {
        if (p->trainable && p->grad.size()) p->grad *= static_cast<float>(inv);
      }
    }
    m.grad_norm = clip_grad_norm(params, config.clip_norm);
    if (!std::isfinite(m.grad_norm)) {
      save("last_good.ipck", step);
      throw TrainingDivergence(step, "non-finite gradient norm");
    }
    m.lr = lr_at(config, step);
    adam.step(params, m.lr);
    m.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.is_open()) log << m.to_json().dump() << '\n' << std::flush;
    if (opt.on_step) opt.on_step(m);
    result.metrics.push_back(m);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && step + 1 < config.steps) {
      save(fmt::format("ckpt_{:06d}.ipck", step + 1), step + 1);
    }
  }
  result.final_checkpoint = save("final.ipck", config.steps);
  return result;
}

TrainResult train(Model<float>& model, const TrainConfig& config, const DatasetReader& data, const TrainOptions& opt) {
  return train(model, config, [&](size_t i) { return data.load(i); }, data.size(), opt);
}

// ---- gradient check ------------------------------------------------------------------------------

bool GradcheckReport::ok(double min_fraction) const {
  return sampled > 0 && pass_fraction() >= min_fraction;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json gs = nlohmann::json::array();
  for (const auto& g : groups) {
    gs.push_back({{"group", g.group},
                  {"frozen", g.frozen},
                  {"sampled", g.sampled},
                  {"passed", g.passed},
                  {"inactive", g.inactive},
                  {"max_rel_error", g.max_rel_error},
                  {"max_abs_analytic", g.max_abs_analytic}});
  }
  return {{"sampled", sampled}, {"passed", passed}, {"pass_fraction", pass_fraction()}, {"groups", gs}};
}

GradcheckReport gradcheck(Model<double>& model, const TaskRecord& record, const LossWeights& weights,
                          const GradcheckOptions& opt) {
  Rng rng(opt.seed);
  auto& ps = model.params();
  if (opt.perturb_gates) {
    for (auto* p : ps.all()) {
      if (p->group != "fusion.gamma" && p->name.find("lora_b") == std::string::npos) continue;
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-0.5, 0.5);
    }
  }
  const ModelInput in = make_input(record);
  const LossTargets tgt = make_targets(record);
  auto loss = [&](ag::Graph<double>& g) { return total_loss(g, model.forward(g, in), tgt, weights).total; };

  ps.zero_grad();
  {
    ag::Graph<double> g;
    g.backward(loss(g));
  }

  const auto groups = ps.groups();
  GradcheckReport report;
  const int quota = std::max(1, (opt.samples + static_cast<int>(groups.size()) - 1) / static_cast<int>(groups.size()));
  for (const auto& name : groups) {
    std::vector<ag::Param<double>*> members;
    size_t total = 0;
    bool frozen = true;
    for (auto* p : ps.all()) {
      if (p->group != name) continue;
      members.push_back(p);
      total += p->size();
      frozen = frozen && !p->trainable;
    }
    GroupCheck gc;
    gc.group = name;
    gc.frozen = frozen;
    std::set<size_t> picks;
    const size_t want = std::min<size_t>(static_cast<size_t>(quota), total);
    while (picks.size() < want) picks.insert(static_cast<size_t>(rng.uniform_int(0, static_cast<int>(total) - 1)));
    for (size_t flat : picks) {
      ag::Param<double>* p = nullptr;
      for (auto* q : members) {
        if (flat < q->size()) {
          p = q;
          break;
        }
        flat -= q->size();
      }
      const auto i = static_cast<Eigen::Index>(flat);
      const double ana = p->grad.size() ? p->grad.data()[i] : 0.0;
      gc.max_abs_analytic = std::max(gc.max_abs_analytic, std::abs(ana));
      ++gc.sampled;
      if (!p->trainable) {
        if (ana == 0.0) ++gc.passed;
        gc.max_rel_error = std::max(gc.max_rel_error, std::abs(ana));
        continue;
      }
      const double x0 = p->value.data()[i];
      const double h = opt.step_scale * std::max(1.0, std::abs(x0));
      auto eval = [&](double x) {
        p->value.data()[i] = x;
        ag::Graph<double> g(false);
        return g.value(loss(g))(0, 0);
      };
      const double num = (eval(x0 + h) - eval(x0 - h)) / (2 * h);
      p->value.data()[i] = x0;
      if (ana == 0.0 && num == 0.0) ++gc.inactive;
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
      gc.max_rel_error = std::max(gc.max_rel_error, rel);
      if (rel <= opt.rel_tol) ++gc.passed;
    }
    report.sampled += gc.sampled;
    report.passed += gc.passed;
    report.groups.push_back(gc);
  }
  return report;
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.C = 32;
  c.depth = 2;
  c.heads = 2;
  c.patch = 4;
  c.width = c.height = 16;
  c.num_register = 2;
  c.fusion_blocks = {1, 2};
  c.vlm_layers = {1, 2};
  c.vlm_depth = 2;
  c.vlm_width = 32;
  c.vlm_heads = 2;
  c.head_channels = 4;
  c.lora_rank = 2;
  return c;
}

MicroworldParams gradcheck_world_params() {
  MicroworldParams p;
  p.width = p.height = 16;
  p.max_context = 3;
  return p;
}

}  // namespace av
