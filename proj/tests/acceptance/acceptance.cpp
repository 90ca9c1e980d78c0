// Acceptance runner: executes the eleven project-level acceptance criteria and
// prints one PASS/FAIL line per criterion.
//
// Criteria 5, 6 and 10 train real models. Their checkpoints are cached in the
// work directory under a key derived from every input that influences them, so
// a rerun re-evaluates the cached weights instead of retraining. The recorded
// training time of the cached run is what the runtime bound is checked against.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "activeview/cli.hpp"
#include "activeview/dataset.hpp"
#include "activeview/eval.hpp"
#include "activeview/judge.hpp"
#include "activeview/training.hpp"
#include "activeview/voxel.hpp"
#include "oracles/voxel_oracle.hpp"
#include "scene_fixtures.hpp"

using namespace av;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
  nlohmann::json details = nlohmann::json::object();
};

struct Settings {
  fs::path work = "acceptance_work";
  bool fresh = false;
  int stage1_steps = 8000;
  int stage2_steps = 2000;
  int loop_tasks = 50;
  int loop_steps = 4;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir, const std::set<std::string>& skip = {}) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (!skip.contains(name)) out[name] = slurp(e.path());
  }
  return out;
}

std::string fnv_hex(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

ModelInput random_input(std::mt19937_64& rng, const ModelConfig& c, int n, int t) {
  ModelInput in;
  in.width = c.width;
  in.height = c.height;
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (int f = 0; f < n; ++f) {
    std::vector<float> img(static_cast<size_t>(c.width) * c.height * 3);
    for (auto& v : img) v = u(rng);
    in.images.push_back(std::move(img));
  }
  for (int i = 0; i < t; ++i) in.tokens.push_back(static_cast<int32_t>(rng() % static_cast<uint64_t>(c.vocab_size)));
  return in;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return std::numeric_limits<float>::infinity();
  float m = 0.f;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- cached training ---------------------------------------------------------------------

/// Trains with `run` unless work/<tag>-<key>.ipck already exists. Returns the
/// model and the training seconds of the run that produced it.
std::pair<Model<float>, double> cached_model(const Settings& s, const std::string& tag, const nlohmann::json& key,
                                            const std::function<void(Model<float>&)>& run) {
  const std::string id = tag + "-" + fnv_hex(key.dump());
  const fs::path ckpt = s.work / (id + ".ipck");
  const fs::path meta = s.work / (id + ".json");
  if (!s.fresh && fs::exists(ckpt) && fs::exists(meta)) {
    const auto j = nlohmann::json::parse(slurp(meta));
    if (j.at("key") == key) {
      spdlog::info("{}: reusing cached checkpoint {}", tag, ckpt.string());
      return {std::move(load_checkpoint(ckpt).model), j.at("train_seconds").get<double>()};
    }
  }
  Model<float> m(ModelConfig{}, 1);
  const auto t0 = Clock::now();
  run(m);
  const double secs = seconds_since(t0);
  save_checkpoint(ckpt, m, key);
  std::ofstream(meta) << nlohmann::json{{"key", key}, {"train_seconds", secs}}.dump(2) << "\n";
  return {std::move(m), secs};
}

std::function<void(const StepMetrics&)> progress(const std::string& tag, int every) {
  return [tag, every](const StepMetrics& m) {
    if (m.step % every == 0) spdlog::info("{} step {} loss {:.4f}", tag, m.step, m.loss.total);
  };
}

// ---- criteria ------------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  Model<double> m(gradcheck_model_config(), 101);
  const TaskRecord r = generate_task(mix_seed(101, 0), 0, gradcheck_world_params());
  GradcheckOptions opt;
  opt.samples = 240;
  opt.rel_tol = 1e-4;
  const GradcheckReport rep = gradcheck(m, r, LossWeights{}, opt);
  const double secs = seconds_since(t0);

  std::set<std::string> groups, covered;
  for (const auto* p : m.params().all()) groups.insert(p->group);
  for (const auto& g : rep.groups) {
    if (g.sampled > 0) covered.insert(g.group);
  }
  Outcome o;
  o.pass = rep.sampled >= 200 && rep.ok(0.95) && covered == groups && secs <= 300;
  o.summary = fmt::format("{}/{} samples within 1e-4 ({:.1f}%), {}/{} groups covered, {:.1f} s", rep.passed,
                          rep.sampled, 100 * rep.pass_fraction(), covered.size(), groups.size(), secs);
  o.details = rep.to_json();
  return o;
}

Outcome zero_gate() {
  Model<float> m(ModelConfig{}, 2);
  std::mt19937_64 rng(2);
  float worst = 0.f;
  for (int t = 0; t < 10; ++t) {
    const int n = 1 + t % (m.config().max_frames - 1);
    const ModelInput in = random_input(rng, m.config(), n, 3 + t);
    const ModelOutput a = m.predict(in, {true, true});
    const ModelOutput b = m.predict(in, {false, true});
    worst = std::max({worst, max_abs_diff(a.depth, b.depth), max_abs_diff(a.points, b.points),
                      max_abs_diff(a.heatmap, b.heatmap), max_abs_diff(a.mask_logits, b.mask_logits)});
    for (size_t f = 0; f < a.poses.size(); ++f) {
      for (int i = 0; i < 9; ++i) worst = std::max(worst, static_cast<float>(std::abs(a.poses[f][i] - b.poses[f][i])));
    }
  }
  Outcome o;
  o.pass = worst <= 1e-6f;
  o.summary = fmt::format("max |full - fusion ablated| = {:.3g} over 10 inputs", worst);
  return o;
}

Outcome iou_oracle() {
  std::mt19937_64 rng(303);
  const Resolution res{64, 64};
  int exact = 0;
  int64_t max_cells = 0;
  for (int t = 0; t < 10; ++t) {
    const Scene s = testing::random_box_scene(rng);
    const VoxelGrid grid = VoxelGrid::from_scene(s, 0.15);
    max_cells = std::max(max_cells, grid.size());
    const CameraPose g = testing::random_free_camera(rng, s, Vec2(1.22, 1.22));
    exact += visible_voxels(grid, s, g, res).indices == oracle::visible_voxels_bruteforce(grid, s, g, res);
  }
  auto set = [](std::vector<uint32_t> v) { return VisibleVoxelSet{std::move(v), 1}; };
  const bool trivial = view_coverage_iou(set({1, 2, 3}), set({1, 2, 3})) == 1.0 &&
                       view_coverage_iou(set({1, 2}), set({3, 4})) == 0.0 &&
                       view_coverage_iou(set({1, 2, 3}), set({2, 3, 4})) == 0.5 &&
                       view_coverage_iou(set({}), set({})) == 1.0 && view_coverage_iou(set({}), set({5})) == 0.0;
  Outcome o;
  o.pass = exact == 10 && max_cells <= 32 * 32 * 32 && trivial;
  o.summary = fmt::format("{}/10 scenes identical to the oracle (largest grid {} voxels), trivial cases {}", exact,
                          max_cells, trivial ? "exact" : "WRONG");
  return o;
}

Outcome metric_units() {
  double worst_r = 0;
  for (const Vec3& axis : std::vector<Vec3>{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ(), Vec3(1, 1, 1).normalized()}) {
    const Quaternion half{0.0, axis.x(), axis.y(), axis.z()};  // rotation by pi
    worst_r = std::max(worst_r, std::abs(rotation_geodesic(Quaternion::identity(), half) - std::numbers::pi));
  }
  const double e5 = std::abs(translation_error(Vec3(0, 0, 0), Vec3(3, 4, 0)) - 5.0);
  const double e5b = std::abs(translation_error(Vec3(1, 1, 1), Vec3(1, 4, 5)) - 5.0);
  Outcome o;
  o.pass = worst_r <= 1e-12 && e5 <= 1e-12 && e5b <= 1e-12;
  o.summary = fmt::format("|geodesic(I, 180deg) - pi| = {:.3g}, |3-4-5 - 5| = {:.3g}", worst_r, std::max(e5, e5b));
  return o;
}

struct OverfitScore {
  double loss = 0, e_t = 0, e_r = 0;
};

OverfitScore score_records(Model<float>& m, const std::vector<TaskRecord>& recs, const LossWeights& w) {
  OverfitScore s;
  for (const auto& r : recs) {
    ag::Graph<float> g(false);
    s.loss += total_loss(g, m.forward(g, make_input(r)), make_targets(r), w).values.total;
    const CameraPose p = m.predict(make_input(r)).target_pose();
    s.e_t += translation_error(p.t, r.target.pose.t);
    s.e_r += rotation_geodesic(p.q, r.target.pose.q);
  }
  const double n = static_cast<double>(recs.size());
  return {s.loss / n, s.e_t / n, s.e_r / n};
}

Outcome overfit(const Settings& s) {
  std::vector<TaskRecord> recs;
  for (int i = 0; i < 32; ++i) recs.push_back(generate_task(mix_seed(505, i), i, MicroworldParams{}));
  TrainConfig c;  // desk defaults: stage 1, 2000 steps
  c.checkpoint_every = 0;
  const LossWeights w = c.effective_weights();
  const nlohmann::json key = {{"criterion", 5}, {"train", c}, {"model", ModelConfig{}}, {"records", 32},
                              {"record_seed", 505}, {"world", MicroworldParams{}}};

  Model<float> init(ModelConfig{}, 1);
  configure_stage(init, c);
  const OverfitScore before = score_records(init, recs, w);
  auto [m, secs] = cached_model(
      s, "overfit", key,
      [&](Model<float>& mm) {
        TrainOptions opt;
        opt.on_step = progress("overfit", 250);
        train(mm, c, [&](size_t i) { return recs[i]; }, recs.size(), opt);
      });
  const OverfitScore after = score_records(m, recs, w);
  const double drop = 1.0 - after.loss / before.loss;
  Outcome o;
  o.pass = drop >= 0.5 && after.e_t <= 0.3 && after.e_r <= 0.3 && secs <= 3600;
  o.summary = fmt::format("loss {:.3f} -> {:.3f} (-{:.1f}%), mean e_t {:.3f}, e_r {:.3f} rad, {} steps in {:.0f} s",
                          before.loss, after.loss, 100 * drop, after.e_t, after.e_r, c.steps, secs);
  o.details = {{"loss_before", before.loss}, {"loss_after", after.loss}, {"e_t", after.e_t},
               {"e_r", after.e_r},           {"train_seconds", secs}};
  return o;
}

/// Generates a dataset unless an identical one is already present.
fs::path ensure_dataset(const Settings& s, const std::string& name, int64_t count, uint64_t seed) {
  const fs::path dir = s.work / name;
  MicroworldParams p;
  if (!s.fresh && fs::exists(dir / "manifest.json")) {
    const nlohmann::json have = DatasetReader(dir).manifest().to_json();
    nlohmann::json want;
    to_json(want, p);
    want.erase("workers");
    if (have.at("count") == count && have.at("seed") == seed && have.at("params") == want) return dir;
  }
  fs::remove_all(dir);
  generate_dataset(count, seed, dir, p);
  return dir;
}

struct Generalization {
  Outcome outcome;
  std::optional<Model<float>> model;
};

Generalization generalization(const Settings& s) {
  const auto t0 = Clock::now();
  const fs::path d1 = ensure_dataset(s, "stage1_data", 2000, 6001);
  const fs::path d2 = ensure_dataset(s, "stage2_data", 500, 6002);
  const fs::path dh = ensure_dataset(s, "heldout_data", 200, 6003);
  const double gen_secs = seconds_since(t0);
  const DatasetReader r1(d1), r2(d2), rh(dh);

  TrainConfig c1;
  c1.steps = s.stage1_steps;
  c1.checkpoint_every = 0;
  TrainConfig c2 = c1;
  c2.stage = 2;
  c2.steps = s.stage2_steps;
  const nlohmann::json key = {{"criterion", 6}, {"stage1", c1}, {"stage2", c2}, {"model", ModelConfig{}},
                              {"data", {6001, 6002}}, {"world", MicroworldParams{}}};
  auto [m, secs] = cached_model(
      s, "general", key,
      [&](Model<float>& mm) {
        TrainOptions opt;
        opt.on_step = progress("stage 1", 500);
        train(mm, c1, r1, opt);
        opt.on_step = progress("stage 2", 500);
        train(mm, c2, r2, opt);
      });

  const auto te = Clock::now();
  const SuiteReport rep = eval_suite(m, rh, EvalParams{});
  const double eval_secs = seconds_since(te);
  const MethodSummary& model = *rep.find("model");
  const MethodSummary& start = *rep.find("start");
  const MethodSummary& random = *rep.find("random");
  const double total = gen_secs + secs + eval_secs;
  Outcome o;
  o.pass = model.mean_iou >= 1.5 * start.mean_iou && model.mean_iou >= 2 * random.mean_iou &&
           model.mean_e_r < start.mean_e_r && total <= 6 * 3600;
  o.summary = fmt::format(
      "IoU model {:.2f}% / start {:.2f}% / random {:.2f}%, e_r model {:.3f} vs start {:.3f}, {}+{} steps, {:.0f} s",
      100 * model.mean_iou, 100 * start.mean_iou, 100 * random.mean_iou, model.mean_e_r, start.mean_e_r,
      c1.steps, c2.steps, total);
  o.details = rep.to_json();
  o.details["train_seconds"] = secs;
  std::ofstream(s.work / "heldout_report.txt") << rep.to_text();
  return {std::move(o), std::move(m)};
}

Outcome equivariance() {
  Model<float> m(ModelConfig{}, 7);
  // Open gates and adapters so every path of the network is exercised.
  m.attach_adapters(4, 7);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  for (auto* p : m.params().all()) {
    if (p->group == "fusion.gamma" || p->name.find("lora_b") != std::string::npos) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
    }
  }
  float worst = 0.f;
  for (int t = 0; t < 20; ++t) {
    const int n = 3 + t % (m.config().max_frames - 3);
    const ModelInput in = random_input(rng, m.config(), n, 4 + t % 5);
    ModelInput perm = in;
    std::shuffle(perm.images.begin() + 1, perm.images.end(), rng);
    if (perm.images == in.images) std::swap(perm.images[1], perm.images[2]);
    const PoseEncoding a = m.predict(in).poses[static_cast<size_t>(n)];
    const PoseEncoding b = m.predict(perm).poses[static_cast<size_t>(n)];
    for (int i = 0; i < 9; ++i) worst = std::max(worst, static_cast<float>(std::abs(a[i] - b[i])));
  }
  Outcome o;
  o.pass = worst < 1e-5f;
  o.summary = fmt::format("max target-pose change under context permutation {:.3g} over 20 inputs", worst);
  return o;
}

Outcome stage_contract() {
  const TaskRecord r = generate_task(mix_seed(808, 0), 0, gradcheck_world_params());
  ModelConfig mc = gradcheck_model_config();
  mc.lora_rank = 0;
  Model<float> m(mc, 8);
  for (auto* p : m.params().all()) {
    if (p->group == "fusion.gamma") p->value.setConstant(0.3f);
  }
  auto backward = [&](const LossWeights& w) {
    m.params().zero_grad();
    ag::Graph<float> g;
    g.backward(total_loss(g, m.forward(g, make_input(r)), make_targets(r), w).total);
  };
  auto max_grad = [&](const std::function<bool(const ag::Param<float>&)>& pick) {
    float v = 0.f;
    for (const auto* p : m.params().all()) {
      if (pick(*p)) v = std::max(v, p->grad.cwiseAbs().maxCoeff());
    }
    return v;
  };
  auto backbone = [](const ag::Param<float>& p) { return p.group == "backbone"; };

  TrainConfig c;
  configure_stage(m, c);
  backward(c.effective_weights());
  const float s1_backbone = max_grad(backbone);
  const float s1_trunk = max_grad([](const ag::Param<float>& p) { return p.group == "trunk"; });

  c.stage = 2;
  configure_stage(m, c);
  const LossWeights w2 = c.effective_weights();
  backward(w2);
  const float s2_backbone = max_grad(backbone);
  const float s2_adapter = max_grad([](const ag::Param<float>& p) { return p.group == "adapter"; });

  Outcome o;
  o.pass = s1_backbone == 0.f && s1_trunk > 0.f && s2_backbone == 0.f && s2_adapter > 0.f && w2.heat == 0.0 &&
           w2.mask == 0.0;
  o.summary = fmt::format(
      "stage 1 backbone grad {:.3g}, stage 2 backbone grad {:.3g}, adapter grad {:.3g}, w_heat {}, w_mask {}",
      s1_backbone, s2_backbone, s2_adapter, w2.heat, w2.mask);
  return o;
}

Outcome judge_debiasing() {
  // Candidates are real renders of one task from different poses.
  const TaskRecord r = generate_task(mix_seed(909, 0), 0, MicroworldParams{});
  std::vector<Candidate> cands;
  cands.push_back({"gt", render_candidate(r, r.target.pose, 64)});
  cands.push_back({"start", render_candidate(r, CameraPose{Quaternion::identity(), Vec3::Zero(), r.target.pose.fov}, 64)});
  Rng rng(9);
  cands.push_back({"random", render_candidate(r, baseline_pose(BaselineKind::kRandom, r, rng), 64)});
  cands.push_back({"random2", render_candidate(r, baseline_pose(BaselineKind::kRandom, r, rng), 64)});
  const int k = static_cast<int>(cands.size());

  bool invariant = true;
  StubJudge stub(11);
  JudgeOptions opt;
  opt.permutations = 2 * k;
  const RankingResult base = judge_rank(stub, cands, r.frames, "x", opt);
  std::vector<int> order(static_cast<size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::mt19937_64 g(static_cast<uint64_t>(trial));
    std::shuffle(order.begin(), order.end(), g);
    std::vector<Candidate> relabeled;
    for (int i : order) relabeled.push_back({"c" + std::to_string(i), cands[static_cast<size_t>(i)].view});
    opt.seed = static_cast<uint64_t>(trial) + 1;
    const RankingResult rr = judge_rank(stub, relabeled, r.frames, "x", opt);
    for (size_t j = 0; j < order.size(); ++j) invariant = invariant && rr.mean_rank[j] == base.mean_rank[order[j]];
  }

  bool tie = true;
  PositionBiasedJudge biased;
  for (int kk = 2; kk <= k; ++kk) {
    const std::vector<Candidate> sub(cands.begin(), cands.begin() + kk);
    for (int mult : {1, 3}) {
      JudgeOptions po;
      po.permutations = kk * mult;
      const RankingResult rr = judge_rank(biased, sub, r.frames, "x", po);
      for (double v : rr.mean_rank) tie = tie && v == (kk + 1) / 2.0;
    }
  }
  Outcome o;
  o.pass = invariant && tie;
  o.summary = fmt::format("relabeling invariance {}, position-biased tie at (k+1)/2 {}", invariant ? "exact" : "BROKEN",
                          tie ? "exact" : "BROKEN");
  return o;
}

Outcome closed_loop(const Settings& s, Model<float>* model) {
  const MicroworldParams p;
  const TaskRecord first = generate_task(mix_seed(1010, 0), 0, p);
  const int budget = std::min(ModelConfig{}.max_frames - 1, p.max_context);
  const auto gt = closed_loop_run(gt_predictor(), first, 1, budget, EvalParams{}.voxel_resolution);
  const double gt_iou = gt.at(0).metrics.iou;

  Outcome o;
  if (!model) {
    o.summary = fmt::format("gt step-1 IoU {:.4f}; no trained model from criterion 6", gt_iou);
    return o;
  }
  std::vector<std::vector<LoopStep>> runs;
  const PosePredictor pred = model_predictor(*model);
  for (int64_t i = 0; static_cast<int>(runs.size()) < s.loop_tasks; ++i) {
    const TaskRecord r = generate_task(mix_seed(1011, static_cast<uint64_t>(i)), i, p);
    if (occluded_start(r)) runs.push_back(closed_loop_run(pred, r, s.loop_steps, budget, EvalParams{}.voxel_resolution));
  }
  const LoopTable table = tabulate(runs);
  std::ofstream(s.work / "loop_table.txt") << table.to_text();
  o.pass = gt_iou == 1.0 && table.mean_coverage.size() >= 2 && table.mean_coverage[1] >= table.mean_coverage[0];
  std::string per_step;
  for (size_t i = 0; i < table.mean_coverage.size(); ++i)
    per_step += fmt::format("{}{:.2f}%", i ? " " : "", 100 * table.mean_coverage[i]);
  o.summary = fmt::format("gt step-1 IoU {:.4f}; model coverage per step over {} occluded starts: {}", gt_iou,
                          table.runs, per_step);
  o.details = table.to_json();
  return o;
}

Outcome round_trips(const Settings& s) {
  // Shards: re-reading every record and writing it back reproduces each file.
  const fs::path a = s.work / "gen_a", b = s.work / "gen_b", c = s.work / "gen_c";
  for (const auto& d : {a, b, c}) fs::remove_all(d);
  const std::vector<std::string> base = {"gen", "--count", "12", "--seed", "1111", "--set",
                                         "microworld.records_per_shard=5"};
  auto with = [&](const fs::path& out, int workers) {
    auto args = base;
    for (const auto& x : {std::string("--out"), out.string(), std::string("--workers"), std::to_string(workers)})
      args.push_back(x);
    return run_cli(args);
  };
  const bool ran = with(a, 1) == kExitOk && with(b, 1) == kExitOk && with(c, 3) == kExitOk;
  const bool rerun_same = ran && dir_bytes(a) == dir_bytes(b);
  const bool workers_same = ran && dir_bytes(a, {"config.json"}) == dir_bytes(c, {"config.json"});

  bool shards_same = ran;
  int shards = 0;
  for (const auto& e : ran ? fs::directory_iterator(a) : fs::directory_iterator()) {
    if (e.path().extension() != ".iptask") continue;
    ++shards;
    const std::string bytes = slurp(e.path());
    std::istringstream is(bytes);
    std::ostringstream os;
    while (is.peek() != std::char_traits<char>::eof()) write_record(os, read_record(is));
    shards_same = shards_same && os.str() == bytes;
  }

  Model<float> m(ModelConfig{}, 12);
  m.attach_adapters(4, 12);
  const nlohmann::json train = {{"stage", 2}};
  const fs::path ck = s.work / "roundtrip.ipck";
  save_checkpoint(ck, m, train);
  const std::string bytes = slurp(ck);
  LoadedCheckpoint back = load_checkpoint(ck);
  const bool ckpt_same = serialize_checkpoint(back.model, back.train_config) == bytes;

  Outcome o;
  o.pass = rerun_same && workers_same && shards_same && shards == 3 && ckpt_same;
  o.summary = fmt::format("gen reruns {}, across workers {}, {} shards re-read {}, checkpoint re-read {}",
                          rerun_same ? "identical" : "DIFFER", workers_same ? "identical" : "DIFFER", shards,
                          shards_same ? "identical" : "DIFFER", ckpt_same ? "identical" : "DIFFER");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line per criterion."};
  Settings s;
  std::vector<int> only, known;
  app.add_option("--work", s.work, "Work directory for datasets and cached checkpoints");
  app.add_flag("--fresh", s.fresh, "Ignore cached datasets and checkpoints");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--known-failures", known,
                 "Criteria whose failure is documented; they still print FAIL but do not fail the run")
      ->delimiter(',');
  app.add_option("--stage1-steps", s.stage1_steps, "Stage-1 steps for the generalization run");
  app.add_option("--stage2-steps", s.stage2_steps, "Stage-2 steps for the generalization run");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_pattern("%H:%M:%S %v");
  fs::create_directories(s.work);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, Outcome> results;
  std::optional<Model<float>> trained;
  const std::vector<std::pair<int, std::string>> names = {
      {1, "gradient check"},  {2, "zero-gate equivalence"}, {3, "IoU oracle equivalence"},
      {4, "metric units"},    {5, "overfit sanity"},        {6, "generalization trend"},
      {7, "permutation equivariance"}, {8, "two-stage contract"}, {9, "judge de-biasing"},
      {10, "closed-loop mechanism"},   {11, "format round-trips"}};
  for (const auto& [id, name] : names) {
    if (!wanted(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      switch (id) {
        case 1: o = gradient_check(); break;
        case 2: o = zero_gate(); break;
        case 3: o = iou_oracle(); break;
        case 4: o = metric_units(); break;
        case 5: o = overfit(s); break;
        case 6: {
          Generalization g = generalization(s);
          o = std::move(g.outcome);
          trained = std::move(g.model);
          break;
        }
        case 7: o = equivariance(); break;
        case 8: o = stage_contract(); break;
        case 9: o = judge_debiasing(); break;
        case 10: o = closed_loop(s, trained ? &*trained : nullptr); break;
        case 11: o = round_trips(s); break;
      }
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("error: ") + e.what();
    }
    o.details["seconds"] = seconds_since(t0);
    spdlog::info("criterion {} done in {:.1f} s", id, seconds_since(t0));
    results[id] = std::move(o);
  }

  nlohmann::json all = nlohmann::json::object();
  int unexpected = 0;
  fmt::print("\n");
  for (const auto& [id, name] : names) {
    if (!results.contains(id)) continue;
    const Outcome& o = results[id];
    const bool excused = std::find(known.begin(), known.end(), id) != known.end();
    if (!o.pass && !excused) ++unexpected;
    fmt::print("{} {:>2} {}: {}{}\n", o.pass ? "PASS" : "FAIL", id, name, o.summary,
               !o.pass && excused ? " [known failure]" : "");
    all[std::to_string(id)] = {{"name", name}, {"pass", o.pass}, {"summary", o.summary}, {"details", o.details}};
  }
  std::ofstream(s.work / "acceptance.json") << all.dump(2) << "\n";
  return unexpected == 0 ? 0 : 1;
}
