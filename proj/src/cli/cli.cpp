#include "activeview/cli.hpp"

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "activeview/dataset.hpp"
#include "activeview/image_io.hpp"
#include "activeview/judge.hpp"
#include "activeview/vocab.hpp"

namespace av {

namespace fs = std::filesystem;

// ---- config --------------------------------------------------------------------------

void to_json(nlohmann::json& j, const JudgeSettings& s) {
  j = {{"permutations", s.permutations},       {"seed", s.seed},
       {"max_attempts", s.max_attempts},       {"max_in_flight", s.max_in_flight},
       {"model", s.model},                     {"timeout_seconds", s.timeout_seconds},
       {"candidate_size", s.candidate_size},   {"stub_seed", s.stub_seed}};
}

void from_json(const nlohmann::json& j, JudgeSettings& s) {
  const JudgeSettings d;
  const nlohmann::json known = d;
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError(fmt::format("unknown judge key '{}'", key));
  }
  s.permutations = j.value("permutations", d.permutations);
  s.seed = j.value("seed", d.seed);
  s.max_attempts = j.value("max_attempts", d.max_attempts);
  s.max_in_flight = j.value("max_in_flight", d.max_in_flight);
  s.model = j.value("model", d.model);
  s.timeout_seconds = j.value("timeout_seconds", d.timeout_seconds);
  s.candidate_size = j.value("candidate_size", d.candidate_size);
  s.stub_seed = j.value("stub_seed", d.stub_seed);
}

namespace {

/// Unknown keys at any depth, compared against the defaults document.
void reject_unknown_keys(const nlohmann::json& doc, const nlohmann::json& defaults, const std::string& path) {
  if (!doc.is_object()) throw ConfigError(fmt::format("config '{}' must be an object", path.empty() ? "." : path));
  for (const auto& [key, value] : doc.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", here));
    if (defaults.at(key).is_object()) reject_unknown_keys(value, defaults.at(key), here);
  }
}

template <typename T>
T section(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) return T{};
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config section '{}': {}", name, e.what()));
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    microworld.validate();
  } catch (const GenerationError& e) {
    throw ConfigError(e.what());
  }
  model.validate();
  train.validate();
  eval.validate();
  if (model.width != microworld.width || model.height != microworld.height)
    throw ConfigError(fmt::format("model input {}x{} does not match microworld images {}x{}", model.width,
                                  model.height, microworld.width, microworld.height));
  if (model.max_frames < microworld.max_context + 1)
    throw ConfigError("model.max_frames must cover microworld.max_context context frames plus the target");
  if (model.vocab_size < vocab_size()) throw ConfigError("model.vocab_size is smaller than the instruction vocabulary");
  if (judge.permutations < 1 || judge.max_attempts < 1 || judge.max_in_flight < 1 || judge.timeout_seconds < 1 ||
      judge.candidate_size < 1)
    throw ConfigError("judge settings must be positive");
}

nlohmann::json RunConfig::to_json() const {
  return {{"microworld", microworld}, {"model", model}, {"train", train}, {"eval", eval}, {"judge", judge}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, RunConfig{}.to_json(), "");
  RunConfig c;
  c.microworld = section<MicroworldParams>(j, "microworld");
  c.model = section<ModelConfig>(j, "model");
  c.train = section<TrainConfig>(j, "train");
  c.eval = section<EvalParams>(j, "eval");
  c.judge = section<JudgeSettings>(j, "judge");
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override: " + assignment);
    if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config " + file->string());
    doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + file->string());
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  RunConfig c = RunConfig::from_json(doc);
  c.validate();
  return c;
}

void write_resolved_config(const fs::path& dir, const RunConfig& config) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  out << config.to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
}

// ---- subcommands ------------------------------------------------------------------------

namespace {

struct Common {
  std::string config;
  std::vector<std::string> set;

  RunConfig load() const {
    return load_run_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), set);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config");
  cmd->add_option("--set", c.set, "Override a config field, e.g. --set train.steps=100")->take_all();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("not valid JSON: " + path.string());
  return j;
}

Model<float> load_model(const std::string& ckpt) {
  LoadedCheckpoint c = load_checkpoint(ckpt);
  return std::move(c.model);
}

void check_model_fits(const ModelConfig& m, const TaskRecord& r) {
  if (m.width != r.target.width || m.height != r.target.height)
    throw ConfigError(fmt::format("model expects {}x{} images, record has {}x{}", m.width, m.height, r.target.width,
                                  r.target.height));
}

std::string encoding_line(const PoseEncoding& e) {
  std::string s;
  for (size_t i = 0; i < e.size(); ++i) s += fmt::format("{}{:.9g}", i ? " " : "", e[i]);
  return s;
}

int cmd_gen(const Common& common, int64_t count, uint64_t seed, const std::string& out, std::optional<int> workers) {
  RunConfig cfg = common.load();
  if (workers) cfg.microworld.workers = *workers;
  cfg.validate();
  if (count < 0) throw ConfigError("--count must be non-negative");
  const Manifest m = generate_dataset(count, seed, out, cfg.microworld);
  write_resolved_config(out, cfg);
  const size_t valid = m.num_valid();
  fmt::print("records {} skipped {} manifest {}\n", valid, m.records.size() - valid,
             (fs::path(out) / "manifest.json").string());
  return kExitOk;
}

int cmd_validate(const std::string& data) {
  DatasetReader reader(data);
  size_t bad = 0;
  for (size_t i = 0; i < reader.size(); ++i) {
    const TaskRecord r = reader.load(i);
    for (const std::string& v : validate_record(r)) {
      ++bad;
      fmt::print(stderr, "record {}: {}\n", r.index, v);
    }
  }
  const size_t skipped = reader.manifest().records.size() - reader.size();
  fmt::print("records {} skipped {} violations {}\n", reader.size(), skipped, bad);
  return bad == 0 ? kExitOk : kExitConfig;
}

int cmd_train(const Common& common, const std::string& data, std::optional<int> stage, const std::string& init,
              const std::string& out) {
  RunConfig cfg = common.load();
  if (stage) cfg.train.stage = *stage;
  cfg.validate();
  if (cfg.train.stage == 2 && init.empty()) throw ConfigError("stage 2 needs --init with a stage-1 checkpoint");

  Model<float> model = init.empty() ? Model<float>(cfg.model, cfg.train.seed) : load_model(init);
  if (!init.empty()) cfg.model = model.config();
  DatasetReader reader(data);
  if (reader.size() > 0) check_model_fits(model.config(), reader.load(0));
  write_resolved_config(out, cfg);

  TrainOptions opt{out, {}};
  try {
    const TrainResult res = train(model, cfg.train, reader, opt);
    fmt::print("{}\n", res.final_checkpoint.string());
  } catch (const TrainingDivergence& e) {
    spdlog::error("{}", e.what());
    fmt::print(stderr, "last good checkpoint: {}\n", (fs::path(out) / "last_good.ipck").string());
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_eval(const Common& common, const std::string& data, const std::string& ckpt, bool gt_model,
             const std::string& report) {
  RunConfig cfg = common.load();
  if (ckpt.empty() == !gt_model) throw ConfigError("eval needs exactly one of --ckpt or --gt");
  DatasetReader reader(data);
  SuiteReport rep;
  if (gt_model) {
    rep = eval_suite("gt", gt_predictor(), [&](size_t i) { return reader.load(i); }, reader.size(), cfg.eval);
  } else {
    Model<float> model = load_model(ckpt);
    cfg.model = model.config();
    if (reader.size() > 0) check_model_fits(model.config(), reader.load(0));
    rep = eval_suite(model, reader, cfg.eval);
  }
  write_resolved_config(report, cfg);
  nlohmann::json j = rep.to_json();
  j["config"] = cfg.to_json();
  j["data"] = fs::absolute(data).string();
  write_json(fs::path(report) / "report.json", j);
  write_text(fs::path(report) / "report.txt", rep.to_text());
  fmt::print("{}", rep.to_text());
  return kExitOk;
}

int cmd_judge(const Common& common, const std::string& inputs, const std::string& data_flag, bool stub,
              const std::string& endpoint, std::optional<int> m_flag, const std::string& human,
              const std::string& out_flag) {
  RunConfig cfg = common.load();
  if (m_flag) cfg.judge.permutations = *m_flag;
  cfg.validate();
  const fs::path out = out_flag.empty() ? fs::path(inputs) : fs::path(out_flag);

  nlohmann::json tasks = nlohmann::json::array();
  std::map<std::string, std::pair<double, int>> totals;
  auto add_result = [&](const std::string& task, const RankingResult& r) {
    nlohmann::json t = r.to_json();
    t["task"] = task;
    tasks.push_back(std::move(t));
    for (size_t i = 0; i < r.candidates.size(); ++i) {
      totals[r.candidates[i]].first += r.mean_rank[i];
      totals[r.candidates[i]].second += 1;
    }
  };

  if (!human.empty()) {
    for (const auto& [task, r] : read_human_rankings(human)) add_result(task, r);
  } else {
    if (stub == !endpoint.empty()) throw ConfigError("judge needs exactly one of --stub or --endpoint");
    const nlohmann::json report = read_json(fs::path(inputs) / "report.json");
    const std::string data = data_flag.empty() ? report.value("data", std::string()) : data_flag;
    if (data.empty()) throw ConfigError("judge needs --data (not recorded in the report)");
    DatasetReader reader(data);
    // Manifest entries include skipped records; map record index to reader slot.
    std::map<int64_t, size_t> by_index;
    size_t slot = 0;
    for (const auto& e : reader.manifest().records) {
      if (!e.skipped) by_index[e.index] = slot++;
    }

    // Candidate poses per record index, one per method, in report order.
    std::map<int64_t, std::vector<std::pair<std::string, PoseEncoding>>> per_record;
    for (const auto& method : report.at("methods")) {
      for (const auto& rec : method.at("records")) {
        per_record[rec.at("index").get<int64_t>()].emplace_back(method.at("name").get<std::string>(),
                                                                 rec.at("pose").get<PoseEncoding>());
      }
    }

    std::unique_ptr<Judge> judge;
    if (stub) {
      judge = std::make_unique<StubJudge>(cfg.judge.stub_seed);
    } else {
      HttpJudgeConfig hc;
      hc.url = endpoint;
      if (const char* key = std::getenv("JUDGE_API_KEY")) hc.api_key = key;
      hc.model = cfg.judge.model;
      hc.timeout_seconds = cfg.judge.timeout_seconds;
      judge = std::make_unique<HttpJudge>(hc);
    }
    JudgeOptions opt;
    opt.permutations = cfg.judge.permutations;
    opt.seed = cfg.judge.seed;
    opt.max_attempts = cfg.judge.max_attempts;
    opt.max_in_flight = cfg.judge.max_in_flight;

    for (const auto& [index, cands] : per_record) {
      const auto slot = by_index.find(index);
      if (slot == by_index.end()) throw ConfigError(fmt::format("record {} is not in {}", index, data));
      const TaskRecord r = reader.load(slot->second);
      std::vector<Candidate> candidates;
      for (const auto& [name, enc] : cands) {
        candidates.push_back({name, render_candidate(r, decode_pose(enc).pose, cfg.judge.candidate_size)});
      }
      add_result(std::to_string(index), judge_rank(*judge, candidates, r.frames, instruction_text(r.spec, r.scene), opt));
    }
  }

  nlohmann::json summary = nlohmann::json::object();
  std::string text = fmt::format("{:<12} {:>6} {:>10}\n", "method", "tasks", "mean rank");
  for (const auto& [name, acc] : totals) {
    const double mean = acc.first / acc.second;
    summary[name] = {{"tasks", acc.second}, {"mean_rank", mean}};
    text += fmt::format("{:<12} {:>6} {:>10.4f}\n", name, acc.second, mean);
  }
  write_resolved_config(out, cfg);
  write_json(out / "judge.json", {{"summary", summary}, {"tasks", tasks}, {"config", cfg.to_json()}});
  write_text(out / "judge.txt", text);
  fmt::print("{}", text);
  return kExitOk;
}

TaskRecord record_from(const std::string& data, int64_t record) {
  DatasetReader reader(data);
  if (record < 0 || static_cast<size_t>(record) >= reader.size())
    throw ConfigError(fmt::format("record {} out of range (dataset has {})", record, reader.size()));
  return reader.load(static_cast<size_t>(record));
}

int cmd_predict(const Common& common, const std::string& ckpt, const std::string& data, int64_t record,
                const std::string& render_out, const std::string& json_out) {
  RunConfig cfg = common.load();
  Model<float> model = load_model(ckpt);
  cfg.model = model.config();
  const TaskRecord r = record_from(data, record);
  check_model_fits(model.config(), r);
  const DecodedPose p = model_predictor(model)(r);
  const PoseEncoding enc = encode_pose(p.pose);
  fmt::print("{}\n", encoding_line(enc));
  if (!p.valid) spdlog::warn("predicted field of view was clamped");
  if (!render_out.empty()) {
    if (fs::path(render_out).has_parent_path()) fs::create_directories(fs::path(render_out).parent_path());
    write_png(render_out, render(r.scene, r.to_world(p.pose), r.resolution()));
  }
  if (!json_out.empty()) {
    write_json(json_out, {{"record", r.index}, {"encoding", enc}, {"pose", pose_to_json(p.pose)}, {"valid", p.valid},
                          {"metrics", metrics_json(eval_pose(r, p, cfg.eval.voxel_resolution))}});
    write_resolved_config(fs::absolute(json_out).parent_path(), cfg);
  }
  return kExitOk;
}

int cmd_loop(const Common& common, const std::string& ckpt, bool gt_model, const std::string& data, int64_t record,
             std::optional<uint64_t> scene_seed, const std::string& instruction, int steps, int suite,
             const std::string& out) {
  RunConfig cfg = common.load();
  if (ckpt.empty() == !gt_model) throw ConfigError("loop needs exactly one of --ckpt or --gt");
  std::optional<Model<float>> model;
  if (!ckpt.empty()) {
    model.emplace(load_model(ckpt));
    cfg.model = model->config();
  }
  const PosePredictor predictor = model ? model_predictor(*model) : gt_predictor();
  const int budget = std::min(cfg.model.max_frames - 1, cfg.microworld.max_context);
  fs::create_directories(out);

  if (suite > 0) {
    if (data.empty()) throw ConfigError("--suite needs --data");
    DatasetReader reader(data);
    std::vector<std::vector<LoopStep>> runs;
    for (size_t i = 0; i < reader.size() && static_cast<int>(runs.size()) < suite; ++i) {
      const TaskRecord r = reader.load(i);
      if (!occluded_start(r)) continue;
      if (model) check_model_fits(model->config(), r);
      runs.push_back(closed_loop_run(predictor, r, steps, budget, cfg.eval.voxel_resolution));
    }
    if (static_cast<int>(runs.size()) < suite)
      spdlog::warn("only {} occluded-start records found (asked for {})", runs.size(), suite);
    const LoopTable table = tabulate(runs);
    write_json(fs::path(out) / "loop_table.json", table.to_json());
    write_text(fs::path(out) / "loop_table.txt", table.to_text());
    write_resolved_config(out, cfg);
    fmt::print("{}", table.to_text());
    return kExitOk;
  }

  TaskRecord r;
  if (scene_seed) {
    r = generate_task(*scene_seed, 0, cfg.microworld);
  } else {
    if (data.empty()) throw ConfigError("loop needs --data/--record or --scene-seed");
    r = record_from(data, record);
  }
  if (!instruction.empty()) {
    // Metrics still refer to the generated target object.
    r.instruction_tokens = tokenize(instruction);
  }
  if (model) check_model_fits(model->config(), r);
  const auto result = closed_loop_run(predictor, r, steps, budget, cfg.eval.voxel_resolution);
  for (const LoopStep& s : result) {
    write_png(fs::path(out) / fmt::format("step_{:03d}.png", s.step), s.observation);
    fmt::print("{} {}\n", s.step, encoding_line(encode_pose(s.predicted.pose)));
  }
  nlohmann::json j = loop_json(result);
  j["record"] = r.index;
  j["instruction"] = instruction.empty() ? instruction_text(r.spec, r.scene) : instruction;
  write_json(fs::path(out) / "loop.json", j);
  write_resolved_config(out, cfg);
  return kExitOk;
}

int cmd_gradcheck(const Common& common, const std::string& ckpt, bool random_init, const std::string& data,
                  int64_t record, int samples, const std::string& out) {
  RunConfig cfg = common.load();
  if (ckpt.empty() == !random_init) throw ConfigError("gradcheck needs exactly one of --ckpt or --random-init");
  Model<float> model = random_init ? Model<float>(cfg.model, cfg.train.seed) : load_model(ckpt);
  cfg.model = model.config();
  const TaskRecord r = data.empty() ? generate_task(mix_seed(cfg.train.seed, 0x67636b), 0, cfg.microworld)
                                    : record_from(data, record);
  check_model_fits(model.config(), r);
  Model<double> md = model.cast<double>();
  if (cfg.train.stage == 2 && md.adapter_rank() == 0) md.attach_adapters(cfg.train.adapter_rank, mix_seed(cfg.train.seed, 0x10ca));
  {
    // Same trainable set as the configured training stage.
    Model<float> probe = md.cast<float>();
    configure_stage(probe, cfg.train);
    for (ag::Param<double>* p : md.params().all()) p->trainable = probe.params().at(p->name).trainable;
  }
  GradcheckOptions opt;
  opt.samples = samples;
  opt.seed = cfg.train.seed;
  const GradcheckReport rep = gradcheck(md, r, cfg.train.effective_weights(), opt);
  nlohmann::json j = rep.to_json();
  j["config"] = cfg.to_json();
  write_json(out, j);
  write_resolved_config(fs::absolute(out).parent_path(), cfg);
  for (const GroupCheck& g : rep.groups) {
    fmt::print("{:<10} {:>4}/{:<4} max_rel {:.3g}{}\n", g.group, g.passed, g.sampled, g.max_rel_error,
               g.frozen ? " (frozen)" : "");
  }
  fmt::print("pass {:.4f} ({}/{}) {}\n", rep.pass_fraction(), rep.passed, rep.sampled, rep.ok() ? "OK" : "FAIL");
  return rep.ok() ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Instruction-conditioned active viewpoint prediction toolkit", "activeview"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  Common common;
  std::string data, out, ckpt, init, report, endpoint, human, render_out, json_out, instruction, inputs;
  int64_t count = 0, record = 0;
  uint64_t seed = 0;
  std::optional<int> workers, stage, m_flag;
  std::optional<uint64_t> scene_seed;
  bool gt_model = false, stub = false, random_init = false;
  int steps = 1, suite = 0, samples = 240;

  auto* gen = app.add_subcommand("gen", "Generate a task dataset");
  add_common(gen, common);
  gen->add_option("--count", count, "Number of records")->required();
  gen->add_option("--seed", seed, "Dataset seed");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--workers", workers, "Generation threads (output does not depend on it)");

  auto* val = app.add_subcommand("validate", "Check every record of a dataset");
  val->add_option("--data", data, "Dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train stage 1 or 2");
  add_common(tr, common);
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--stage", stage, "1 or 2 (overrides train.stage)")->check(CLI::Range(1, 2));
  tr->add_option("--init", init, "Checkpoint to start from");
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with baselines");
  add_common(ev, common);
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--ckpt", ckpt, "Checkpoint");
  ev->add_flag("--gt", gt_model, "Use the ground-truth pose as the model");
  ev->add_option("--report", report, "Report directory")->required();

  auto* jd = app.add_subcommand("judge", "Rank the methods of an eval report with a judge");
  add_common(jd, common);
  jd->add_option("--report-inputs", inputs, "Eval report directory");
  jd->add_option("--data", data, "Dataset directory (defaults to the one in the report)");
  jd->add_flag("--stub", stub, "Offline content-hash judge");
  jd->add_option("--endpoint", endpoint, "Chat-completions URL (defaults to $JUDGE_API_URL)");
  jd->add_option("-M,--permutations", m_flag, "Candidate orders per task");
  jd->add_option("--human", human, "Ingest human rankings from CSV instead");
  jd->add_option("--out", out, "Output directory (defaults to the report directory)");

  auto* pr = app.add_subcommand("predict", "Predict the target pose of one record");
  add_common(pr, common);
  pr->add_option("--ckpt", ckpt, "Checkpoint")->required();
  pr->add_option("--data", data, "Dataset directory")->required();
  pr->add_option("--record", record, "Record position in the dataset");
  pr->add_option("--render-out", render_out, "PNG of the view at the predicted pose");
  pr->add_option("--out", json_out, "JSON with the prediction and its metrics");

  auto* lp = app.add_subcommand("loop", "Closed-loop observe/predict run");
  add_common(lp, common);
  lp->add_option("--ckpt", ckpt, "Checkpoint");
  lp->add_flag("--gt", gt_model, "Use the ground-truth pose as the model");
  lp->add_option("--data", data, "Dataset directory");
  lp->add_option("--record", record, "Record position in the dataset");
  lp->add_option("--scene-seed", scene_seed, "Generate the task from this seed instead");
  lp->add_option("--instruction", instruction, "Replace the instruction text");
  lp->add_option("--steps", steps, "Loop steps")->check(CLI::PositiveNumber);
  lp->add_option("--suite", suite, "Run on this many occluded-start records and tabulate");
  lp->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_common(gc, common);
  gc->add_option("--ckpt", ckpt, "Checkpoint");
  gc->add_flag("--random-init", random_init, "Check a freshly initialized model from the config");
  gc->add_option("--data", data, "Dataset directory (default: a generated record)");
  gc->add_option("--record", record, "Record position in the dataset");
  gc->add_option("--samples", samples, "Sampled parameters")->check(CLI::PositiveNumber);
  gc->add_option("--out", out, "Report path")->required();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const auto level = spdlog::level::from_str(log_level);
  spdlog::set_level(level);

  try {
    if (gen->parsed()) return cmd_gen(common, count, seed, out, workers);
    if (val->parsed()) return cmd_validate(data);
    if (tr->parsed()) return cmd_train(common, data, stage, init, out);
    if (ev->parsed()) return cmd_eval(common, data, ckpt, gt_model, report);
    if (jd->parsed()) {
      if (human.empty() && inputs.empty()) throw ConfigError("judge needs --report-inputs or --human");
      if (human.empty() && !stub && endpoint.empty()) {
        if (const char* url = std::getenv("JUDGE_API_URL")) endpoint = url;
        if (endpoint.empty()) throw JudgeEndpointError("no judge endpoint: pass --endpoint, set JUDGE_API_URL, or use --stub");
      }
      if (out.empty() && inputs.empty()) throw ConfigError("judge needs --out");
      return cmd_judge(common, inputs, data, stub, endpoint, m_flag, human, out);
    }
    if (pr->parsed()) return cmd_predict(common, ckpt, data, record, render_out, json_out);
    if (lp->parsed()) return cmd_loop(common, ckpt, gt_model, data, record, scene_seed, instruction, steps, suite, out);
    if (gc->parsed()) return cmd_gradcheck(common, ckpt, random_init, data, record, samples, out);
  } catch (const JudgeEndpointError& e) {
    spdlog::error("{}", e.what());
    return kExitEndpoint;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const VocabError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace av
