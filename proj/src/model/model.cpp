#include "activeview/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

#include <fmt/format.h>

namespace av {

using ag::Var;

// ---- config -------------------------------------------------------------------

Vec2 ModelConfig::fov_default() const {
  const double fx = fov_deg * std::numbers::pi / 180.0;
  return {fx, 2.0 * std::atan(std::tan(fx / 2.0) * height / width)};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid model config: " + m); };
  if (C <= 0 || heads <= 0 || C % heads != 0 || (C / heads) % 4 != 0) fail("C/heads must give a head dim divisible by 4");
  if (vlm_width <= 0 || vlm_heads <= 0 || vlm_width % vlm_heads != 0 || (vlm_width / vlm_heads) % 4 != 0) {
    fail("vlm_width/vlm_heads must give a head dim divisible by 4");
  }
  if (patch < 2 || patch % 2 != 0) fail("patch must be even and >= 2");
  if (width <= 0 || height <= 0 || width % patch != 0 || height % patch != 0) fail("resolution not divisible by patch");
  if (depth < 1 || vlm_depth < 1) fail("depth and vlm_depth must be >= 1");
  if (num_register < 0) fail("num_register must be >= 0");
  if (fusion_blocks.size() != vlm_layers.size()) fail("fusion_blocks and vlm_layers differ in length");
  std::set<int> fb(fusion_blocks.begin(), fusion_blocks.end());
  if (fb.size() != fusion_blocks.size()) fail("duplicate fusion block");
  for (int b : fusion_blocks) {
    if (b < 1 || b > depth) fail("fusion block outside [1, depth]");
  }
  for (int l : vlm_layers) {
    if (l < 1 || l > vlm_depth) fail("vlm layer outside [1, vlm_depth]");
  }
  if (vocab_size < 1 || vocab_size > 96) fail("vocab_size must be in [1, 96]");
  if (max_frames < 2) fail("max_frames must be >= 2");
  if (max_tokens < 1) fail("max_tokens must be >= 1");
  if (mlp_ratio < 1 || head_channels < 1) fail("mlp_ratio and head_channels must be >= 1");
  if (!(rope_base > 1.0)) fail("rope_base must be > 1");
  if (!(fov_deg > 1.0 && fov_deg < 179.0)) fail("fov_deg out of range");
  if (lora_rank < 0) fail("lora_rank must be >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"C", c.C},
                     {"depth", c.depth},
                     {"heads", c.heads},
                     {"patch", c.patch},
                     {"width", c.width},
                     {"height", c.height},
                     {"num_register", c.num_register},
                     {"fusion_blocks", c.fusion_blocks},
                     {"vlm_layers", c.vlm_layers},
                     {"vlm_depth", c.vlm_depth},
                     {"vlm_width", c.vlm_width},
                     {"vlm_heads", c.vlm_heads},
                     {"vocab_size", c.vocab_size},
                     {"max_frames", c.max_frames},
                     {"max_tokens", c.max_tokens},
                     {"mlp_ratio", c.mlp_ratio},
                     {"head_channels", c.head_channels},
                     {"rope_base", c.rope_base},
                     {"fov_deg", c.fov_deg},
                     {"lora_rank", c.lora_rank}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  nlohmann::json known;
  to_json(known, d);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  c.C = j.value("C", d.C);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.patch = j.value("patch", d.patch);
  c.width = j.value("width", d.width);
  c.height = j.value("height", d.height);
  c.num_register = j.value("num_register", d.num_register);
  c.fusion_blocks = j.value("fusion_blocks", d.fusion_blocks);
  c.vlm_layers = j.value("vlm_layers", d.vlm_layers);
  c.vlm_depth = j.value("vlm_depth", d.vlm_depth);
  c.vlm_width = j.value("vlm_width", d.vlm_width);
  c.vlm_heads = j.value("vlm_heads", d.vlm_heads);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_frames = j.value("max_frames", d.max_frames);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.head_channels = j.value("head_channels", d.head_channels);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.fov_deg = j.value("fov_deg", d.fov_deg);
  c.lora_rank = j.value("lora_rank", d.lora_rank);
}

ModelInput make_input(const TaskRecord& record) {
  ModelInput in;
  in.width = record.target.width;
  in.height = record.target.height;
  for (const auto& f : record.frames) in.images.push_back(f.rgb);
  in.tokens = record.instruction_tokens;
  return in;
}

std::vector<int> TokenLayout::vision_rows() const {
  std::vector<int> r;
  for (int f = 0; f < frames; ++f) {
    for (int p = 0; p < P; ++p) r.push_back(vision(f) + p);
  }
  return r;
}

std::vector<int> TokenLayout::camera_rows() const {
  std::vector<int> r;
  for (int f = 0; f < frames; ++f) r.push_back(camera(f));
  return r;
}

std::vector<int> TokenLayout::semantic_rows() const {
  std::vector<int> r;
  for (int f = 0; f < frames; ++f) {
    for (int p = 0; p < P; ++p) r.push_back(semantic(f) + p);
  }
  return r;
}

CameraPose ModelOutput::target_pose() const {
  if (poses.empty()) throw ConfigError("empty model output");
  return decode_pose(poses.back()).pose;
}

// ---- construction -------------------------------------------------------------------

namespace {

template <typename T>
void fill_normal(ag::Mat<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    // Box-Muller keeps initialization identical across standard libraries.
    const double u1 = std::max(rng.uniform(), 1e-300);
    const double u2 = rng.uniform();
    m.data()[i] = static_cast<T>(stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2));
  }
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  const int rank = config_.lora_rank;
  config_.lora_rank = 0;
  Rng rng(seed);
  const int C = config_.C;
  const int W = config_.vlm_width;
  const int pp3 = config_.patch * config_.patch * 3;

  auto lin = [&](const std::string& prefix, const std::string& group, int in, int out, bool bias, double std) {
    fill_normal(params_.add(prefix + ".w", group, in, out, true).value, rng, std);
    if (bias) params_.add(prefix + ".b", group, 1, out, false);
  };
  auto ln = [&](const std::string& prefix, const std::string& group, int n) {
    params_.add(prefix + ".g", group, 1, n, false).value.setOnes();
    params_.add(prefix + ".b", group, 1, n, false);
  };
  auto mlp = [&](const std::string& prefix, const std::string& group, int n, double out_scale) {
    const int hidden = n * config_.mlp_ratio;
    lin(prefix + ".w1", group, n, hidden, false, 1.0 / std::sqrt(n));
    params_.add(prefix + ".b1", group, 1, hidden, false);
    lin(prefix + ".w2", group, hidden, n, false, out_scale / std::sqrt(hidden));
    params_.add(prefix + ".b2", group, 1, n, false);
  };
  auto token = [&](const std::string& name, const std::string& group, int rows, int cols) {
    fill_normal(params_.add(name, group, rows, cols, false).value, rng, 0.5);
  };

  // Backbone.
  lin("vlm.patch", "backbone", pp3, W, true, 1.0 / std::sqrt(pp3));
  token("vlm.tok", "backbone", config_.vocab_size, W);
  const double vlm_out = 1.0 / std::sqrt(2.0 * config_.vlm_depth);
  for (int l = 1; l <= config_.vlm_depth; ++l) {
    const std::string p = fmt::format("vlm.l{}", l);
    ln(p + ".ln1", "backbone", W);
    for (const char* m : {"q", "k", "v"}) lin(p + "." + m, "backbone", W, W, false, 1.0 / std::sqrt(W));
    lin(p + ".o", "backbone", W, W, true, vlm_out / std::sqrt(W));
    ln(p + ".ln2", "backbone", W);
    mlp(p + ".mlp", "backbone", W, vlm_out);
  }

  // Trunk embedding and initial tokens.
  lin("trunk.patch", "embed", pp3, C, true, 1.0 / std::sqrt(pp3));
  for (const char* s : {"0", "1"}) {
    token(std::string("trunk.cam") + s, "embed", 1, C);
    if (config_.num_register > 0) token(std::string("trunk.reg") + s, "embed", config_.num_register, C);
    token(std::string("trunk.sem") + s, "embed", config_.P(), C);
  }
  token("trunk.pad", "embed", 1, C);

  const double trunk_out = 1.0 / std::sqrt(4.0 * config_.depth);
  for (int b = 1; b <= config_.depth; ++b) {
    for (const char* kind : {"intra", "global"}) {
      const std::string p = fmt::format("trunk.b{}.{}", b, kind);
      ln(p + ".ln1", "trunk", C);
      lin(p + ".qkv", "trunk", C, 3 * C, true, 1.0 / std::sqrt(C));
      lin(p + ".o", "trunk", C, C, true, trunk_out / std::sqrt(C));
      ln(p + ".ln2", "trunk", C);
      mlp(p + ".mlp", "trunk", C, trunk_out);
    }
  }
  ln("trunk.ln_f", "trunk", C);

  for (int k = 1; k <= config_.n_q(); ++k) {
    const std::string p = fmt::format("fusion{}", k);
    lin(p + ".wq", "fusion.wq", C, W, false, 1.0 / std::sqrt(C));
    lin(p + ".proj", "fusion.proj", W, C, true, 1.0 / std::sqrt(W));
    params_.add(p + ".gamma", "fusion.gamma", 1, C, false);
  }

  lin("head.cam.l1", "head.camera", 2 * C, C, true, 1.0 / std::sqrt(2 * C));
  lin("head.cam.l2", "head.camera", C, 9, true, 0.01);

  const int c1 = config_.head_channels;
  const int s1 = config_.patch / 2;
  for (const auto& [name, group, cout] :
       {std::tuple{"head.geo", "head.geometry", 4}, std::tuple{"head.sem", "head.semantic", 2}}) {
    const std::string p = name;
    lin(p + ".l1", group, 2 * C, C, true, 1.0 / std::sqrt(2 * C));
    lin(p + ".l2", group, C, s1 * s1 * c1, true, 1.0 / std::sqrt(C));
    lin(p + ".l3", group, c1, 4 * cout, true, 1.0 / std::sqrt(c1));
  }
  // Start depth near typical room distances (softplus(2.4) ~ 2.5).
  auto& gb = params_.at("head.geo.l3.b").value;
  for (int s = 0; s < 4; ++s) gb(0, s * 4) = T(2.4);

  if (rank > 0) attach_adapters(rank, mix_seed(seed, 0xada));
}

template <typename T>
void Model<T>::attach_adapters(int rank, uint64_t seed) {
  if (rank < 0) throw ConfigError("adapter rank must be >= 0");
  if (rank == 0) return;
  if (config_.lora_rank != 0) throw ConfigError("adapters already attached");
  Rng rng(seed);
  const int W = config_.vlm_width;
  for (int l = 1; l <= config_.vlm_depth; ++l) {
    for (const char* m : {"q", "k", "v", "o"}) {
      const std::string p = fmt::format("vlm.l{}.{}", l, m);
      fill_normal(params_.add(p + ".lora_a", "adapter", W, rank, true).value, rng, 1.0 / std::sqrt(W));
      params_.add(p + ".lora_b", "adapter", rank, W, true);
    }
  }
  config_.lora_rank = rank;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  ModelConfig base = config_;
  base.lora_rank = 0;
  Model<U> out(base, 0);
  if (config_.lora_rank > 0) out.attach_adapters(config_.lora_rank, 0);
  for (const auto* p : params_.all()) {
    auto& q = out.params().at(p->name);
    q.value = p->value.template cast<U>();
    q.trainable = p->trainable;
  }
  return out;
}

// ---- forward pieces ---------------------------------------------------------------

template <typename T>
void Model<T>::check_input(const ModelInput& in) const {
  if (in.width != config_.width || in.height != config_.height) {
    throw ConfigError(fmt::format("input resolution {}x{} does not match model {}x{}", in.width, in.height,
                                  config_.width, config_.height));
  }
  const int n = in.num_context();
  if (n < 1 || n > config_.max_frames - 1) {
    throw ConfigError(fmt::format("context length {} outside [1, {}]", n, config_.max_frames - 1));
  }
  for (const auto& img : in.images) {
    if (img.size() != static_cast<size_t>(in.width) * in.height * 3) throw ConfigError("image size mismatch");
  }
  if (static_cast<int>(in.tokens.size()) > config_.max_tokens) {
    throw ConfigError(fmt::format("instruction length {} exceeds budget {}", in.tokens.size(), config_.max_tokens));
  }
  for (int32_t t : in.tokens) {
    if (t < 0 || t >= config_.vocab_size) throw ConfigError("instruction token out of vocabulary");
  }
}

template <typename T>
TokenLayout Model<T>::layout(int num_context) const {
  return {num_context + 1, config_.P(), config_.num_register, config_.grid_w()};
}

template <typename T>
Var Model<T>::norm(Graph& g, Var x, const std::string& prefix) {
  return ag::layernorm(g, x, param(g, prefix + ".g"), param(g, prefix + ".b"));
}

template <typename T>
Var Model<T>::mlp(Graph& g, Var x, const std::string& prefix) {
  Var h = ag::gelu(g, ag::linear(g, x, param(g, prefix + ".w1.w"), param(g, prefix + ".b1")));
  return ag::linear(g, h, param(g, prefix + ".w2.w"), param(g, prefix + ".b2"));
}

template <typename T>
Var Model<T>::backbone_proj(Graph& g, Var h, const std::string& prefix) {
  const bool bias = params_.contains(prefix + ".b");
  Var y = ag::linear(g, h, param(g, prefix + ".w"), bias ? param(g, prefix + ".b") : Var{});
  if (config_.lora_rank > 0) {
    Var low = ag::matmul(g, ag::matmul(g, h, param(g, prefix + ".lora_a")), param(g, prefix + ".lora_b"));
    y = ag::add(g, y, low);
  }
  return y;
}

template <typename T>
Var Model<T>::patch_rows(Graph& g, const ModelInput& in, int frame) {
  const int ps = config_.patch, gw = config_.grid_w(), gh = config_.grid_h();
  ag::Mat<T> m(gw * gh, ps * ps * 3);
  const auto& img = in.images[static_cast<size_t>(frame)];
  for (int pr = 0; pr < gh; ++pr) {
    for (int pc = 0; pc < gw; ++pc) {
      int c = 0;
      for (int dy = 0; dy < ps; ++dy) {
        for (int dx = 0; dx < ps; ++dx) {
          const size_t px = static_cast<size_t>(pr * ps + dy) * in.width + (pc * ps + dx);
          for (int ch = 0; ch < 3; ++ch) m(pr * gw + pc, c++) = static_cast<T>(img[3 * px + ch]) - T(0.5);
        }
      }
    }
  }
  return g.constant(std::move(m));
}

template <typename T>
SemanticKV Model<T>::extract_kv(Graph& g, const ModelInput& in) {
  check_input(in);
  const int n = in.num_context();
  const int P = config_.P();
  const int T_len = static_cast<int>(in.tokens.size());
  std::vector<Var> frames;
  for (int f = 0; f < n; ++f) frames.push_back(patch_rows(g, in, f));
  Var x = ag::linear(g, ag::concat_rows(g, frames), param(g, "vlm.patch.w"), param(g, "vlm.patch.b"));
  if (T_len > 0) {
    std::vector<int> idx(in.tokens.begin(), in.tokens.end());
    x = ag::concat_rows(g, {x, ag::gather_rows(g, param(g, "vlm.tok"), std::move(idx))});
  }
  const int L = n * P + T_len;

  std::vector<ag::RopePos> pos;
  for (int f = 0; f < n; ++f) {
    for (int p = 0; p < P; ++p) pos.push_back(ag::RopePos::grid(p / config_.grid_w(), p % config_.grid_w()));
  }
  for (int t = 0; t < T_len; ++t) pos.push_back(ag::RopePos::index(t));
  auto plan = std::make_shared<const ag::RopePlan<T>>(
      ag::make_rope_plan<T>(pos, config_.vlm_width / config_.vlm_heads, config_.rope_base));

  SemanticKV kv;
  kv.frames = n;
  kv.P = P;
  kv.T = T_len;
  kv.k.resize(config_.vlm_layers.size());
  kv.v.resize(config_.vlm_layers.size());
  const int last = *std::max_element(config_.vlm_layers.begin(), config_.vlm_layers.end());
  for (int l = 1; l <= last; ++l) {
    const std::string p = fmt::format("vlm.l{}", l);
    Var h = norm(g, x, p + ".ln1");
    Var k = backbone_proj(g, h, p + ".k");
    Var v = backbone_proj(g, h, p + ".v");
    for (size_t j = 0; j < config_.vlm_layers.size(); ++j) {
      if (config_.vlm_layers[j] == l) {
        kv.k[j] = k;
        kv.v[j] = v;
      }
    }
    if (l == last) break;
    Var q = backbone_proj(g, h, p + ".q");
    Var a = ag::attention(g, ag::rope(g, q, plan), ag::rope(g, k, plan), v, config_.vlm_heads, {{0, L, 0, L}});
    x = ag::add(g, x, backbone_proj(g, a, p + ".o"));
    x = ag::add(g, x, mlp(g, norm(g, x, p + ".ln2"), p + ".mlp"));
  }
  return kv;
}

template <typename T>
Var Model<T>::assemble_tokens(Graph& g, const ModelInput& in) {
  check_input(in);
  const int n = in.num_context();
  const int P = config_.P();
  std::vector<Var> frames;
  for (int f = 0; f < n; ++f) frames.push_back(patch_rows(g, in, f));
  Var vis = ag::linear(g, ag::concat_rows(g, frames), param(g, "trunk.patch.w"), param(g, "trunk.patch.b"));
  Var pad = ag::gather_rows(g, param(g, "trunk.pad"), std::vector<int>(static_cast<size_t>(P), 0));
  std::array<Var, 2> cam{param(g, "trunk.cam0"), param(g, "trunk.cam1")};
  std::array<Var, 2> sem{param(g, "trunk.sem0"), param(g, "trunk.sem1")};
  std::array<Var, 2> reg{};
  if (config_.num_register > 0) reg = {param(g, "trunk.reg0"), param(g, "trunk.reg1")};

  std::vector<Var> parts;
  for (int f = 0; f <= n; ++f) {
    const int s = f == 0 ? 0 : 1;
    parts.push_back(f < n ? ag::slice_rows(g, vis, f * P, (f + 1) * P) : pad);
    parts.push_back(cam[s]);
    if (config_.num_register > 0) parts.push_back(reg[s]);
    parts.push_back(sem[s]);
  }
  return ag::concat_rows(g, parts);
}

template <typename T>
std::shared_ptr<const ag::RopePlan<T>> Model<T>::trunk_rope(const TokenLayout& lay) const {
  std::vector<ag::RopePos> pos(static_cast<size_t>(lay.rows()));
  for (int f = 0; f < lay.frames; ++f) {
    for (int p = 0; p < lay.P; ++p) {
      const auto rp = ag::RopePos::grid(p / lay.grid_w, p % lay.grid_w);
      pos[static_cast<size_t>(lay.vision(f) + p)] = rp;
      pos[static_cast<size_t>(lay.semantic(f) + p)] = rp;
    }
  }
  return std::make_shared<const ag::RopePlan<T>>(
      ag::make_rope_plan<T>(pos, config_.C / config_.heads, config_.rope_base));
}

template <typename T>
Var Model<T>::alternating_block(Graph& g, Var x, const TokenLayout& lay, int block, bool global) {
  const int C = config_.C;
  const auto plan = trunk_rope(lay);
  auto sublayer = [&](Var x, const std::string& p, std::vector<ag::AttnBlock> blocks) {
    Var h = norm(g, x, p + ".ln1");
    Var qkv = ag::linear(g, h, param(g, p + ".qkv.w"), param(g, p + ".qkv.b"));
    Var q = ag::rope(g, ag::slice_cols(g, qkv, 0, C), plan);
    Var k = ag::rope(g, ag::slice_cols(g, qkv, C, 2 * C), plan);
    Var v = ag::slice_cols(g, qkv, 2 * C, 3 * C);
    Var a = ag::attention(g, q, k, v, config_.heads, std::move(blocks));
    x = ag::add(g, x, ag::linear(g, a, param(g, p + ".o.w"), param(g, p + ".o.b")));
    return ag::add(g, x, mlp(g, norm(g, x, p + ".ln2"), p + ".mlp"));
  };
  std::vector<ag::AttnBlock> intra;
  for (int f = 0; f < lay.frames; ++f) {
    const int b = f * lay.tpf(), e = (f + 1) * lay.tpf();
    intra.push_back({b, e, b, e});
  }
  x = sublayer(x, fmt::format("trunk.b{}.intra", block), std::move(intra));
  if (global) x = sublayer(x, fmt::format("trunk.b{}.global", block), {{0, lay.rows(), 0, lay.rows()}});
  return x;
}

template <typename T>
Var Model<T>::semantic_fusion(Graph& g, Var x, const TokenLayout& lay, const SemanticKV& kv, int k) {
  const int n = lay.frames - 1;
  const int P = lay.P;
  if (kv.frames != n || kv.P != P) throw ConfigError("semantic KV does not match token layout");
  const std::string p = fmt::format("fusion{}", k + 1);
  const std::vector<int> rows = lay.semantic_rows();
  Var s = ag::gather_rows(g, x, rows);
  Var q = ag::matmul(g, s, param(g, p + ".wq.w"));

  const int hd = config_.vlm_width / config_.vlm_heads;
  std::vector<ag::RopePos> qpos;
  for (int f = 0; f <= n; ++f) {
    for (int i = 0; i < P; ++i) {
      qpos.push_back(f < n ? ag::RopePos::grid(i / lay.grid_w, i % lay.grid_w) : ag::RopePos::none());
    }
  }
  std::vector<ag::RopePos> kpos;
  for (int f = 0; f < n; ++f) {
    for (int i = 0; i < P; ++i) kpos.push_back(ag::RopePos::grid(i / lay.grid_w, i % lay.grid_w));
  }
  for (int t = 0; t < kv.T; ++t) kpos.push_back(ag::RopePos::index(t));
  auto qplan = std::make_shared<const ag::RopePlan<T>>(ag::make_rope_plan<T>(qpos, hd, config_.rope_base));
  auto kplan = std::make_shared<const ag::RopePlan<T>>(ag::make_rope_plan<T>(kpos, hd, config_.rope_base));

  std::vector<ag::AttnBlock> blocks;
  for (int f = 0; f < n; ++f) blocks.push_back({f * P, (f + 1) * P, f * P, (f + 1) * P});
  if (kv.T > 0) blocks.push_back({n * P, (n + 1) * P, n * P, n * P + kv.T});

  Var a = ag::attention(g, ag::rope(g, q, qplan), ag::rope(g, kv.k[static_cast<size_t>(k)], kplan),
                        kv.v[static_cast<size_t>(k)], config_.vlm_heads, std::move(blocks));
  Var o = ag::linear(g, a, param(g, p + ".proj.w"), param(g, p + ".proj.b"));
  Var delta = ag::mul_row(g, o, param(g, p + ".gamma"));
  return ag::add_to_rows(g, x, rows, delta);
}

template <typename T>
Var Model<T>::camera_head(Graph& g, Var xn, const TokenLayout& lay) {
  Var cam = ag::gather_rows(g, xn, lay.camera_rows());
  std::vector<std::pair<int, int>> ranges;
  for (int f = 0; f < lay.frames; ++f) ranges.emplace_back(lay.semantic(f), lay.semantic(f) + lay.P);
  Var sem = ag::segment_mean(g, xn, std::move(ranges));
  Var h = ag::gelu(g, ag::linear(g, ag::concat_cols(g, {cam, sem}), param(g, "head.cam.l1.w"),
                                 param(g, "head.cam.l1.b")));
  Var raw = ag::linear(g, h, param(g, "head.cam.l2.w"), param(g, "head.cam.l2.b"));
  const Vec2 fov = config_.fov_default();
  return ag::pose_activation(g, raw, static_cast<T>(fov.x()), static_cast<T>(fov.y()));
}

namespace {

// Pixel-shuffle index map: (frames*gh*gw) x (s*s*c) -> (frames*gh*s*gw*s) x c.
std::shared_ptr<const std::vector<int>> shuffle_map(int frames, int gh, int gw, int s, int c) {
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(frames) * gh * gw * s * s * c);
  const int GH = gh * s, GW = gw * s;
  size_t o = 0;
  for (int f = 0; f < frames; ++f) {
    for (int Y = 0; Y < GH; ++Y) {
      for (int X = 0; X < GW; ++X) {
        const int in_row = f * gh * gw + (Y / s) * gw + (X / s);
        const int sub = (Y % s) * s + (X % s);
        for (int ch = 0; ch < c; ++ch) (*map)[o++] = in_row * s * s * c + sub * c + ch;
      }
    }
  }
  return map;
}

}  // namespace

template <typename T>
std::array<Var, 4> Model<T>::dense_heads(Graph& g, Var xn, const TokenLayout& lay) {
  Var cat = ag::concat_cols(g, {ag::gather_rows(g, xn, lay.vision_rows()), ag::gather_rows(g, xn, lay.semantic_rows())});
  const int F = lay.frames, gh = config_.grid_h(), gw = config_.grid_w();
  const int s1 = config_.patch / 2, c1 = config_.head_channels;
  const int pixels = config_.width * config_.height;
  auto decode = [&](const std::string& p, int cout) {
    Var h = ag::gelu(g, ag::linear(g, cat, param(g, p + ".l1.w"), param(g, p + ".l1.b")));
    h = ag::linear(g, h, param(g, p + ".l2.w"), param(g, p + ".l2.b"));
    h = ag::permute(g, h, F * gh * s1 * gw * s1, c1, shuffle_map(F, gh, gw, s1, c1));
    h = ag::gelu(g, h);
    h = ag::linear(g, h, param(g, p + ".l3.w"), param(g, p + ".l3.b"));
    return ag::permute(g, h, F * pixels, cout, shuffle_map(F, gh * s1, gw * s1, 2, cout));
  };
  Var geo = decode("head.geo", 4);
  Var sem = decode("head.sem", 2);
  return {ag::softplus(g, ag::slice_cols(g, geo, 0, 1)), ag::slice_cols(g, geo, 1, 4), ag::slice_cols(g, sem, 0, 1),
          ag::slice_cols(g, sem, 1, 2)};
}

template <typename T>
ForwardVars Model<T>::forward(Graph& g, const ModelInput& in, const ForwardOptions& opt) {
  check_input(in);
  const TokenLayout lay = layout(in.num_context());
  SemanticKV kv;
  if (opt.fusion) kv = extract_kv(g, in);
  Var x = assemble_tokens(g, in);
  for (int b = 1; b <= config_.depth; ++b) {
    x = alternating_block(g, x, lay, b, opt.global_attention);
    if (!opt.fusion) continue;
    for (int k = 0; k < config_.n_q(); ++k) {
      if (config_.fusion_blocks[static_cast<size_t>(k)] == b) x = semantic_fusion(g, x, lay, kv, k);
    }
  }
  ForwardVars out;
  out.tokens = x;
  Var xn = norm(g, x, "trunk.ln_f");
  out.poses = camera_head(g, xn, lay);
  const auto dense = dense_heads(g, xn, lay);
  out.depth = dense[0];
  out.points = dense[1];
  out.heat = dense[2];
  out.mask = dense[3];
  return out;
}

namespace {

template <typename T>
ModelOutput output_from(const ag::Graph<T>& g, const ForwardVars& v, int frames, int height, int width) {
  ModelOutput o;
  o.frames = frames;
  o.height = height;
  o.width = width;
  const auto& P = g.value(v.poses);
  for (Eigen::Index f = 0; f < P.rows(); ++f) {
    PoseEncoding e;
    for (int i = 0; i < 9; ++i) e[static_cast<size_t>(i)] = static_cast<double>(P(f, i));
    o.poses.push_back(e);
  }
  const size_t px = static_cast<size_t>(height) * width;
  auto copy1 = [&](Var var, std::vector<float>& dst) {
    const auto& m = g.value(var);
    dst.resize(m.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) dst[static_cast<size_t>(i)] = static_cast<float>(m.data()[i]);
  };
  copy1(v.depth, o.depth);
  copy1(v.heat, o.heatmap);
  copy1(v.mask, o.mask_logits);
  const auto& pts = g.value(v.points);
  o.points.resize(static_cast<size_t>(frames) * 3 * px);
  for (int f = 0; f < frames; ++f) {
    for (size_t i = 0; i < px; ++i) {
      for (int c = 0; c < 3; ++c) {
        o.points[(static_cast<size_t>(f) * 3 + c) * px + i] =
            static_cast<float>(pts(static_cast<Eigen::Index>(f * px + i), c));
      }
    }
  }
  return o;
}

}  // namespace

ModelOutput to_output(const ag::Graph<float>& g, const ForwardVars& v, int frames, int height, int width) {
  return output_from(g, v, frames, height, width);
}

template <typename T>
ModelOutput Model<T>::predict(const ModelInput& in, const ForwardOptions& opt) {
  Graph g(false);
  const ForwardVars v = forward(g, in, opt);
  return output_from(g, v, in.num_context() + 1, config_.height, config_.width);
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;

// ---- checkpoints --------------------------------------------------------------------

namespace {

constexpr char kCkMagic[4] = {'I', 'P', 'C', 'K'};

}  // namespace

std::string serialize_checkpoint(const Model<float>& model, const nlohmann::json& train_config) {
  nlohmann::json header;
  header["config"] = model.config();
  header["train"] = train_config;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : model.params().all()) {
    tensors.push_back({{"name", p->name}, {"dtype", "f32"}, {"shape", {p->value.rows(), p->value.cols()}}});
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();
  std::string out(kCkMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  const uint32_t hl = static_cast<uint32_t>(hs.size());
  out.append(reinterpret_cast<const char*>(&hl), 4);
  out += hs;
  for (const auto* p : model.params().all()) {
    out.append(reinterpret_cast<const char*>(p->value.data()), static_cast<size_t>(p->value.size()) * sizeof(float));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const nlohmann::json& train_config) {
  const std::string bytes = serialize_checkpoint(model, train_config);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  auto fail = [](const std::string& m) -> void { throw ConfigError("bad checkpoint: " + m); };
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kCkMagic, 4) != 0) fail("missing IPCK magic");
  if (static_cast<uint8_t>(bytes[4]) != kCheckpointVersion) fail("unsupported version");
  uint32_t hl = 0;
  std::memcpy(&hl, bytes.data() + 5, 4);
  if (bytes.size() < 9 + static_cast<size_t>(hl)) fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(9, hl));
  } catch (const nlohmann::json::exception& e) {
    fail(e.what());
  }
  ModelConfig cfg = header.at("config").get<ModelConfig>();
  const int rank = cfg.lora_rank;
  cfg.lora_rank = 0;
  Model<float> model(cfg, 0);
  if (rank > 0) model.attach_adapters(rank, 0);
  const auto& tensors = header.at("tensors");
  const auto params = model.params().all();
  if (tensors.size() != params.size()) fail("tensor count does not match config");
  size_t off = 9 + hl;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    auto* p = params[i];
    if (t.at("name") != p->name) fail("tensor order/name mismatch at " + p->name);
    if (t.at("dtype") != "f32") fail("unsupported dtype for " + p->name);
    const auto shape = t.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols()) {
      fail("shape mismatch for " + p->name);
    }
    const size_t n = static_cast<size_t>(p->value.size()) * sizeof(float);
    if (off + n > bytes.size()) fail("truncated payload");
    std::memcpy(p->value.data(), bytes.data() + off, n);
    off += n;
  }
  if (off != bytes.size()) fail("trailing bytes");
  return {std::move(model), header.value("train", nlohmann::json::object())};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(is), {}};
  return deserialize_checkpoint(bytes);
}

}  // namespace av
