#pragma once

// Semantic-fused multi-view pose transformer: a toy vision-language backbone
// whose intermediate keys/values feed cross-attention into a geometric trunk
// of alternating intra-frame and global attention, plus camera and dense heads.

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeview/autograd.hpp"
#include "activeview/geometry.hpp"
#include "activeview/microworld.hpp"

namespace av {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int C = 128;
  int depth = 6;
  int heads = 4;
  int patch = 8;
  int width = 64;
  int height = 64;
  int num_register = 4;
  std::vector<int> fusion_blocks{2, 4};  // 1-based trunk blocks followed by fusion
  std::vector<int> vlm_layers{2, 4};     // 1-based backbone layers providing K/V
  int vlm_depth = 4;
  int vlm_width = 128;
  int vlm_heads = 4;
  int vocab_size = 50;
  int max_frames = 8;  // context frames + target
  int max_tokens = 48;
  int mlp_ratio = 2;
  int head_channels = 16;
  double rope_base = 100.0;
  double fov_deg = 70.0;
  int lora_rank = 0;

  int grid_w() const { return width / patch; }
  int grid_h() const { return height / patch; }
  int P() const { return grid_w() * grid_h(); }
  int tokens_per_frame() const { return 2 * P() + 1 + num_register; }
  int n_q() const { return static_cast<int>(fusion_blocks.size()); }
  Vec2 fov_default() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Context images (frames[0] is the start frame) and the instruction.
struct ModelInput {
  int width = 0;
  int height = 0;
  std::vector<std::vector<float>> images;  // each H*W*3 in [0, 1]
  std::vector<int32_t> tokens;

  int num_context() const { return static_cast<int>(images.size()); }
};

ModelInput make_input(const TaskRecord& record);

/// Row layout of the trunk token matrix. Frame f occupies rows
/// [f*tpf, (f+1)*tpf) as [vision P | camera | registers R | semantic P];
/// frame `frames - 1` is the target (pad) frame.
struct TokenLayout {
  int frames = 0;
  int P = 0;
  int R = 0;
  int grid_w = 0;

  int tpf() const { return 2 * P + 1 + R; }
  int rows() const { return frames * tpf(); }
  int vision(int f) const { return f * tpf(); }
  int camera(int f) const { return f * tpf() + P; }
  int registers(int f) const { return f * tpf() + P + 1; }
  int semantic(int f) const { return f * tpf() + P + 1 + R; }
  std::vector<int> vision_rows() const;
  std::vector<int> camera_rows() const;
  std::vector<int> semantic_rows() const;
};

/// Keys/values of the selected backbone layers. Each matrix is L x vlm_width
/// with L = frames*P + T: rows [f*P, (f+1)*P) hold frame f's patches in
/// row-major grid order, the last T rows the instruction tokens. Viewed per
/// head this is the [1, H, L, D] tensor of the backbone.
struct SemanticKV {
  std::vector<ag::Var> k;
  std::vector<ag::Var> v;
  int frames = 0;
  int P = 0;
  int T = 0;

  int length() const { return frames * P + T; }
  /// Which frame a sequence position belongs to, or -1 for instruction tokens.
  int segment_frame(int pos) const { return pos < frames * P ? pos / P : -1; }
};

struct ForwardOptions {
  bool fusion = true;
  bool global_attention = true;
};

struct ForwardVars {
  ag::Var poses;   // F x 9 encodings
  ag::Var depth;   // F*H*W x 1, positive
  ag::Var points;  // F*H*W x 3
  ag::Var heat;    // F*H*W x 1 logits
  ag::Var mask;    // F*H*W x 1 logits
  ag::Var tokens;  // post-trunk tokens (before the final norm)
};

/// Plain-array model outputs for F = N + 1 frames.
struct ModelOutput {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<PoseEncoding> poses;
  std::vector<float> depth;        // F x H x W
  std::vector<float> points;       // F x 3 x H x W
  std::vector<float> heatmap;      // F x H x W logits
  std::vector<float> mask_logits;  // F x H x W

  CameraPose target_pose() const;
};

template <typename T>
class Model {
 public:
  using Graph = ag::Graph<T>;
  using Var = ag::Var;

  Model(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ag::ParamStore<T>& params() { return params_; }
  const ag::ParamStore<T>& params() const { return params_; }

  /// Adds rank-r residual adapters (A small random, B zero) to every backbone
  /// attention projection. Rank 0 is a no-op.
  void attach_adapters(int rank, uint64_t seed);
  int adapter_rank() const { return config_.lora_rank; }

  TokenLayout layout(int num_context) const;
  SemanticKV extract_kv(Graph& g, const ModelInput& in);
  Var assemble_tokens(Graph& g, const ModelInput& in);
  Var alternating_block(Graph& g, Var x, const TokenLayout& lay, int block, bool global = true);
  Var semantic_fusion(Graph& g, Var x, const TokenLayout& lay, const SemanticKV& kv, int k);
  /// Heads read the final-normed tokens.
  Var camera_head(Graph& g, Var xn, const TokenLayout& lay);
  std::array<Var, 4> dense_heads(Graph& g, Var xn, const TokenLayout& lay);

  ForwardVars forward(Graph& g, const ModelInput& in, const ForwardOptions& opt = {});
  ModelOutput predict(const ModelInput& in, const ForwardOptions& opt = {});

  template <typename U>
  Model<U> cast() const;

 private:
  void check_input(const ModelInput& in) const;
  Var param(Graph& g, const std::string& name) { return g.param(params_.at(name)); }
  Var norm(Graph& g, Var x, const std::string& prefix);
  Var mlp(Graph& g, Var x, const std::string& prefix);
  Var backbone_proj(Graph& g, Var h, const std::string& prefix);
  Var patch_rows(Graph& g, const ModelInput& in, int frame);
  std::shared_ptr<const ag::RopePlan<T>> trunk_rope(const TokenLayout& lay) const;

  ModelConfig config_;
  ag::ParamStore<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

ModelOutput to_output(const ag::Graph<float>& g, const ForwardVars& v, int frames, int height, int width);

// ---- checkpoints -----------------------------------------------------------

inline constexpr uint8_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model<float>& model, const nlohmann::json& train_config);
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const nlohmann::json& train_config);

struct LoadedCheckpoint {
  Model<float> model;
  nlohmann::json train_config;
};

/// Validates every tensor name and shape against the embedded config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace av
