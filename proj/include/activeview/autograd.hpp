#pragma once

// Tape-based reverse-mode differentiation over row-major matrices. Every op
// records a closure when any input requires a gradient; Graph::backward runs
// them in reverse creation order. Instantiated for float (training) and double
// (gradient checks).

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace av::ag {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
struct Param {
  std::string name;
  std::string group;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;
  bool decay = true;  // weight decay applies

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  size_t size() const { return static_cast<size_t>(value.size()); }
};

/// Named parameters with stable addresses, kept in creation order.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, const std::string& group, int rows, int cols, bool decay);
  Param<T>& at(const std::string& name);
  const Param<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Param<T>*> all();
  std::vector<const Param<T>*> all() const;
  std::vector<std::string> groups() const;
  size_t num_scalars(bool trainable_only) const;
  void zero_grad();
  void set_trainable(const std::function<bool(const Param<T>&)>& pred);

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Mat<T> value);
  Var param(Param<T>& p);

  const Mat<T>& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return v.valid() && nodes_[static_cast<size_t>(v.id)].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node; zero-allocated on first access.
  Mat<T>& grad(int id);
  Mat<T>& grad(Var v) { return grad(v.id); }
  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad.size() > 0; }

  /// Seeds d(scalar)/d(scalar) = 1 and propagates to every parameter leaf.
  void backward(Var scalar);

  // Op plumbing: creates a node, recording `bw` only when some input needs a gradient.
  Var push(Mat<T> value, std::initializer_list<Var> inputs, Backward bw);
  Var push(Mat<T> value, const std::vector<Var>& inputs, Backward bw);
  void accumulate(Var v, const Mat<T>& g);

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// ---- ops -------------------------------------------------------------------

template <typename T> Var matmul(Graph<T>& g, Var a, Var b);
/// x W + b (b optional).
template <typename T> Var linear(Graph<T>& g, Var x, Var w, Var b = {});
template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, T s);
/// a + broadcast row vector r (1 x cols).
template <typename T> Var add_row(Graph<T>& g, Var a, Var r);
/// a * broadcast row vector r, elementwise.
template <typename T> Var mul_row(Graph<T>& g, Var a, Var r);
template <typename T> Var layernorm(Graph<T>& g, Var x, Var gain, Var bias, T eps = T(1e-5));
template <typename T> Var gelu(Graph<T>& g, Var x);
template <typename T> Var softplus(Graph<T>& g, Var x);

template <typename T> Var concat_rows(Graph<T>& g, const std::vector<Var>& parts);
template <typename T> Var concat_cols(Graph<T>& g, const std::vector<Var>& parts);
template <typename T> Var slice_rows(Graph<T>& g, Var x, int begin, int end);
template <typename T> Var slice_cols(Graph<T>& g, Var x, int begin, int end);
/// Row gather; repeated indices accumulate in backward.
template <typename T> Var gather_rows(Graph<T>& g, Var x, std::vector<int> idx);
/// Copy of x with delta.row(i) added to row idx[i].
template <typename T> Var add_to_rows(Graph<T>& g, Var x, std::vector<int> idx, Var delta);
/// One output row per [begin, end) row range: the mean of those rows.
template <typename T> Var segment_mean(Graph<T>& g, Var x, std::vector<std::pair<int, int>> ranges);
/// out.flat[i] = x.flat[map[i]] with out of shape rows x cols; map must be a bijection.
template <typename T>
Var permute(Graph<T>& g, Var x, int rows, int cols, std::shared_ptr<const std::vector<int>> map);

/// Per-row rotary tables: cos/sin have shape rows x (head_dim / 2) and are
/// applied identically to every head; pair (2j, 2j+1) rotates by angle j.
template <typename T>
struct RopePlan {
  Mat<T> cos;
  Mat<T> sin;
  int head_dim = 0;
};

struct RopePos {
  enum class Kind { kNone, k2D, k1D };
  Kind kind = Kind::kNone;
  double a = 0.0;  // row (2D) or index (1D)
  double b = 0.0;  // column (2D)

  static RopePos none() { return {}; }
  static RopePos grid(double row, double col) { return {Kind::k2D, row, col}; }
  static RopePos index(double i) { return {Kind::k1D, i, 0.0}; }
};

/// 2D: the first half of the head dim rotates with the row, the second half
/// with the column. 1D: the full head dim rotates with the index.
/// Throws ShapeError if head_dim is not divisible by 4 (2D rows) or 2.
template <typename T>
RopePlan<T> make_rope_plan(const std::vector<RopePos>& rows, int head_dim, double base);

/// Rotates x (rows x heads*head_dim) per the plan.
template <typename T> Var rope(Graph<T>& g, Var x, std::shared_ptr<const RopePlan<T>> plan);

struct AttnBlock {
  int q0, q1;  // query rows [q0, q1)
  int k0, k1;  // key/value rows [k0, k1)
};

/// Multi-head softmax attention restricted to blocks. q: Lq x H*D, k/v: Lk x H*D.
/// Query rows not covered by any block produce zeros.
template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, int heads, std::vector<AttnBlock> blocks);

/// Raw (F x 9) camera head output to pose encodings:
/// q = normalize(raw[0:4] + (1,0,0,0)), t = raw[4:7], fov = fov0 * exp(0.1 raw[7:9]).
/// Row 0 is replaced by the exact identity encoding with fov0.
template <typename T> Var pose_activation(Graph<T>& g, Var raw, T fov0_x, T fov0_y);

enum class LossKind { kHuber, kL1, kBceLogits };

/// sum_ij w_ij * loss(pred_ij, target_ij); returns 1 x 1.
template <typename T>
Var elementwise_loss(Graph<T>& g, Var pred, Mat<T> target, Mat<T> weight, LossKind kind, T delta = T(0.1));

/// sum_i w_i * s_i over 1 x 1 inputs.
template <typename T> Var weighted_sum(Graph<T>& g, const std::vector<Var>& scalars, const std::vector<T>& w);

// Scalar helpers shared with test oracles.
template <typename T> T huber(T x, T delta);
template <typename T> T bce_logits(T logit, T target);
template <typename T> T gelu_scalar(T x);
template <typename T> T softplus_scalar(T x);

}  // namespace av::ag
