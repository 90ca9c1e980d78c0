#include "activeview/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace av::ag {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ShapeError(what);
}

}  // namespace

// ---- ParamStore -------------------------------------------------------------

template <typename T>
Param<T>& ParamStore<T>::add(const std::string& name, const std::string& group, int rows, int cols,
                             bool decay) {
  if (index_.count(name)) throw ShapeError("duplicate parameter " + name);
  auto p = std::make_unique<Param<T>>();
  p->name = name;
  p->group = group;
  p->value.setZero(rows, cols);
  p->grad.setZero(rows, cols);
  p->decay = decay;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Param<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter " + name);
  return *params_[it->second];
}

template <typename T>
const Param<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter " + name);
  return *params_[it->second];
}

template <typename T>
std::vector<Param<T>*> ParamStore<T>::all() {
  std::vector<Param<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Param<T>*> ParamStore<T>::all() const {
  std::vector<const Param<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<std::string> ParamStore<T>::groups() const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    if (std::find(out.begin(), out.end(), p->group) == out.end()) out.push_back(p->group);
  }
  return out;
}

template <typename T>
size_t ParamStore<T>::num_scalars(bool trainable_only) const {
  size_t n = 0;
  for (const auto& p : params_) {
    if (!trainable_only || p->trainable) n += p->size();
  }
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
void ParamStore<T>::set_trainable(const std::function<bool(const Param<T>&)>& pred) {
  for (auto& p : params_) p->trainable = pred(*p);
}

// ---- Graph ------------------------------------------------------------------

template <typename T>
Var Graph<T>::constant(Mat<T> value) {
  nodes_.push_back({std::move(value), {}, false, {}});
  return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::param(Param<T>& p) {
  const bool rg = grad_enabled_ && p.trainable;
  Backward bw;
  if (rg) {
    Param<T>* pp = &p;
    bw = [pp](Graph& g, int self) {
      if (pp->grad.size() == 0) pp->zero_grad();
      pp->grad += g.grad(self);
    };
  }
  nodes_.push_back({p.value, {}, rg, std::move(bw)});
  return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Mat<T>& Graph<T>::grad(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
Var Graph<T>::push(Mat<T> value, std::initializer_list<Var> inputs, Backward bw) {
  bool rg = false;
  for (Var v : inputs) rg = rg || requires_grad(v);
  rg = rg && grad_enabled_;
  nodes_.push_back({std::move(value), {}, rg, rg ? std::move(bw) : Backward{}});
  return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::push(Mat<T> value, const std::vector<Var>& inputs, Backward bw) {
  bool rg = false;
  for (Var v : inputs) rg = rg || requires_grad(v);
  rg = rg && grad_enabled_;
  nodes_.push_back({std::move(value), {}, rg, rg ? std::move(bw) : Backward{}});
  return {static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
void Graph<T>::accumulate(Var v, const Mat<T>& g) {
  if (!requires_grad(v)) return;
  grad(v) += g;
}

template <typename T>
void Graph<T>::backward(Var scalar) {
  require(value(scalar).size() == 1, "backward needs a 1x1 output");
  if (!requires_grad(scalar)) return;
  grad(scalar).setConstant(T(1));
  for (int id = scalar.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
    n.grad.resize(0, 0);
  }
}

// ---- elementwise and linear algebra ----------------------------------------

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  require(A.cols() == B.rows(), "matmul shape mismatch");
  Mat<T> C;
  C.noalias() = A * B;
  return g.push(std::move(C), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(a)) g.grad(a).noalias() += gy * g.value(b).transpose();
    if (g.requires_grad(b)) g.grad(b).noalias() += g.value(a).transpose() * gy;
  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  require(X.cols() == W.rows(), "linear shape mismatch");
  Mat<T> Y;
  Y.noalias() = X * W;
  if (b.valid()) {
    require(g.value(b).rows() == 1 && g.value(b).cols() == W.cols(), "linear bias shape");
    Y.rowwise() += g.value(b).row(0);
  }
  std::vector<Var> in{x, w};
  if (b.valid()) in.push_back(b);
  return g.push(std::move(Y), in, [x, w, b](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(x)) g.grad(x).noalias() += gy * g.value(w).transpose();
    if (g.requires_grad(w)) g.grad(w).noalias() += g.value(x).transpose() * gy;
    if (b.valid() && g.requires_grad(b)) g.grad(b) += gy.colwise().sum();
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  require(g.value(a).rows() == g.value(b).rows() && g.value(a).cols() == g.value(b).cols(), "add shape");
  Mat<T> y = g.value(a) + g.value(b);
  return g.push(std::move(y), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(a)) g.grad(a) += gy;
    if (g.requires_grad(b)) g.grad(b) += gy;
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  require(g.value(a).rows() == g.value(b).rows() && g.value(a).cols() == g.value(b).cols(), "mul shape");
  Mat<T> y = g.value(a).cwiseProduct(g.value(b));
  return g.push(std::move(y), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(a)) g.grad(a) += gy.cwiseProduct(g.value(b));
    if (g.requires_grad(b)) g.grad(b) += gy.cwiseProduct(g.value(a));
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T s) {
  Mat<T> y = g.value(a) * s;
  return g.push(std::move(y), {a}, [a, s](Graph<T>& g, int self) { g.grad(a) += g.grad(self) * s; });
}

template <typename T>
Var add_row(Graph<T>& g, Var a, Var r) {
  require(g.value(r).rows() == 1 && g.value(r).cols() == g.value(a).cols(), "add_row shape");
  Mat<T> y = g.value(a);
  y.rowwise() += g.value(r).row(0);
  return g.push(std::move(y), {a, r}, [a, r](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(a)) g.grad(a) += gy;
    if (g.requires_grad(r)) g.grad(r) += gy.colwise().sum();
  });
}

template <typename T>
Var mul_row(Graph<T>& g, Var a, Var r) {
  require(g.value(r).rows() == 1 && g.value(r).cols() == g.value(a).cols(), "mul_row shape");
  const auto& A = g.value(a);
  Mat<T> y = A.array().rowwise() * g.value(r).row(0).array();
  return g.push(std::move(y), {a, r}, [a, r](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(a)) g.grad(a).array() += gy.array().rowwise() * g.value(r).row(0).array();
    if (g.requires_grad(r)) g.grad(r) += gy.cwiseProduct(g.value(a)).colwise().sum();
  });
}

template <typename T>
Var layernorm(Graph<T>& g, Var x, Var gain, Var bias, T eps) {
  const auto& X = g.value(x);
  const int n = static_cast<int>(X.cols());
  require(g.value(gain).cols() == n && g.value(bias).cols() == n, "layernorm shape");
  auto xhat = std::make_shared<Mat<T>>(X.rows(), X.cols());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const T mu = X.row(i).mean();
    const T var = (X.row(i).array() - mu).square().mean();
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[static_cast<size_t>(i)] = rs;
    xhat->row(i) = (X.row(i).array() - mu) * rs;
  }
  Mat<T> y = xhat->array().rowwise() * g.value(gain).row(0).array();
  y.rowwise() += g.value(bias).row(0);
  return g.push(std::move(y), {x, gain, bias}, [x, gain, bias, xhat, rstd, n](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(gain)) g.grad(gain) += gy.cwiseProduct(*xhat).colwise().sum();
    if (g.requires_grad(bias)) g.grad(bias) += gy.colwise().sum();
    if (g.requires_grad(x)) {
      auto& gx = g.grad(x);
      const auto gr = g.value(gain).row(0).array();
      for (Eigen::Index i = 0; i < gy.rows(); ++i) {
        const Eigen::Array<T, 1, Eigen::Dynamic> dxh = gy.row(i).array() * gr;
        const T m1 = dxh.sum() / T(n);
        const T m2 = (dxh * xhat->row(i).array()).sum() / T(n);
        gx.row(i).array() += (*rstd)[static_cast<size_t>(i)] * (dxh - m1 - xhat->row(i).array() * m2);
      }
    }
  });
}

template <typename T>
T gelu_scalar(T x) {
  const T k = T(0.7978845608028654);
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <typename T>
Var gelu(Graph<T>& g, Var x) {
  Mat<T> y = g.value(x).unaryExpr([](T v) { return gelu_scalar(v); });
  return g.push(std::move(y), {x}, [x](Graph<T>& g, int self) {
    const T k = T(0.7978845608028654);
    const auto& gy = g.grad(self);
    g.grad(x).array() += gy.array() * g.value(x).array().unaryExpr([k](T v) {
      const T t = std::tanh(k * (v + T(0.044715) * v * v * v));
      return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3 * 0.044715) * v * v);
    });
  });
}

template <typename T>
T softplus_scalar(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
Var softplus(Graph<T>& g, Var x) {
  Mat<T> y = g.value(x).unaryExpr([](T v) { return softplus_scalar(v); });
  return g.push(std::move(y), {x}, [x](Graph<T>& g, int self) {
    g.grad(x).array() += g.grad(self).array() *
                         g.value(x).array().unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  });
}

// ---- structural ---------------------------------------------------------------

template <typename T>
Var concat_rows(Graph<T>& g, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const Eigen::Index cols = g.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    require(g.value(p).cols() == cols, "concat_rows column mismatch");
    rows += g.value(p).rows();
  }
  Mat<T> y(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    y.middleRows(r, g.value(p).rows()) = g.value(p);
    r += g.value(p).rows();
  }
  return g.push(std::move(y), parts, [parts](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    Eigen::Index r = 0;
    for (Var p : parts) {
      const Eigen::Index n = g.value(p).rows();
      if (g.requires_grad(p)) g.grad(p) += gy.middleRows(r, n);
      r += n;
    }
  });
}

template <typename T>
Var concat_cols(Graph<T>& g, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const Eigen::Index rows = g.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    require(g.value(p).rows() == rows, "concat_cols row mismatch");
    cols += g.value(p).cols();
  }
  Mat<T> y(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    y.middleCols(c, g.value(p).cols()) = g.value(p);
    c += g.value(p).cols();
  }
  return g.push(std::move(y), parts, [parts](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    Eigen::Index c = 0;
    for (Var p : parts) {
      const Eigen::Index n = g.value(p).cols();
      if (g.requires_grad(p)) g.grad(p) += gy.middleCols(c, n);
      c += n;
    }
  });
}

template <typename T>
Var slice_rows(Graph<T>& g, Var x, int begin, int end) {
  require(begin >= 0 && begin <= end && end <= g.value(x).rows(), "slice_rows range");
  Mat<T> y = g.value(x).middleRows(begin, end - begin);
  return g.push(std::move(y), {x}, [x, begin, end](Graph<T>& g, int self) {
    g.grad(x).middleRows(begin, end - begin) += g.grad(self);
  });
}

template <typename T>
Var slice_cols(Graph<T>& g, Var x, int begin, int end) {
  require(begin >= 0 && begin <= end && end <= g.value(x).cols(), "slice_cols range");
  Mat<T> y = g.value(x).middleCols(begin, end - begin);
  return g.push(std::move(y), {x}, [x, begin, end](Graph<T>& g, int self) {
    g.grad(x).middleCols(begin, end - begin) += g.grad(self);
  });
}

template <typename T>
Var gather_rows(Graph<T>& g, Var x, std::vector<int> idx) {
  const auto& X = g.value(x);
  Mat<T> y(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < X.rows(), "gather_rows index");
    y.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  }
  return g.push(std::move(y), {x}, [x, idx = std::move(idx)](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(x);
    for (size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += gy.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var add_to_rows(Graph<T>& g, Var x, std::vector<int> idx, Var delta) {
  const auto& D = g.value(delta);
  require(D.rows() == static_cast<Eigen::Index>(idx.size()) && D.cols() == g.value(x).cols(), "add_to_rows shape");
  Mat<T> y = g.value(x);
  for (size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < y.rows(), "add_to_rows index");
    y.row(idx[i]) += D.row(static_cast<Eigen::Index>(i));
  }
  return g.push(std::move(y), {x, delta}, [x, delta, idx = std::move(idx)](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(x)) g.grad(x) += gy;
    if (g.requires_grad(delta)) {
      auto& gd = g.grad(delta);
      for (size_t i = 0; i < idx.size(); ++i) gd.row(static_cast<Eigen::Index>(i)) += gy.row(idx[i]);
    }
  });
}

template <typename T>
Var segment_mean(Graph<T>& g, Var x, std::vector<std::pair<int, int>> ranges) {
  const auto& X = g.value(x);
  Mat<T> y(static_cast<Eigen::Index>(ranges.size()), X.cols());
  for (size_t i = 0; i < ranges.size(); ++i) {
    const auto [b, e] = ranges[i];
    require(b >= 0 && b < e && e <= X.rows(), "segment_mean range");
    y.row(static_cast<Eigen::Index>(i)) = X.middleRows(b, e - b).colwise().mean();
  }
  return g.push(std::move(y), {x}, [x, ranges = std::move(ranges)](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(x);
    for (size_t i = 0; i < ranges.size(); ++i) {
      const auto [b, e] = ranges[i];
      const auto row = gy.row(static_cast<Eigen::Index>(i)) / T(e - b);
      for (int r = b; r < e; ++r) gx.row(r) += row;
    }
  });
}

template <typename T>
Var permute(Graph<T>& g, Var x, int rows, int cols, std::shared_ptr<const std::vector<int>> map) {
  const auto& X = g.value(x);
  require(static_cast<Eigen::Index>(map->size()) == X.size() && static_cast<Eigen::Index>(rows) * cols == X.size(),
          "permute size");
  Mat<T> y(rows, cols);
  const T* src = X.data();
  T* dst = y.data();
  for (size_t i = 0; i < map->size(); ++i) dst[i] = src[(*map)[i]];
  return g.push(std::move(y), {x}, [x, map](Graph<T>& g, int self) {
    const T* gy = g.grad(self).data();
    T* gx = g.grad(x).data();
    for (size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += gy[i];
  });
}

// ---- rotary embeddings ---------------------------------------------------------

template <typename T>
RopePlan<T> make_rope_plan(const std::vector<RopePos>& rows, int head_dim, double base) {
  require(head_dim > 0 && head_dim % 2 == 0, "rope head_dim must be even");
  const int pairs = head_dim / 2;
  RopePlan<T> plan;
  plan.head_dim = head_dim;
  plan.cos.setOnes(static_cast<Eigen::Index>(rows.size()), pairs);
  plan.sin.setZero(static_cast<Eigen::Index>(rows.size()), pairs);
  for (size_t r = 0; r < rows.size(); ++r) {
    const RopePos& p = rows[r];
    const auto ri = static_cast<Eigen::Index>(r);
    if (p.kind == RopePos::Kind::k2D) {
      require(head_dim % 4 == 0, "2D rope needs head_dim divisible by 4");
      const int per_axis = pairs / 2;
      for (int j = 0; j < per_axis; ++j) {
        const double theta = std::pow(base, -static_cast<double>(j) / per_axis);
        plan.cos(ri, j) = static_cast<T>(std::cos(p.a * theta));
        plan.sin(ri, j) = static_cast<T>(std::sin(p.a * theta));
        plan.cos(ri, per_axis + j) = static_cast<T>(std::cos(p.b * theta));
        plan.sin(ri, per_axis + j) = static_cast<T>(std::sin(p.b * theta));
      }
    } else if (p.kind == RopePos::Kind::k1D) {
      for (int j = 0; j < pairs; ++j) {
        const double theta = std::pow(base, -static_cast<double>(j) / pairs);
        plan.cos(ri, j) = static_cast<T>(std::cos(p.a * theta));
        plan.sin(ri, j) = static_cast<T>(std::sin(p.a * theta));
      }
    }
  }
  return plan;
}

template <typename T>
Var rope(Graph<T>& g, Var x, std::shared_ptr<const RopePlan<T>> plan) {
  const auto& X = g.value(x);
  const int d = plan->head_dim;
  require(X.rows() == plan->cos.rows() && X.cols() % d == 0, "rope shape");
  const int heads = static_cast<int>(X.cols()) / d;
  const int pairs = d / 2;
  Mat<T> y(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    for (int h = 0; h < heads; ++h) {
      for (int j = 0; j < pairs; ++j) {
        const T c = plan->cos(r, j), s = plan->sin(r, j);
        const Eigen::Index i0 = h * d + 2 * j;
        const T x0 = X(r, i0), x1 = X(r, i0 + 1);
        y(r, i0) = x0 * c - x1 * s;
        y(r, i0 + 1) = x0 * s + x1 * c;
      }
    }
  }
  return g.push(std::move(y), {x}, [x, plan, heads, pairs, d](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    auto& gx = g.grad(x);
    for (Eigen::Index r = 0; r < gy.rows(); ++r) {
      for (int h = 0; h < heads; ++h) {
        for (int j = 0; j < pairs; ++j) {
          const T c = plan->cos(r, j), s = plan->sin(r, j);
          const Eigen::Index i0 = h * d + 2 * j;
          const T g0 = gy(r, i0), g1 = gy(r, i0 + 1);
          gx(r, i0) += g0 * c + g1 * s;
          gx(r, i0 + 1) += -g0 * s + g1 * c;
        }
      }
    }
  });
}

// ---- attention ---------------------------------------------------------------------

template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, int heads, std::vector<AttnBlock> blocks) {
  const auto& Q = g.value(q);
  const auto& K = g.value(k);
  const auto& V = g.value(v);
  require(Q.cols() == K.cols() && K.cols() == V.cols() && K.rows() == V.rows(), "attention shape");
  require(heads > 0 && Q.cols() % heads == 0, "attention heads");
  const int d = static_cast<int>(Q.cols()) / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(d));
  for (const auto& b : blocks) {
    require(b.q0 >= 0 && b.q0 <= b.q1 && b.q1 <= Q.rows() && b.k0 >= 0 && b.k0 < b.k1 && b.k1 <= K.rows(),
            "attention block range");
  }
  Mat<T> out = Mat<T>::Zero(Q.rows(), Q.cols());
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  const bool keep = g.grad_enabled() && (g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v));
  for (const auto& b : blocks) {
    const int nq = b.q1 - b.q0, nk = b.k1 - b.k0;
    if (nq == 0) continue;
    for (int h = 0; h < heads; ++h) {
      Mat<T> s;
      s.noalias() = Q.block(b.q0, h * d, nq, d) * K.block(b.k0, h * d, nk, d).transpose();
      s *= sc;
      for (int i = 0; i < nq; ++i) {
        auto row = s.row(i);
        const T m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
      }
      out.block(b.q0, h * d, nq, d).noalias() = s * V.block(b.k0, h * d, nk, d);
      if (keep) probs->push_back(std::move(s));
    }
  }
  return g.push(std::move(out), {q, k, v}, [q, k, v, heads, d, sc, probs, blocks = std::move(blocks)](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    const auto& Q = g.value(q);
    const auto& K = g.value(k);
    const auto& V = g.value(v);
    Mat<T>* gq = g.requires_grad(q) ? &g.grad(q) : nullptr;
    Mat<T>* gk = g.requires_grad(k) ? &g.grad(k) : nullptr;
    Mat<T>* gv = g.requires_grad(v) ? &g.grad(v) : nullptr;
    size_t pi = 0;
    for (const auto& b : blocks) {
      const int nq = b.q1 - b.q0, nk = b.k1 - b.k0;
      if (nq == 0) continue;
      for (int h = 0; h < heads; ++h) {
        const Mat<T>& p = (*probs)[pi++];
        const auto go = gy.block(b.q0, h * d, nq, d);
        if (gv) gv->block(b.k0, h * d, nk, d).noalias() += p.transpose() * go;
        if (!gq && !gk) continue;
        Mat<T> dp;
        dp.noalias() = go * V.block(b.k0, h * d, nk, d).transpose();
        for (int i = 0; i < nq; ++i) {
          const T dot = dp.row(i).dot(p.row(i));
          dp.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
        }
        dp *= sc;
        if (gq) gq->block(b.q0, h * d, nq, d).noalias() += dp * K.block(b.k0, h * d, nk, d);
        if (gk) gk->block(b.k0, h * d, nk, d).noalias() += dp.transpose() * Q.block(b.q0, h * d, nq, d);
      }
    }
  });
}

// ---- heads and losses -------------------------------------------------------------------

template <typename T>
Var pose_activation(Graph<T>& g, Var raw, T fov0_x, T fov0_y) {
  const auto& R = g.value(raw);
  require(R.cols() == 9 && R.rows() >= 1, "pose_activation expects F x 9");
  Mat<T> y(R.rows(), 9);
  auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(R.rows()), T(1));
  y.row(0) << T(1), T(0), T(0), T(0), T(0), T(0), T(0), fov0_x, fov0_y;
  for (Eigen::Index f = 1; f < R.rows(); ++f) {
    Eigen::Matrix<T, 4, 1> u(R(f, 0) + T(1), R(f, 1), R(f, 2), R(f, 3));
    const T n = std::max(u.norm(), T(1e-12));
    (*norms)[static_cast<size_t>(f)] = n;
    for (int i = 0; i < 4; ++i) y(f, i) = u[i] / n;
    for (int i = 4; i < 7; ++i) y(f, i) = R(f, i);
    y(f, 7) = fov0_x * std::exp(T(0.1) * R(f, 7));
    y(f, 8) = fov0_y * std::exp(T(0.1) * R(f, 8));
  }
  return g.push(std::move(y), {raw}, [raw, norms](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    const auto& Y = g.value(Var{self});
    auto& gr = g.grad(raw);
    for (Eigen::Index f = 1; f < gy.rows(); ++f) {
      T dot = 0;
      for (int i = 0; i < 4; ++i) dot += Y(f, i) * gy(f, i);
      const T n = (*norms)[static_cast<size_t>(f)];
      for (int i = 0; i < 4; ++i) gr(f, i) += (gy(f, i) - Y(f, i) * dot) / n;
      for (int i = 4; i < 7; ++i) gr(f, i) += gy(f, i);
      for (int i = 7; i < 9; ++i) gr(f, i) += gy(f, i) * T(0.1) * Y(f, i);
    }
  });
}

template <typename T>
T huber(T x, T delta) {
  const T a = std::abs(x);
  return a <= delta ? T(0.5) * x * x : delta * (a - T(0.5) * delta);
}

template <typename T>
T bce_logits(T logit, T target) {
  return std::max(logit, T(0)) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

template <typename T>
Var elementwise_loss(Graph<T>& g, Var pred, Mat<T> target, Mat<T> weight, LossKind kind, T delta) {
  const auto& P = g.value(pred);
  require(P.rows() == target.rows() && P.cols() == target.cols() && P.rows() == weight.rows() &&
              P.cols() == weight.cols(),
          "elementwise_loss shape");
  T total = 0;
  for (Eigen::Index i = 0; i < P.size(); ++i) {
    const T w = weight.data()[i];
    if (w == T(0)) continue;
    const T p = P.data()[i], t = target.data()[i];
    T l = 0;
    switch (kind) {
      case LossKind::kHuber: l = huber(p - t, delta); break;
      case LossKind::kL1: l = std::abs(p - t); break;
      case LossKind::kBceLogits: l = bce_logits(p, t); break;
    }
    total += w * l;
  }
  Mat<T> y(1, 1);
  y(0, 0) = total;
  auto tg = std::make_shared<Mat<T>>(std::move(target));
  auto wt = std::make_shared<Mat<T>>(std::move(weight));
  return g.push(std::move(y), {pred}, [pred, tg, wt, kind, delta](Graph<T>& g, int self) {
    const T gy = g.grad(self)(0, 0);
    const auto& P = g.value(pred);
    auto& gp = g.grad(pred);
    for (Eigen::Index i = 0; i < P.size(); ++i) {
      const T w = wt->data()[i];
      if (w == T(0)) continue;
      const T p = P.data()[i], t = tg->data()[i];
      T d = 0;
      switch (kind) {
        case LossKind::kHuber: d = std::clamp(p - t, -delta, delta); break;
        case LossKind::kL1: d = p > t ? T(1) : (p < t ? T(-1) : T(0)); break;
        case LossKind::kBceLogits: d = T(1) / (T(1) + std::exp(-p)) - t; break;
      }
      gp.data()[i] += gy * w * d;
    }
  });
}

template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& scalars, const std::vector<T>& w) {
  require(scalars.size() == w.size(), "weighted_sum sizes");
  Mat<T> y = Mat<T>::Zero(1, 1);
  for (size_t i = 0; i < scalars.size(); ++i) {
    require(g.value(scalars[i]).size() == 1, "weighted_sum expects scalars");
    y(0, 0) += w[i] * g.value(scalars[i])(0, 0);
  }
  return g.push(std::move(y), scalars, [scalars, w](Graph<T>& g, int self) {
    const T gy = g.grad(self)(0, 0);
    for (size_t i = 0; i < scalars.size(); ++i) {
      if (g.requires_grad(scalars[i])) g.grad(scalars[i])(0, 0) += gy * w[i];
    }
  });
}

#define AV_INSTANTIATE(T)                                                                        \
  template struct Param<T>;                                                                      \
  template class ParamStore<T>;                                                                  \
  template class Graph<T>;                                                                       \
  template Var matmul<T>(Graph<T>&, Var, Var);                                                   \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                              \
  template Var add<T>(Graph<T>&, Var, Var);                                                      \
  template Var mul<T>(Graph<T>&, Var, Var);                                                      \
  template Var scale<T>(Graph<T>&, Var, T);                                                      \
  template Var add_row<T>(Graph<T>&, Var, Var);                                                  \
  template Var mul_row<T>(Graph<T>&, Var, Var);                                                  \
  template Var layernorm<T>(Graph<T>&, Var, Var, Var, T);                                        \
  template Var gelu<T>(Graph<T>&, Var);                                                          \
  template Var softplus<T>(Graph<T>&, Var);                                                      \
  template Var concat_rows<T>(Graph<T>&, const std::vector<Var>&);                               \
  template Var concat_cols<T>(Graph<T>&, const std::vector<Var>&);                               \
  template Var slice_rows<T>(Graph<T>&, Var, int, int);                                          \
  template Var slice_cols<T>(Graph<T>&, Var, int, int);                                          \
  template Var gather_rows<T>(Graph<T>&, Var, std::vector<int>);                                 \
  template Var add_to_rows<T>(Graph<T>&, Var, std::vector<int>, Var);                            \
  template Var segment_mean<T>(Graph<T>&, Var, std::vector<std::pair<int, int>>);                \
  template Var permute<T>(Graph<T>&, Var, int, int, std::shared_ptr<const std::vector<int>>);    \
  template RopePlan<T> make_rope_plan<T>(const std::vector<RopePos>&, int, double);              \
  template Var rope<T>(Graph<T>&, Var, std::shared_ptr<const RopePlan<T>>);                      \
  template Var attention<T>(Graph<T>&, Var, Var, Var, int, std::vector<AttnBlock>);              \
  template Var pose_activation<T>(Graph<T>&, Var, T, T);                                         \
  template Var elementwise_loss<T>(Graph<T>&, Var, Mat<T>, Mat<T>, LossKind, T);                 \
  template Var weighted_sum<T>(Graph<T>&, const std::vector<Var>&, const std::vector<T>&);       \
  template T huber<T>(T, T);                                                                     \
  template T bce_logits<T>(T, T);                                                                \
  template T gelu_scalar<T>(T);                                                                  \
  template T softplus_scalar<T>(T);

AV_INSTANTIATE(float)
AV_INSTANTIATE(double)

#undef AV_INSTANTIATE

}  // namespace av::ag
