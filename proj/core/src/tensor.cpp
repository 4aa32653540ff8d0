#include "g2/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace g2::nn {

namespace {

bool any_needs_grad(const std::vector<Ten>& parents) {
  for (const auto& p : parents)
    if (p->needs_grad) return true;
  return false;
}

void check_same_shape(const Ten& a, const Ten& b, const char* op) {
  if (a->shape != b->shape)
    fail_param(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
               " vs " + shape_str(b->shape));
}

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

}  // namespace

Ten op_node(Shape shape, std::vector<float> val, std::vector<Ten> parents,
            std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->parents = std::move(parents);
  n->needs_grad = any_needs_grad(n->parents);
  if (n->needs_grad) n->back = std::move(back);
  return n;
}

Ten make_node(Shape shape, std::vector<float> val) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  return n;
}

Ten constant(Shape shape, std::vector<float> val) {
  if (std::int64_t(val.size()) != numel(shape))
    fail_param("constant: value size does not match shape " + shape_str(shape));
  return make_node(std::move(shape), std::move(val));
}

Ten constant_like(const Ten& t, float fill) {
  return make_node(t->shape, std::vector<float>(t->val.size(), fill));
}

Ten scalar(float v) { return make_node({1}, {v}); }

Ten param(Shape shape, std::vector<float> init) {
  auto n = constant(std::move(shape), std::move(init));
  n->trainable = true;
  n->needs_grad = true;
  return n;
}

Ten param_zeros(Shape shape) {
  auto n = param(shape, std::vector<float>(numel(shape), 0.0f));
  return n;
}

Ten param_fill(Shape shape, float fill) {
  return param(shape, std::vector<float>(numel(shape), fill));
}

std::vector<float> randn_vec(Rng& rng, std::int64_t n, float stddev) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.gaussian() * stddev);
  return v;
}

Ten param_randn(Rng& rng, Shape shape, float stddev) {
  auto init = randn_vec(rng, numel(shape), stddev);
  return param(std::move(shape), std::move(init));
}

void set_trainable(const Ten& t, bool trainable) {
  t->trainable = trainable;
  t->needs_grad = trainable;
  if (!trainable) t->grad.clear();
}

Ten stop_grad(const Ten& t) { return make_node(t->shape, t->val); }

void backward(const Ten& root) {
  if (root->size() != 1) fail_param("backward: root must be scalar");
  if (!root->needs_grad) return;

  // Post-order DFS; replaying it in reverse visits every node before its
  // parents. Visited set is pointer-keyed but only used for membership,
  // so traversal order (and therefore accumulation order) is exactly the
  // graph construction order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->back) n->back(*n);
  }
}

// ---------------- elementwise ----------------

namespace {

template <typename F, typename DF>
Ten unary_op(const Ten& a, F f, DF df, const char* /*name*/) {
  std::vector<float> out(a->val.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a->val[i]);
  Ten pa = a;
  return op_node(a->shape, std::move(out), {a}, [pa, df](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n.val.size(); ++i)
      pa->grad[i] += n.grad[i] * df(pa->val[i], n.val[i]);
  });
}

}  // namespace

Ten add(const Ten& a, const Ten& b) {
  check_same_shape(a, b, "add");
  std::vector<float> out(a->val.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] + b->val[i];
  Ten pa = a, pb = b;
  return op_node(a->shape, std::move(out), {a, b}, [pa, pb](Node& n) {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
    }
  });
}

Ten sub(const Ten& a, const Ten& b) {
  check_same_shape(a, b, "sub");
  std::vector<float> out(a->val.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] - b->val[i];
  Ten pa = a, pb = b;
  return op_node(a->shape, std::move(out), {a, b}, [pa, pb](Node& n) {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
}

Ten mul(const Ten& a, const Ten& b) {
  check_same_shape(a, b, "mul");
  std::vector<float> out(a->val.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->val[i] * b->val[i];
  Ten pa = a, pb = b;
  return op_node(a->shape, std::move(out), {a, b}, [pa, pb](Node& n) {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        pa->grad[i] += n.grad[i] * pb->val[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        pb->grad[i] += n.grad[i] * pa->val[i];
    }
  });
}

Ten add_scalar(const Ten& a, float c) {
  return unary_op(a, [c](float x) { return x + c; },
                  [](float, float) { return 1.0f; }, "add_scalar");
}

Ten mul_scalar(const Ten& a, float c) {
  return unary_op(a, [c](float x) { return x * c; },
                  [c](float, float) { return c; }, "mul_scalar");
}

Ten neg(const Ten& a) { return mul_scalar(a, -1.0f); }

Ten square(const Ten& a) {
  return unary_op(a, [](float x) { return x * x; },
                  [](float x, float) { return 2.0f * x; }, "square");
}

Ten abs_(const Ten& a) {
  return unary_op(a, [](float x) { return std::fabs(x); },
                  [](float x, float) { return x > 0 ? 1.0f : (x < 0 ? -1.0f : 0.0f); },
                  "abs");
}

Ten sqrt_(const Ten& a) {
  return unary_op(a, [](float x) { return std::sqrt(x); },
                  [](float, float y) { return 0.5f / y; }, "sqrt");
}

Ten rsqrt_(const Ten& a) {
  return unary_op(a, [](float x) { return 1.0f / std::sqrt(x); },
                  [](float x, float y) { return -0.5f * y / x; }, "rsqrt");
}

Ten exp_(const Ten& a) {
  return unary_op(a, [](float x) { return std::exp(x); },
                  [](float, float y) { return y; }, "exp");
}

Ten log_(const Ten& a) {
  return unary_op(a, [](float x) { return std::log(x); },
                  [](float x, float) { return 1.0f / x; }, "log");
}

Ten sigmoid(const Ten& a) {
  return unary_op(a,
                  [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
                  [](float, float y) { return y * (1.0f - y); }, "sigmoid");
}

Ten tanh_(const Ten& a) {
  return unary_op(a, [](float x) { return std::tanh(x); },
                  [](float, float y) { return 1.0f - y * y; }, "tanh");
}

Ten silu(const Ten& a) {
  return unary_op(a,
                  [](float x) { return x / (1.0f + std::exp(-x)); },
                  [](float x, float) {
                    float s = 1.0f / (1.0f + std::exp(-x));
                    return s * (1.0f + x * (1.0f - s));
                  },
                  "silu");
}

Ten softplus(const Ten& a) {
  return unary_op(a,
                  [](float x) {
                    // log(1+e^x) = max(x,0) + log1p(e^{-|x|})
                    return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x)));
                  },
                  [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); },
                  "softplus");
}

Ten relu(const Ten& a) {
  return unary_op(a, [](float x) { return x > 0 ? x : 0.0f; },
                  [](float x, float) { return x > 0 ? 1.0f : 0.0f; }, "relu");
}

// ---------------- shape / structure ----------------

Ten reshape(const Ten& a, Shape s) {
  if (numel(s) != a->size())
    fail_param("reshape: element count mismatch " + shape_str(a->shape) +
               " -> " + shape_str(s));
  Ten pa = a;
  return op_node(std::move(s), a->val, {a}, [pa](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  });
}

Ten concat_axis1(const std::vector<Ten>& parts) {
  require(!parts.empty(), "concat_axis1: empty input");
  const Shape& s0 = parts[0]->shape;
  require(s0.size() >= 2, "concat_axis1: rank must be >= 2");
  int n_rows = s0[0];
  std::int64_t inner = 1;
  for (size_t d = 2; d < s0.size(); ++d) inner *= s0[d];
  int total_c = 0;
  for (const auto& p : parts) {
    require(p->shape.size() == s0.size() && p->shape[0] == n_rows,
            "concat_axis1: leading dims mismatch");
    std::int64_t pi = 1;
    for (size_t d = 2; d < p->shape.size(); ++d) pi *= p->shape[d];
    require(pi == inner, "concat_axis1: trailing dims mismatch");
    total_c += p->shape[1];
  }
  Shape out_shape = s0;
  out_shape[1] = total_c;
  std::vector<float> out(numel(out_shape));
  std::int64_t out_row = total_c * inner;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::int64_t pc = p->shape[1] * inner;
    for (int r = 0; r < n_rows; ++r)
      std::copy_n(p->val.data() + r * pc, pc, out.data() + r * out_row + off);
    off += pc;
  }
  std::vector<Ten> ps = parts;
  return op_node(std::move(out_shape), std::move(out), parts,
                 [ps, n_rows, inner, out_row](Node& n) {
                   std::int64_t off = 0;
                   for (const auto& p : ps) {
                     std::int64_t pc = p->shape[1] * inner;
                     if (p->needs_grad) {
                       p->ensure_grad();
                       for (int r = 0; r < n_rows; ++r) {
                         const float* g = n.grad.data() + r * out_row + off;
                         float* pg = p->grad.data() + r * pc;
                         for (std::int64_t i = 0; i < pc; ++i) pg[i] += g[i];
                       }
                     }
                     off += pc;
                   }
                 });
}

Ten slice_cols(const Ten& a, int c0, int c1) {
  require(a->shape.size() == 2, "slice_cols: rank-2 input required");
  int n = a->shape[0], m = a->shape[1];
  require(0 <= c0 && c0 < c1 && c1 <= m, "slice_cols: bad range");
  int w = c1 - c0;
  std::vector<float> out(std::size_t(n) * w);
  for (int r = 0; r < n; ++r)
    std::copy_n(a->val.data() + std::int64_t(r) * m + c0, w,
                out.data() + std::int64_t(r) * w);
  Ten pa = a;
  return op_node({n, w}, std::move(out), {a}, [pa, c0, w, m](Node& nd) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    int n = nd.shape[0];
    for (int r = 0; r < n; ++r) {
      const float* g = nd.grad.data() + std::int64_t(r) * w;
      float* pg = pa->grad.data() + std::int64_t(r) * m + c0;
      for (int i = 0; i < w; ++i) pg[i] += g[i];
    }
  });
}

// ---------------- broadcasting ----------------

Ten add_bias_chan(const Ten& x, const Ten& b) {
  require(x->shape.size() == 4, "add_bias_chan: x must be [N,C,H,W]");
  int N = x->shape[0], C = x->shape[1];
  std::int64_t hw = std::int64_t(x->shape[2]) * x->shape[3];
  require(b->shape.size() == 1 && b->shape[0] == C, "add_bias_chan: bias dim");
  std::vector<float> out(x->val.size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* xi = x->val.data() + (std::int64_t(n) * C + c) * hw;
      float* oi = out.data() + (std::int64_t(n) * C + c) * hw;
      float bc = b->val[c];
      for (std::int64_t i = 0; i < hw; ++i) oi[i] = xi[i] + bc;
    }
  Ten px = x, pb = b;
  return op_node(x->shape, std::move(out), {x, b}, [px, pb, N, C, hw](Node& n) {
    if (px->needs_grad) {
      px->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
          const float* g = n.grad.data() + (std::int64_t(s) * C + c) * hw;
          double acc = 0;
          for (std::int64_t i = 0; i < hw; ++i) acc += g[i];
          pb->grad[c] += float(acc);
        }
    }
  });
}

Ten add_bias_cols(const Ten& x, const Ten& b) {
  require(x->shape.size() == 2, "add_bias_cols: x must be [N,M]");
  int N = x->shape[0], M = x->shape[1];
  require(b->shape.size() == 1 && b->shape[0] == M, "add_bias_cols: bias dim");
  std::vector<float> out(x->val.size());
  for (int r = 0; r < N; ++r)
    for (int c = 0; c < M; ++c)
      out[std::int64_t(r) * M + c] = x->val[std::int64_t(r) * M + c] + b->val[c];
  Ten px = x, pb = b;
  return op_node(x->shape, std::move(out), {x, b}, [px, pb, N, M](Node& n) {
    if (px->needs_grad) {
      px->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (int c = 0; c < M; ++c) {
        double acc = 0;
        for (int r = 0; r < N; ++r) acc += n.grad[std::int64_t(r) * M + c];
        pb->grad[c] += float(acc);
      }
    }
  });
}

Ten chan_scale(const Ten& x, const Ten& s) {
  require(x->shape.size() == 4, "chan_scale: x must be [N,C,H,W]");
  int N = x->shape[0], C = x->shape[1];
  std::int64_t hw = std::int64_t(x->shape[2]) * x->shape[3];
  require(s->shape.size() == 2 && s->shape[0] == N && s->shape[1] == C,
          "chan_scale: scale must be [N,C]");
  std::vector<float> out(x->val.size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* xi = x->val.data() + (std::int64_t(n) * C + c) * hw;
      float* oi = out.data() + (std::int64_t(n) * C + c) * hw;
      float sc = s->val[std::int64_t(n) * C + c];
      for (std::int64_t i = 0; i < hw; ++i) oi[i] = xi[i] * sc;
    }
  Ten px = x, ps = s;
  return op_node(x->shape, std::move(out), {x, s}, [px, ps, N, C, hw](Node& n) {
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < C; ++c) {
        std::int64_t base = (std::int64_t(b) * C + c) * hw;
        const float* g = n.grad.data() + base;
        float sc = ps->val[std::int64_t(b) * C + c];
        if (px->needs_grad) {
          px->ensure_grad();
          float* pg = px->grad.data() + base;
          for (std::int64_t i = 0; i < hw; ++i) pg[i] += g[i] * sc;
        }
        if (ps->needs_grad) {
          ps->ensure_grad();
          const float* xv = px->val.data() + base;
          double acc = 0;
          for (std::int64_t i = 0; i < hw; ++i) acc += double(g[i]) * xv[i];
          ps->grad[std::int64_t(b) * C + c] += float(acc);
        }
      }
  });
}

Ten mask_scale(const Ten& x, const Ten& m) {
  require(x->shape.size() == 4 && m->shape.size() == 4, "mask_scale: rank");
  int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  require(m->shape[0] == N && m->shape[1] == 1 && m->shape[2] == H &&
              m->shape[3] == W,
          "mask_scale: mask must be [N,1,H,W]");
  std::int64_t hw = std::int64_t(H) * W;
  std::vector<float> out(x->val.size());
  for (int n = 0; n < N; ++n) {
    const float* mi = m->val.data() + std::int64_t(n) * hw;
    for (int c = 0; c < C; ++c) {
      std::int64_t base = (std::int64_t(n) * C + c) * hw;
      const float* xi = x->val.data() + base;
      float* oi = out.data() + base;
      for (std::int64_t i = 0; i < hw; ++i) oi[i] = xi[i] * mi[i];
    }
  }
  Ten px = x, pm = m;
  return op_node(x->shape, std::move(out), {x, m}, [px, pm, N, C, hw](Node& n) {
    for (int b = 0; b < N; ++b) {
      const float* mi = pm->val.data() + std::int64_t(b) * hw;
      for (int c = 0; c < C; ++c) {
        std::int64_t base = (std::int64_t(b) * C + c) * hw;
        const float* g = n.grad.data() + base;
        if (px->needs_grad) {
          px->ensure_grad();
          float* pg = px->grad.data() + base;
          for (std::int64_t i = 0; i < hw; ++i) pg[i] += g[i] * mi[i];
        }
        if (pm->needs_grad) {
          pm->ensure_grad();
          const float* xv = px->val.data() + base;
          float* mg = pm->grad.data() + std::int64_t(b) * hw;
          for (std::int64_t i = 0; i < hw; ++i) mg[i] += g[i] * xv[i];
        }
      }
    }
  });
}

Ten row_scale(const Ten& x, const Ten& s) {
  require(x->shape.size() == 2, "row_scale: x must be [N,M]");
  int N = x->shape[0], M = x->shape[1];
  require(s->shape.size() == 2 && s->shape[0] == N && s->shape[1] == 1,
          "row_scale: scale must be [N,1]");
  std::vector<float> out(x->val.size());
  for (int r = 0; r < N; ++r) {
    float sc = s->val[r];
    for (int c = 0; c < M; ++c)
      out[std::int64_t(r) * M + c] = x->val[std::int64_t(r) * M + c] * sc;
  }
  Ten px = x, ps = s;
  return op_node(x->shape, std::move(out), {x, s}, [px, ps, N, M](Node& n) {
    for (int r = 0; r < N; ++r) {
      const float* g = n.grad.data() + std::int64_t(r) * M;
      if (px->needs_grad) {
        px->ensure_grad();
        float sc = ps->val[r];
        float* pg = px->grad.data() + std::int64_t(r) * M;
        for (int c = 0; c < M; ++c) pg[c] += g[c] * sc;
      }
      if (ps->needs_grad) {
        ps->ensure_grad();
        const float* xv = px->val.data() + std::int64_t(r) * M;
        double acc = 0;
        for (int c = 0; c < M; ++c) acc += double(g[c]) * xv[c];
        ps->grad[r] += float(acc);
      }
    }
  });
}

// ---------------- reductions ----------------

Ten sum_all(const Ten& a) {
  double acc = 0;
  for (float v : a->val) acc += v;
  Ten pa = a;
  return op_node({1}, {float(acc)}, {a}, [pa](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    float g = n.grad[0];
    for (auto& pg : pa->grad) pg += g;
  });
}

Ten mean_all(const Ten& a) {
  double acc = 0;
  for (float v : a->val) acc += v;
  float inv = 1.0f / float(a->val.size());
  Ten pa = a;
  return op_node({1}, {float(acc / double(a->val.size()))}, {a},
                 [pa, inv](Node& n) {
                   if (!pa->needs_grad) return;
                   pa->ensure_grad();
                   float g = n.grad[0] * inv;
                   for (auto& pg : pa->grad) pg += g;
                 });
}

Ten row_sum(const Ten& a) {
  require(a->shape.size() == 2, "row_sum: [N,M] input required");
  int N = a->shape[0], M = a->shape[1];
  std::vector<float> out(N);
  for (int r = 0; r < N; ++r) {
    double acc = 0;
    for (int c = 0; c < M; ++c) acc += a->val[std::int64_t(r) * M + c];
    out[r] = float(acc);
  }
  Ten pa = a;
  return op_node({N, 1}, std::move(out), {a}, [pa, N, M](Node& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (int r = 0; r < N; ++r) {
      float g = n.grad[r];
      float* pg = pa->grad.data() + std::int64_t(r) * M;
      for (int c = 0; c < M; ++c) pg[c] += g;
    }
  });
}

// ---------------- linear algebra ----------------

Ten matmul(const Ten& a, const Ten& b, bool transpose_b) {
  require(a->shape.size() == 2 && b->shape.size() == 2, "matmul: rank-2 only");
  int N = a->shape[0], K = a->shape[1];
  int M = transpose_b ? b->shape[0] : b->shape[1];
  int Kb = transpose_b ? b->shape[1] : b->shape[0];
  require(K == Kb, "matmul: inner dims mismatch");
  std::vector<float> out(std::size_t(N) * M);
  {
    CMapRM A(a->val.data(), N, K);
    CMapRM B(b->val.data(), b->shape[0], b->shape[1]);
    MapRM C(out.data(), N, M);
    if (transpose_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A * B;
  }
  Ten pa = a, pb = b;
  return op_node({N, M}, std::move(out), {a, b},
                 [pa, pb, N, K, M, transpose_b](Node& n) {
                   CMapRM G(n.grad.data(), N, M);
                   if (pa->needs_grad) {
                     pa->ensure_grad();
                     MapRM GA(pa->grad.data(), N, K);
                     CMapRM B(pb->val.data(), pb->shape[0], pb->shape[1]);
                     if (transpose_b)
                       GA.noalias() += G * B;
                     else
                       GA.noalias() += G * B.transpose();
                   }
                   if (pb->needs_grad) {
                     pb->ensure_grad();
                     MapRM GB(pb->grad.data(), pb->shape[0], pb->shape[1]);
                     CMapRM A(pa->val.data(), N, K);
                     if (transpose_b)
                       GB.noalias() += G.transpose() * A;
                     else
                       GB.noalias() += A.transpose() * G;
                   }
                 });
}

Ten linear(const Ten& x, const Ten& w, const Ten& b) {
  auto y = matmul(x, w, /*transpose_b=*/true);
  return add_bias_cols(y, b);
}

Ten upsample2(const Ten& x) {
  require(x->shape.size() == 4, "upsample2: [N,C,H,W] input required");
  int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  int H2 = 2 * H, W2 = 2 * W;
  std::vector<float> out(std::size_t(N) * C * H2 * W2);
  for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
    const float* src = x->val.data() + nc * H * W;
    float* dst = out.data() + nc * H2 * W2;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        float v = src[i * W + j];
        dst[(2 * i) * W2 + 2 * j] = v;
        dst[(2 * i) * W2 + 2 * j + 1] = v;
        dst[(2 * i + 1) * W2 + 2 * j] = v;
        dst[(2 * i + 1) * W2 + 2 * j + 1] = v;
      }
  }
  Ten px = x;
  return op_node({N, C, H2, W2}, std::move(out), {x}, [px, N, C, H, W](Node& n) {
    if (!px->needs_grad) return;
    px->ensure_grad();
    int H2 = 2 * H, W2 = 2 * W;
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
      const float* g = n.grad.data() + nc * H2 * W2;
      float* pg = px->grad.data() + nc * H * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          pg[i * W + j] += g[(2 * i) * W2 + 2 * j] + g[(2 * i) * W2 + 2 * j + 1] +
                           g[(2 * i + 1) * W2 + 2 * j] +
                           g[(2 * i + 1) * W2 + 2 * j + 1];
    }
  });
}

Ten global_avg_pool(const Ten& x) {
  require(x->shape.size() == 4, "global_avg_pool: [N,C,H,W] input required");
  int N = x->shape[0], C = x->shape[1];
  std::int64_t hw = std::int64_t(x->shape[2]) * x->shape[3];
  std::vector<float> out(std::size_t(N) * C);
  for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
    const float* src = x->val.data() + nc * hw;
    double acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
    out[nc] = float(acc / double(hw));
  }
  Ten px = x;
  return op_node({N, C}, std::move(out), {x}, [px, N, C, hw](Node& n) {
    if (!px->needs_grad) return;
    px->ensure_grad();
    float inv = 1.0f / float(hw);
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
      float g = n.grad[nc] * inv;
      float* pg = px->grad.data() + nc * hw;
      for (std::int64_t i = 0; i < hw; ++i) pg[i] += g;
    }
  });
}

// ---------------- losses ----------------

Ten bce_with_logits(const Ten& logits, const Ten& targets) {
  check_same_shape(logits, targets, "bce_with_logits");
  return mean_all(sub(softplus(logits), mul(logits, targets)));
}

Ten softmax_xent(const Ten& logits, const std::vector<int>& labels) {
  require(logits->shape.size() == 2, "softmax_xent: [N,K] logits required");
  int N = logits->shape[0], K = logits->shape[1];
  require(int(labels.size()) == N, "softmax_xent: label count mismatch");
  std::vector<float> probs(std::size_t(N) * K);
  double loss = 0;
  for (int r = 0; r < N; ++r) {
    const float* l = logits->val.data() + std::int64_t(r) * K;
    float mx = l[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, l[k]);
    double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(double(l[k]) - mx);
    for (int k = 0; k < K; ++k)
      probs[std::int64_t(r) * K + k] = float(std::exp(double(l[k]) - mx) / z);
    loss -= double(l[labels[r]]) - mx - std::log(z);
  }
  Ten pl = logits;
  auto labs = labels;
  auto pr = std::make_shared<std::vector<float>>(std::move(probs));
  return op_node({1}, {float(loss / N)}, {logits}, [pl, labs, pr, N, K](Node& n) {
    if (!pl->needs_grad) return;
    pl->ensure_grad();
    float g = n.grad[0] / float(N);
    for (int r = 0; r < N; ++r) {
      float* pg = pl->grad.data() + std::int64_t(r) * K;
      const float* p = pr->data() + std::int64_t(r) * K;
      for (int k = 0; k < K; ++k) pg[k] += g * (p[k] - (k == labs[r] ? 1.0f : 0.0f));
    }
  });
}

// ---------------- compositions ----------------

Ten l2_normalize_rows(const Ten& x, float eps) {
  auto inv = rsqrt_(add_scalar(row_sum(square(x)), eps));
  return row_scale(x, inv);
}

Ten rows_cosine(const Ten& a, const Ten& b, float eps) {
  auto dot = row_sum(mul(a, b));
  auto na = rsqrt_(add_scalar(row_sum(square(a)), eps));
  auto nb = rsqrt_(add_scalar(row_sum(square(b)), eps));
  return mul(mul(dot, na), nb);
}

Ten mean_abs_diff(const Ten& a, const Ten& b) { return mean_all(abs_(sub(a, b))); }

Ten mean_sq_diff(const Ten& a, const Ten& b) { return mean_all(square(sub(a, b))); }

float item(const Ten& t) {
  require(t->size() == 1, "item: scalar tensor required");
  return t->val[0];
}

}  // namespace g2::nn
