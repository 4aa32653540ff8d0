#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "g2/common.hpp"
#include "g2/rng.hpp"

namespace g2::nn {

// Reverse-mode autodiff over dense float tensors. Graphs are built per
// forward pass and torn down when the root tensor goes out of scope.
// All reductions accumulate in double so fixed-seed runs are bit-stable
// and finite-difference checks stay clean.

struct Node;
using Ten = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<float> val;
  std::vector<float> grad;  // allocated on demand during backward
  std::vector<Ten> parents;
  std::function<void(Node&)> back;  // empty for leaves
  bool needs_grad = false;          // gradient flows to or through this node
  bool trainable = false;           // updated by an optimizer

  std::int64_t size() const { return std::int64_t(val.size()); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0f);
  }
};

Ten make_node(Shape shape, std::vector<float> val);

/// Build an op node from parents and a backward fn. The backward fn reads
/// n.grad/n.val and accumulates into parents' grads; it is dropped when no
/// parent needs gradients. Fused primitives in other modules use this too.
Ten op_node(Shape shape, std::vector<float> val, std::vector<Ten> parents,
            std::function<void(Node&)> back);

/// Leaf with no gradient (data, targets, frozen inputs).
Ten constant(Shape shape, std::vector<float> val);
Ten constant_like(const Ten& t, float fill);
Ten scalar(float v);

/// Trainable leaf.
Ten param(Shape shape, std::vector<float> init);
Ten param_zeros(Shape shape);
Ten param_randn(Rng& rng, Shape shape, float stddev);
Ten param_fill(Shape shape, float fill);

/// Freeze/unfreeze a parameter (frozen params receive no gradient).
void set_trainable(const Ten& t, bool trainable);

/// Detach: same values, no history.
Ten stop_grad(const Ten& t);

/// Accumulate dL/dx for every node reachable from `root` (a scalar).
void backward(const Ten& root);

// ---- elementwise ----
Ten add(const Ten& a, const Ten& b);
Ten sub(const Ten& a, const Ten& b);
Ten mul(const Ten& a, const Ten& b);
Ten add_scalar(const Ten& a, float c);
Ten mul_scalar(const Ten& a, float c);
Ten neg(const Ten& a);
Ten square(const Ten& a);
Ten abs_(const Ten& a);
Ten sqrt_(const Ten& a);       // d/dx = 1/(2 sqrt x); callers keep x > 0
Ten rsqrt_(const Ten& a);      // 1/sqrt(x)
Ten exp_(const Ten& a);
Ten log_(const Ten& a);
Ten sigmoid(const Ten& a);
Ten tanh_(const Ten& a);
Ten silu(const Ten& a);        // x * sigmoid(x)
Ten softplus(const Ten& a);    // log(1 + exp(x)), overflow-safe
Ten relu(const Ten& a);

// ---- shape / structure ----
Ten reshape(const Ten& a, Shape s);
/// Concatenate along axis 1; all other dims must match. Works for
/// [N,C,H,W] (channels) and [N,M] (columns).
Ten concat_axis1(const std::vector<Ten>& parts);
/// Columns [c0,c1) of a [N,M] tensor.
Ten slice_cols(const Ten& a, int c0, int c1);

// ---- broadcasting ----
/// x[N,C,H,W] + b[C]
Ten add_bias_chan(const Ten& x, const Ten& b);
/// x[N,M] + b[M]
Ten add_bias_cols(const Ten& x, const Ten& b);
/// x[N,C,H,W] * s[N,C]  (per-sample channel scale)
Ten chan_scale(const Ten& x, const Ten& s);
/// x[N,C,H,W] * m[N,1,H,W]  (mask broadcast over channels)
Ten mask_scale(const Ten& x, const Ten& m);
/// x[N,M] * s[N,1]  (per-row scale)
Ten row_scale(const Ten& x, const Ten& s);

// ---- reductions ----
Ten sum_all(const Ten& a);   // -> [1]
Ten mean_all(const Ten& a);  // -> [1]
Ten row_sum(const Ten& a);   // [N,M] -> [N,1]

// ---- linear algebra ----
/// a[N,K] x b[K,M] -> [N,M]; transpose_b treats b as [M,K].
Ten matmul(const Ten& a, const Ten& b, bool transpose_b = false);
/// x[N,in] * W[out,in]^T + b[out]
Ten linear(const Ten& x, const Ten& w, const Ten& b);

// ---- conv / resampling ----
/// x[N,Ci,H,W], w[Co,Ci,K,K] -> [N,Co,H',W'] with H' = (H+2p-K)/s + 1.
Ten conv2d(const Ten& x, const Ten& w, int stride, int pad);
/// Exact adjoint of conv2d w.r.t. its input: y[N,Co,H',W'] -> [N,Ci,H,W].
Ten conv2d_transpose(const Ten& y, const Ten& w, int stride, int pad,
                     int out_h, int out_w);
Ten upsample2(const Ten& x);          // nearest 2x
Ten global_avg_pool(const Ten& x);    // [N,C,H,W] -> [N,C]

// ---- losses ----
/// mean over elements of softplus(l) - l*t, targets in {0,1}.
Ten bce_with_logits(const Ten& logits, const Ten& targets);
/// mean cross-entropy of rows of logits[N,K] against integer labels.
Ten softmax_xent(const Ten& logits, const std::vector<int>& labels);

// ---- compositions ----
Ten l2_normalize_rows(const Ten& x, float eps = 1e-8f);
Ten rows_cosine(const Ten& a, const Ten& b, float eps = 1e-8f);  // -> [N,1]
Ten mean_abs_diff(const Ten& a, const Ten& b);
Ten mean_sq_diff(const Ten& a, const Ten& b);

// ---- helpers ----
std::vector<float> randn_vec(Rng& rng, std::int64_t n, float stddev);
float item(const Ten& t);

}  // namespace g2::nn
