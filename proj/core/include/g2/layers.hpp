#pragma once

#include <string>
#include <utility>
#include <vector>

#include "g2/tensor.hpp"

namespace g2::nn {

/// Ordered name -> parameter registry. Nets append their parameters with a
/// prefix; order is the canonical serialization order.
using ParamMap = std::vector<std::pair<std::string, Ten>>;

inline void collect_param(ParamMap& out, const std::string& name, const Ten& t) {
  out.emplace_back(name, t);
}

struct LinearLayer {
  Ten w, b;  // w: [out,in]

  LinearLayer() = default;
  LinearLayer(Rng& rng, int in, int out, float w_std) {
    w = param_randn(rng, {out, in}, w_std);
    b = param_zeros({out});
  }
  static LinearLayer he(Rng& rng, int in, int out) {
    return LinearLayer(rng, in, out, std::sqrt(2.0f / float(in)));
  }

  Ten forward(const Ten& x) const { return linear(x, w, b); }

  void collect(ParamMap& out, const std::string& prefix) const {
    collect_param(out, prefix + ".w", w);
    collect_param(out, prefix + ".b", b);
  }
};

struct Conv2dLayer {
  Ten w, b;  // w: [Co,Ci,K,K]
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(Rng& rng, int ci, int co, int k, int stride_, int pad_) {
    float std = std::sqrt(2.0f / float(ci * k * k));
    w = param_randn(rng, {co, ci, k, k}, std);
    b = param_zeros({co});
    stride = stride_;
    pad = pad_;
  }

  Ten forward(const Ten& x) const {
    return add_bias_chan(conv2d(x, w, stride, pad), b);
  }

  void collect(ParamMap& out, const std::string& prefix) const {
    collect_param(out, prefix + ".w", w);
    collect_param(out, prefix + ".b", b);
  }
};

/// Adam with per-group learning rates. Moments are kept in registration
/// order so optimizer state serializes deterministically.
class Adam {
 public:
  struct GroupSpec {
    std::string name;
    ParamMap params;
    float lr;
  };

  Adam(std::vector<GroupSpec> groups, float beta1, float beta2,
       float eps = 1e-8f);

  void step();
  void zero_grad();

  int t() const { return t_; }
  const std::vector<GroupSpec>& groups() const { return groups_; }

  /// Flat views for checkpointing (aligned with group/param order).
  std::vector<std::vector<float>>& moments_m() { return m_; }
  std::vector<std::vector<float>>& moments_v() { return v_; }
  void set_t(int t) { t_ = t; }

 private:
  std::vector<GroupSpec> groups_;
  std::vector<std::vector<float>> m_, v_;  // one entry per param, flat order
  std::vector<float> lrs_;                 // per param
  std::vector<Ten> flat_;
  float beta1_, beta2_, eps_;
  int t_ = 0;
};

}  // namespace g2::nn
