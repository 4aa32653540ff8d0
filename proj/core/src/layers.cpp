#include "g2/layers.hpp"

#include <cmath>

namespace g2::nn {

Adam::Adam(std::vector<GroupSpec> groups, float beta1, float beta2, float eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1,
          "Adam: betas must lie in (0,1)");
  for (const auto& g : groups_) {
    require(g.lr > 0, "Adam: learning rate must be positive");
    for (const auto& [name, p] : g.params) {
      require(p->trainable, "Adam: non-trainable parameter in group: " + name);
      flat_.push_back(p);
      lrs_.push_back(g.lr);
      m_.emplace_back(p->val.size(), 0.0f);
      v_.emplace_back(p->val.size(), 0.0f);
    }
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, float(t_));
  const float bc2 = 1.0f - std::pow(beta2_, float(t_));
  for (size_t pi = 0; pi < flat_.size(); ++pi) {
    Ten& p = flat_[pi];
    if (p->grad.empty()) continue;  // no gradient reached this step
    auto& m = m_[pi];
    auto& v = v_[pi];
    const float lr = lrs_[pi];
    for (size_t i = 0; i < p->val.size(); ++i) {
      float g = p->grad[i];
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * g * g;
      float mhat = m[i] / bc1;
      float vhat = v[i] / bc2;
      p->val[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : flat_)
    if (!p->grad.empty()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

}  // namespace g2::nn
