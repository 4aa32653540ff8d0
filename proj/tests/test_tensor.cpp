#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "g2/layers.hpp"
#include "g2/tensor.hpp"
#include "grad_check.hpp"

using namespace g2;
using namespace g2::nn;
using g2::testing::grad_check;

namespace {

Ten randu_param(Rng& rng, Shape s, float lo, float hi) {
  std::vector<float> v(numel(s));
  for (auto& x : v) x = float(rng.uniform(lo, hi));
  return param(std::move(s), std::move(v));
}

}  // namespace

TEST_CASE("elementwise forward values") {
  auto a = constant({4}, {1.0f, -2.0f, 0.5f, 3.0f});
  auto b = constant({4}, {2.0f, 1.0f, -1.0f, 0.25f});
  auto s = add(a, b);
  CHECK(s->val[0] == doctest::Approx(3.0f));
  CHECK(s->val[1] == doctest::Approx(-1.0f));
  auto m = mul(a, b);
  CHECK(m->val[3] == doctest::Approx(0.75f));
  auto sq = square(a);
  CHECK(sq->val[1] == doctest::Approx(4.0f));
  CHECK(item(sum_all(a)) == doctest::Approx(2.5f));
  CHECK(item(mean_all(a)) == doctest::Approx(0.625f));
}

TEST_CASE("softplus is overflow-safe") {
  auto a = constant({3}, {-100.0f, 0.0f, 100.0f});
  auto y = softplus(a);
  CHECK(y->val[0] == doctest::Approx(0.0f));
  CHECK(y->val[1] == doctest::Approx(std::log(2.0)));
  CHECK(y->val[2] == doctest::Approx(100.0f));
}

TEST_CASE("gradient: elementwise chain") {
  Rng rng(1);
  auto p = param_randn(rng, {6}, 0.7f);
  auto build = [&] {
    auto t = silu(mul(p, p));
    auto u = tanh_(add_scalar(t, 0.3f));
    return mean_all(square(sub(u, sigmoid(p))));
  };
  auto r = grad_check({p}, build);
  CHECK(r.ok());
}

TEST_CASE("gradient: log/exp/sqrt/rsqrt on positive inputs") {
  Rng rng(2);
  auto p = randu_param(rng, {5}, 0.5f, 2.0f);
  auto build = [&] {
    auto a = log_(p);
    auto b = exp_(mul_scalar(p, 0.3f));
    auto c = sqrt_(p);
    auto d = rsqrt_(add_scalar(p, 0.1f));
    return mean_all(add(add(a, b), add(c, d)));
  };
  auto r = grad_check({p}, build);
  CHECK(r.ok());
}

TEST_CASE("gradient: matmul both sides and transpose_b") {
  Rng rng(3);
  auto a = param_randn(rng, {3, 4}, 0.5f);
  auto b = param_randn(rng, {4, 2}, 0.5f);
  auto bt = param_randn(rng, {2, 4}, 0.5f);
  auto build = [&] {
    auto y = matmul(a, b);
    auto z = matmul(a, bt, /*transpose_b=*/true);
    return mean_all(square(add(y, z)));
  };
  auto r = grad_check({a, b, bt}, build);
  CHECK(r.ok());
}

TEST_CASE("gradient: broadcast helpers") {
  Rng rng(4);
  auto x = param_randn(rng, {2, 3, 4, 4}, 0.5f);
  auto bias = param_randn(rng, {3}, 0.5f);
  auto s = param_randn(rng, {2, 3}, 0.5f);
  auto m = randu_param(rng, {2, 1, 4, 4}, 0.1f, 0.9f);
  auto build = [&] {
    auto y = add_bias_chan(x, bias);
    y = chan_scale(y, s);
    y = mask_scale(y, m);
    return mean_all(square(y));
  };
  auto r = grad_check({x, bias, s, m}, build);
  CHECK(r.ok());
}

TEST_CASE("gradient: rows helpers") {
  Rng rng(5);
  auto x = param_randn(rng, {3, 5}, 0.8f);
  auto sc = randu_param(rng, {3, 1}, 0.5f, 1.5f);
  auto build = [&] {
    auto y = row_scale(x, sc);
    auto n = l2_normalize_rows(y);
    auto fit = mean_all(square(sub(n, mul_scalar(x, 0.1f))));
    return add(fit, mean_all(square(y)));
  };
  auto r = grad_check({x, sc}, build);
  CHECK(r.ok());
}

TEST_CASE("gradient: concat and slice") {
  Rng rng(6);
  auto a = param_randn(rng, {2, 3}, 0.5f);
  auto b = param_randn(rng, {2, 2}, 0.5f);
  auto build = [&] {
    auto c = concat_axis1({a, b});
    auto s = slice_cols(c, 1, 4);
    return mean_all(square(s));
  };
  auto r = grad_check({a, b}, build);
  CHECK(r.ok());
}

TEST_CASE("conv2d matches direct summation oracle") {
  Rng rng(7);
  int N = 2, Ci = 3, H = 5, W = 5, Co = 4, K = 3, stride = 1, pad = 1;
  auto x = param_randn(rng, {N, Ci, H, W}, 1.0f);
  auto w = param_randn(rng, {Co, Ci, K, K}, 0.5f);
  auto y = conv2d(x, w, stride, pad);
  int Ho = (H + 2 * pad - K) / stride + 1;
  int Wo = Ho;
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (int ci = 0; ci < Ci; ++ci)
            for (int ki = 0; ki < K; ++ki)
              for (int kj = 0; kj < K; ++kj) {
                int iy = oy * stride + ki - pad;
                int ix = ox * stride + kj - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += double(x->val[((n * Ci + ci) * H + iy) * W + ix]) *
                       w->val[((co * Ci + ci) * K + ki) * K + kj];
              }
          CHECK(y->val[((n * Co + co) * Ho + oy) * Wo + ox] ==
                doctest::Approx(acc).epsilon(1e-4));
        }
}

TEST_CASE("gradient: conv2d stride 1 and stride 2") {
  Rng rng(8);
  for (int stride : {1, 2}) {
    auto x = param_randn(rng, {2, 2, 6, 6}, 0.7f);
    auto w = param_randn(rng, {3, 2, 3, 3}, 0.5f);
    auto build = [&] { return mean_all(square(conv2d(x, w, stride, 1))); };
    auto r = grad_check({x, w}, build);
    CHECK(r.ok());
  }
}

TEST_CASE("conv2d_transpose is the exact adjoint of conv2d") {
  // <conv(x), y> == <x, conv_T(y)> for any x, y
  Rng rng(9);
  int stride = 2, pad = 1;
  auto x = constant({1, 2, 6, 6}, randn_vec(rng, 72, 1.0f));
  auto w = constant({3, 2, 3, 3}, randn_vec(rng, 54, 1.0f));
  auto cx = conv2d(x, w, stride, pad);
  auto y = constant(cx->shape, randn_vec(rng, cx->size(), 1.0f));
  auto cty = conv2d_transpose(y, w, stride, pad, 6, 6);
  double lhs = 0, rhs = 0;
  for (int i = 0; i < cx->size(); ++i) lhs += double(cx->val[i]) * y->val[i];
  for (int i = 0; i < x->size(); ++i) rhs += double(x->val[i]) * cty->val[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("gradient: conv2d_transpose") {
  Rng rng(10);
  auto y = param_randn(rng, {2, 3, 3, 3}, 0.7f);
  auto w = param_randn(rng, {3, 2, 3, 3}, 0.5f);
  auto build = [&] {
    return mean_all(square(conv2d_transpose(y, w, 2, 1, 6, 6)));
  };
  auto r = grad_check({y, w}, build);
  CHECK(r.ok());
}

TEST_CASE("gradient: upsample2 / global_avg_pool / bce / xent") {
  Rng rng(11);
  auto x = param_randn(rng, {2, 2, 3, 3}, 0.7f);
  auto t = constant({2, 2, 6, 6}, std::vector<float>(144, 0.0f));
  auto build = [&] { return bce_with_logits(upsample2(x), t); };
  CHECK(grad_check({x}, build).ok());

  auto logits = param_randn(rng, {4, 5}, 1.0f);
  std::vector<int> labels = {0, 3, 2, 4};
  auto build2 = [&] {
    auto pooled = logits;  // already [N,K]
    return softmax_xent(pooled, labels);
  };
  CHECK(grad_check({logits}, build2).ok());

  auto img = param_randn(rng, {2, 3, 4, 4}, 0.7f);
  auto build3 = [&] { return mean_all(square(global_avg_pool(img))); };
  CHECK(grad_check({img}, build3).ok());
}

TEST_CASE("frozen parameters receive no gradient but pass it through") {
  Rng rng(12);
  auto x = param_randn(rng, {2, 4}, 1.0f);
  auto w = param_randn(rng, {3, 4}, 1.0f);
  auto b = param_zeros({3});
  set_trainable(w, false);
  set_trainable(b, false);
  auto loss = mean_all(square(linear(x, w, b)));
  backward(loss);
  CHECK(w->grad.empty());
  CHECK(b->grad.empty());
  REQUIRE(!x->grad.empty());
  double gsum = 0;
  for (float g : x->grad) gsum += std::fabs(g);
  CHECK(gsum > 0.0);
}

TEST_CASE("second-order: gradients of an input-gradient graph") {
  // Build dL/dx as tape ops (conv_transpose of the activation-derivative
  // chain) and differentiate a penalty on it w.r.t. the weights. This is
  // the construction the discriminator R1 penalty uses.
  Rng rng(13);
  auto x = constant({1, 1, 4, 4}, randn_vec(rng, 16, 1.0f));
  auto w = param_randn(rng, {2, 1, 3, 3}, 0.6f);
  auto build = [&] {
    auto pre = conv2d(x, w, 1, 1);  // [1,2,4,4]
    // d(mean silu(pre))/dx expressed with primitives
    auto dsilu = [&](const Ten& z) {
      auto s = sigmoid(z);
      // silu'(z) = s (1 + z (1 - s))
      return mul(s, add_scalar(mul(z, sub(constant_like(s, 1.0f), s)), 1.0f));
    };
    auto gout = mul_scalar(dsilu(pre), 1.0f / float(pre->size()));
    auto gx = conv2d_transpose(gout, w, 1, 1, 4, 4);
    return sum_all(square(gx));
  };
  auto r = grad_check({w}, build);
  CHECK(r.ok());
}

TEST_CASE("adam reduces a quadratic") {
  Rng rng(14);
  auto p = param_randn(rng, {8}, 2.0f);
  nn::Adam opt({{"all", {{"p", p}}, 0.05f}}, 0.9f, 0.99f);
  float first = 0, last = 0;
  for (int it = 0; it < 200; ++it) {
    auto loss = mean_all(square(p));
    backward(loss);
    if (it == 0) first = item(loss);
    last = item(loss);
    opt.step();
    opt.zero_grad();
  }
  CHECK(last < 0.01f * first);
}

TEST_CASE("backward is deterministic across repeated runs") {
  Rng rng(15);
  auto x = param_randn(rng, {4, 3, 8, 8}, 1.0f);
  auto w = param_randn(rng, {5, 3, 3, 3}, 0.5f);
  auto run = [&] {
    std::fill(x->grad.begin(), x->grad.end(), 0.0f);
    auto loss = mean_all(square(silu(conv2d(x, w, 1, 1))));
    backward(loss);
    return std::make_pair(item(loss), x->grad);
  };
  auto loss1 = mean_all(square(silu(conv2d(x, w, 1, 1))));
  backward(loss1);
  auto g1 = x->grad;
  auto [l2, g2] = run();
  CHECK(g1 == g2);
}
