#include <Eigen/Core>
#include <cstring>

#include "g2/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// im2col + GEMM convolutions. Parallelism is over the batch dimension
// with per-sample scratch and per-sample weight-gradient buffers reduced
// in fixed sample order, so results are bit-identical for any thread
// count.

namespace g2::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

struct ConvDims {
  int N, Ci, H, W;     // input
  int Co, K;           // kernel
  int stride, pad;
  int Ho, Wo;          // output
  std::int64_t cols_rows() const { return std::int64_t(Ci) * K * K; }
  std::int64_t cols_cols() const { return std::int64_t(Ho) * Wo; }
};

void im2col(const float* x, const ConvDims& d, float* cols) {
  const int K = d.K, Ho = d.Ho, Wo = d.Wo, H = d.H, W = d.W;
  for (int ci = 0; ci < d.Ci; ++ci)
    for (int ki = 0; ki < K; ++ki)
      for (int kj = 0; kj < K; ++kj) {
        float* row = cols + ((std::int64_t(ci) * K + ki) * K + kj) * Ho * Wo;
        const float* src = x + std::int64_t(ci) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * d.stride + ki - d.pad;
          if (iy < 0 || iy >= H) {
            std::memset(row + std::int64_t(oy) * Wo, 0, sizeof(float) * Wo);
            continue;
          }
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * d.stride + kj - d.pad;
            row[std::int64_t(oy) * Wo + ox] =
                (ix >= 0 && ix < W) ? src[std::int64_t(iy) * W + ix] : 0.0f;
          }
        }
      }
}

void col2im_add(const float* cols, const ConvDims& d, float* x) {
  const int K = d.K, Ho = d.Ho, Wo = d.Wo, H = d.H, W = d.W;
  for (int ci = 0; ci < d.Ci; ++ci)
    for (int ki = 0; ki < K; ++ki)
      for (int kj = 0; kj < K; ++kj) {
        const float* row = cols + ((std::int64_t(ci) * K + ki) * K + kj) * Ho * Wo;
        float* dst = x + std::int64_t(ci) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * d.stride + ki - d.pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * d.stride + kj - d.pad;
            if (ix >= 0 && ix < W) dst[std::int64_t(iy) * W + ix] += row[std::int64_t(oy) * Wo + ox];
          }
        }
      }
}

ConvDims conv_dims(const Ten& x, const Ten& w, int stride, int pad) {
  require(x->shape.size() == 4, "conv2d: input must be [N,C,H,W]");
  require(w->shape.size() == 4 && w->shape[2] == w->shape[3],
          "conv2d: weight must be [Co,Ci,K,K]");
  ConvDims d;
  d.N = x->shape[0];
  d.Ci = x->shape[1];
  d.H = x->shape[2];
  d.W = x->shape[3];
  d.Co = w->shape[0];
  d.K = w->shape[2];
  d.stride = stride;
  d.pad = pad;
  require(w->shape[1] == d.Ci, "conv2d: channel mismatch");
  d.Ho = (d.H + 2 * pad - d.K) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.K) / stride + 1;
  require(d.Ho > 0 && d.Wo > 0, "conv2d: empty output");
  return d;
}

}  // namespace

Ten conv2d(const Ten& x, const Ten& w, int stride, int pad) {
  ConvDims d = conv_dims(x, w, stride, pad);
  std::vector<float> out(std::size_t(d.N) * d.Co * d.Ho * d.Wo);
  const std::int64_t crows = d.cols_rows(), ccols = d.cols_cols();

#pragma omp parallel for schedule(static)
  for (int n = 0; n < d.N; ++n) {
    std::vector<float> cols(crows * ccols);
    im2col(x->val.data() + std::int64_t(n) * d.Ci * d.H * d.W, d, cols.data());
    CMapRM W(w->val.data(), d.Co, crows);
    CMapRM C(cols.data(), crows, ccols);
    MapRM O(out.data() + std::int64_t(n) * d.Co * ccols, d.Co, ccols);
    O.noalias() = W * C;
  }

  Ten px = x, pw = w;
  return op_node({d.N, d.Co, d.Ho, d.Wo}, std::move(out), {x, w}, [px, pw, d](Node& n) {
    const std::int64_t crows = d.cols_rows(), ccols = d.cols_cols();
    const bool need_dx = px->needs_grad, need_dw = pw->needs_grad;
    if (need_dx) px->ensure_grad();
    if (need_dw) pw->ensure_grad();
    std::vector<float> wpart;
    if (need_dw) wpart.assign(std::size_t(d.N) * pw->val.size(), 0.0f);

#pragma omp parallel for schedule(static)
    for (int s = 0; s < d.N; ++s) {
      CMapRM G(n.grad.data() + std::int64_t(s) * d.Co * ccols, d.Co, ccols);
      if (need_dx) {
        std::vector<float> dcols(crows * ccols);
        CMapRM W(pw->val.data(), d.Co, crows);
        MapRM DC(dcols.data(), crows, ccols);
        DC.noalias() = W.transpose() * G;
        col2im_add(dcols.data(), d,
                   px->grad.data() + std::int64_t(s) * d.Ci * d.H * d.W);
      }
      if (need_dw) {
        std::vector<float> cols(crows * ccols);
        im2col(px->val.data() + std::int64_t(s) * d.Ci * d.H * d.W, d, cols.data());
        CMapRM C(cols.data(), crows, ccols);
        MapRM DW(wpart.data() + std::int64_t(s) * pw->val.size(), d.Co, crows);
        DW.noalias() = G * C.transpose();
      }
    }
    if (need_dw) {
      // fixed-order reduction keeps gradients thread-count independent
      for (int s = 0; s < d.N; ++s) {
        const float* src = wpart.data() + std::int64_t(s) * pw->val.size();
        for (size_t i = 0; i < pw->val.size(); ++i) pw->grad[i] += src[i];
      }
    }
  });
}

Ten conv2d_transpose(const Ten& y, const Ten& w, int stride, int pad,
                     int out_h, int out_w) {
  require(y->shape.size() == 4, "conv2d_transpose: input must be [N,Co,H',W']");
  require(w->shape.size() == 4 && w->shape[2] == w->shape[3],
          "conv2d_transpose: weight must be [Co,Ci,K,K]");
  ConvDims d;
  d.N = y->shape[0];
  d.Co = w->shape[0];
  d.Ci = w->shape[1];
  d.K = w->shape[2];
  d.stride = stride;
  d.pad = pad;
  d.H = out_h;
  d.W = out_w;
  d.Ho = y->shape[2];
  d.Wo = y->shape[3];
  require(y->shape[1] == d.Co, "conv2d_transpose: channel mismatch");
  require((d.H + 2 * pad - d.K) / stride + 1 == d.Ho &&
              (d.W + 2 * pad - d.K) / stride + 1 == d.Wo,
          "conv2d_transpose: geometry mismatch");

  const std::int64_t crows = d.cols_rows(), ccols = d.cols_cols();
  std::vector<float> out(std::size_t(d.N) * d.Ci * d.H * d.W, 0.0f);

#pragma omp parallel for schedule(static)
  for (int n = 0; n < d.N; ++n) {
    std::vector<float> cols(crows * ccols);
    CMapRM W(w->val.data(), d.Co, crows);
    CMapRM Y(y->val.data() + std::int64_t(n) * d.Co * ccols, d.Co, ccols);
    MapRM C(cols.data(), crows, ccols);
    C.noalias() = W.transpose() * Y;
    col2im_add(cols.data(), d, out.data() + std::int64_t(n) * d.Ci * d.H * d.W);
  }

  Ten py = y, pw = w;
  return op_node({d.N, d.Ci, d.H, d.W}, std::move(out), {y, w}, [py, pw, d](Node& n) {
    const std::int64_t crows = d.cols_rows(), ccols = d.cols_cols();
    const bool need_dy = py->needs_grad, need_dw = pw->needs_grad;
    if (need_dy) py->ensure_grad();
    if (need_dw) pw->ensure_grad();
    std::vector<float> wpart;
    if (need_dw) wpart.assign(std::size_t(d.N) * pw->val.size(), 0.0f);

#pragma omp parallel for schedule(static)
    for (int s = 0; s < d.N; ++s) {
      std::vector<float> gcols(crows * ccols);
      im2col(n.grad.data() + std::int64_t(s) * d.Ci * d.H * d.W, d, gcols.data());
      CMapRM GC(gcols.data(), crows, ccols);
      if (need_dy) {
        CMapRM W(pw->val.data(), d.Co, crows);
        MapRM DY(py->grad.data() + std::int64_t(s) * d.Co * ccols, d.Co, ccols);
        DY.noalias() += W * GC;
      }
      if (need_dw) {
        CMapRM Y(py->val.data() + std::int64_t(s) * d.Co * ccols, d.Co, ccols);
        MapRM DW(wpart.data() + std::int64_t(s) * pw->val.size(), d.Co, crows);
        DW.noalias() = Y * GC.transpose();
      }
    }
    if (need_dw) {
      for (int s = 0; s < d.N; ++s) {
        const float* src = wpart.data() + std::int64_t(s) * pw->val.size();
        for (size_t i = 0; i < pw->val.size(); ++i) pw->grad[i] += src[i];
      }
    }
  });
}

}  // namespace g2::nn
