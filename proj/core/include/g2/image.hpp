#pragma once

#include <vector>

#include "g2/common.hpp"
#include "g2/tensor.hpp"

namespace g2 {

/// 3xRxR image in [-1,1], CHW layout. File I/O maps 8-bit RGB through
/// x/127.5 - 1 (see io_png.cpp).
struct ImageTensor {
  std::vector<float> pixels;
  int res = 0;

  ImageTensor() = default;
  ImageTensor(int r, float fill = 0.0f) : pixels(std::size_t(3) * r * r, fill), res(r) {}

  std::int64_t size() const { return std::int64_t(pixels.size()); }
  float& at(int c, int y, int x) { return pixels[(std::size_t(c) * res + y) * res + x]; }
  float at(int c, int y, int x) const { return pixels[(std::size_t(c) * res + y) * res + x]; }
};

namespace nn {

/// Stack images into a [N,3,R,R] constant.
inline Ten batch_images(const std::vector<ImageTensor>& imgs) {
  require(!imgs.empty(), "batch_images: empty batch");
  int r = imgs[0].res;
  std::vector<float> data;
  data.reserve(imgs.size() * imgs[0].pixels.size());
  for (const auto& im : imgs) {
    require(im.res == r, "batch_images: mixed resolutions");
    data.insert(data.end(), im.pixels.begin(), im.pixels.end());
  }
  return constant({int(imgs.size()), 3, r, r}, std::move(data));
}

inline ImageTensor image_from_tensor(const Ten& t, int n) {
  require(t->shape.size() == 4 && t->shape[1] == 3, "image_from_tensor: shape");
  ImageTensor im(t->shape[2]);
  std::size_t sz = im.pixels.size();
  std::copy_n(t->val.data() + std::size_t(n) * sz, sz, im.pixels.data());
  return im;
}

}  // namespace nn
}  // namespace g2
