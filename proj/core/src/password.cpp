#include "g2/password.hpp"

#include <bit>
#include <cmath>

namespace g2::password {

PasswordBits encode_identity_to_bits(const identity::IdentityEmbedding& e) {
  require(e.dim() > 0, "encode_identity_to_bits: empty embedding");
  PasswordBits out;
  out.bits.reserve(std::size_t(e.dim()) * 32);
  for (float f : e.values) {
    if (!std::isfinite(f))
      throw std::domain_error("encode_identity_to_bits: non-finite entry");
    auto u = std::bit_cast<std::uint32_t>(f);
    for (int b = 31; b >= 0; --b) out.bits.push_back(std::uint8_t((u >> b) & 1u));
  }
  return out;
}

DecodeResult decode_bits_to_identity(const PasswordBits& bits) {
  require(bits.size() % 32 == 0, "decode_bits_to_identity: length must be 32*d_id");
  require(bits.size() > 0, "decode_bits_to_identity: empty bit string");
  DecodeResult r;
  const int d = bits.size() / 32;
  r.embedding.values.resize(d);
  for (int i = 0; i < d; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 32; ++b)
      u = (u << 1) | std::uint32_t(bits.bits[std::size_t(i) * 32 + b] & 1u);
    float f = std::bit_cast<float>(u);
    if (!std::isfinite(f)) {
      f = 0.0f;
      r.corrupted = true;
      ++r.corrupted_count;
    }
    r.embedding.values[i] = f;
  }
  return r;
}

PasswordTensor reshape_bits_to_tensor(const PasswordBits& bits, int h, int w) {
  require(h >= 1 && w >= 1, "reshape_bits_to_tensor: H,W must be >= 1");
  PasswordTensor t;
  t.H = h;
  t.W = w;
  const int cell = h * w;
  t.D = (bits.size() + cell - 1) / cell;
  t.pad_length = t.D * cell - bits.size();
  t.v.assign(std::size_t(t.D) * cell, 0.0f);
  for (int i = 0; i < bits.size(); ++i) t.v[i] = float(bits.bits[i]);
  return t;
}

PasswordBits flatten_tensor_to_bits(const PasswordTensor& t) {
  PasswordBits out;
  const int n = t.D * t.H * t.W - t.pad_length;
  require(n >= 0, "flatten_tensor_to_bits: negative payload");
  out.bits.resize(n);
  for (int i = 0; i < n; ++i) out.bits[i] = std::uint8_t(t.v[i] != 0.0f);
  return out;
}

nn::Ten batch_password_tensor(const std::vector<PasswordBits>& batch, int h, int w) {
  require(!batch.empty(), "batch_password_tensor: empty batch");
  auto first = reshape_bits_to_tensor(batch[0], h, w);
  std::vector<float> data;
  data.reserve(batch.size() * first.v.size());
  data.insert(data.end(), first.v.begin(), first.v.end());
  for (size_t i = 1; i < batch.size(); ++i) {
    require(batch[i].size() == batch[0].size(), "batch_password_tensor: mixed lengths");
    auto t = reshape_bits_to_tensor(batch[i], h, w);
    data.insert(data.end(), t.v.begin(), t.v.end());
  }
  return nn::constant({int(batch.size()), first.D, h, w}, std::move(data));
}

void ProjectionState::init(Rng& rng, int d_in, int c_out, bool bias) {
  w = nn::param_randn(rng, {c_out, d_in, 1, 1}, std::sqrt(1.0f / float(d_in)));
  b = nn::param_zeros({c_out});
  use_bias = bias;
}

nn::Ten ProjectionState::forward(const nn::Ten& v) const {
  require(v->shape.size() == 4 && v->shape[1] == w->shape[1],
          "project_hiding_features: depth mismatch " + shape_str(v->shape));
  auto out = nn::conv2d(v, w, 1, 0);
  return use_bias ? nn::add_bias_chan(out, b) : out;
}

void ProjectionState::collect(nn::ParamMap& out, const std::string& prefix) const {
  nn::collect_param(out, prefix + ".w", w);
  if (use_bias) nn::collect_param(out, prefix + ".b", b);
}

nn::Ten project_hiding_features(const nn::Ten& v, const ProjectionState& proj) {
  return proj.forward(v);
}

void ExtractorState::init(Rng& rng, int resolution_, int n_bits_) {
  require(resolution_ % 8 == 0, "extractor: resolution must be divisible by 8");
  resolution = resolution_;
  n_bits = n_bits_;
  grid = resolution / 8;
  d_out = (n_bits + grid * grid - 1) / (grid * grid);
  convs.clear();
  convs.emplace_back(rng, 3, 24, 3, 1, 1);
  convs.emplace_back(rng, 24, 32, 3, 2, 1);
  convs.emplace_back(rng, 32, 48, 3, 2, 1);
  convs.emplace_back(rng, 48, 64, 3, 2, 1);
  convs.emplace_back(rng, 64, d_out, 1, 1, 0);
}

nn::Ten ExtractorState::forward(const nn::Ten& images) const {
  require(images->shape.size() == 4 && images->shape[1] == 3 &&
              images->shape[2] == resolution && images->shape[3] == resolution,
          "extractor: image shape mismatch");
  nn::Ten h = images;
  for (size_t i = 0; i + 1 < convs.size(); ++i) h = nn::silu(convs[i].forward(h));
  h = convs.back().forward(h);  // [N, d_out, grid, grid]
  const int n = images->shape[0];
  auto flat = nn::reshape(h, {n, d_out * grid * grid});
  return nn::slice_cols(flat, 0, n_bits);
}

void ExtractorState::collect(nn::ParamMap& out, const std::string& prefix) const {
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].collect(out, prefix + ".conv" + std::to_string(i));
}

ExtractResult extract_password(const ImageTensor& image, const ExtractorState& extractor) {
  auto logits = extractor.forward(nn::batch_images({image}));
  ExtractResult r;
  r.logits = logits->val;
  r.bits.bits.resize(r.logits.size());
  for (size_t i = 0; i < r.logits.size(); ++i)
    r.bits.bits[i] = std::uint8_t(r.logits[i] > 0.0f);
  return r;
}

double bit_error_rate(const PasswordBits& pred, const PasswordBits& truth) {
  require(pred.size() == truth.size() && pred.size() > 0,
          "bit_error_rate: length mismatch");
  int errors = 0;
  for (int i = 0; i < pred.size(); ++i)
    errors += (pred.bits[i] & 1) != (truth.bits[i] & 1);
  return double(errors) / pred.size();
}

std::string bits_to_hex(const PasswordBits& bits) {
  require(bits.size() % 4 == 0, "bits_to_hex: length must be a multiple of 4");
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bits.size() / 4);
  for (int i = 0; i < bits.size(); i += 4) {
    int nib = (bits.bits[i] << 3) | (bits.bits[i + 1] << 2) |
              (bits.bits[i + 2] << 1) | bits.bits[i + 3];
    out.push_back(digits[nib]);
  }
  return out;
}

PasswordBits hex_to_bits(const std::string& hex, int n_bits) {
  require(int(hex.size()) * 4 == n_bits, "hex_to_bits: length mismatch");
  PasswordBits out;
  out.bits.reserve(n_bits);
  for (char c : hex) {
    int nib;
    if (c >= '0' && c <= '9')
      nib = c - '0';
    else if (c >= 'a' && c <= 'f')
      nib = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F')
      nib = c - 'A' + 10;
    else
      fail_param("hex_to_bits: invalid hex character");
    for (int b = 3; b >= 0; --b) out.bits.push_back(std::uint8_t((nib >> b) & 1));
  }
  return out;
}

}  // namespace g2::password
