#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "g2/identity.hpp"
#include "g2/image.hpp"
#include "g2/layers.hpp"

namespace g2::password {

/// IEEE-754 binary32 serialization of an identity embedding: one float per
/// entry, 32 bits each, big-endian bit order (sign, exponent, mantissa),
/// floats in index order.
struct PasswordBits {
  std::vector<std::uint8_t> bits;  // entries in {0,1}
  int size() const { return int(bits.size()); }
};

/// Spatial reshape of a bit sequence: D = ceil(len/(H*W)) channels,
/// zero-padded tail, channel-major/row-major layout.
struct PasswordTensor {
  std::vector<float> v;  // [D*H*W], entries in {0,1}
  int D = 0, H = 0, W = 0;
  int pad_length = 0;
};

/// Per-layer 1x1 projection of the password tensor into feature space.
struct ProjectionState {
  nn::Ten w;  // [C_out, D, 1, 1]
  nn::Ten b;  // [C_out]
  bool use_bias = true;

  void init(Rng& rng, int d_in, int c_out, bool bias = true);
  nn::Ten forward(const nn::Ten& v) const;  // [N,D,H,W] -> [N,C_out,H,W]
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

/// Five-layer convolutional password extractor: one logit per bit, laid
/// out channel-major at the coarsest grid so bit k of the password maps to
/// a fixed cell.
struct ExtractorState {
  int resolution = 0;
  int n_bits = 0;
  int grid = 0;        // spatial size of the logit grid (resolution/8)
  int d_out = 0;       // logit channels: ceil(n_bits/grid^2)
  std::vector<nn::Conv2dLayer> convs;

  void init(Rng& rng, int resolution, int n_bits);
  /// [N,3,R,R] -> logits [N, n_bits]
  nn::Ten forward(const nn::Ten& images) const;
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

struct DecodeResult {
  identity::IdentityEmbedding embedding;
  bool corrupted = false;   // any NaN/Inf float replaced by 0
  int corrupted_count = 0;
};

struct ExtractResult {
  PasswordBits bits;
  std::vector<float> logits;
};

PasswordBits encode_identity_to_bits(const identity::IdentityEmbedding& e);
DecodeResult decode_bits_to_identity(const PasswordBits& bits);

PasswordTensor reshape_bits_to_tensor(const PasswordBits& bits, int h, int w);
PasswordBits flatten_tensor_to_bits(const PasswordTensor& t);

/// Reshape + project for a whole batch of bit strings (training path).
nn::Ten batch_password_tensor(const std::vector<PasswordBits>& batch, int h, int w);

nn::Ten project_hiding_features(const nn::Ten& v, const ProjectionState& proj);

ExtractResult extract_password(const ImageTensor& image, const ExtractorState& extractor);

double bit_error_rate(const PasswordBits& pred, const PasswordBits& truth);

/// Audit form: 4 bits per hex char, big-endian nibble order.
std::string bits_to_hex(const PasswordBits& bits);
PasswordBits hex_to_bits(const std::string& hex, int n_bits);

}  // namespace g2::password
