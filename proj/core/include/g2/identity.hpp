#pragma once

#include <string>
#include <vector>

#include "g2/image.hpp"
#include "g2/layers.hpp"

namespace g2::identity {

/// Unit-norm identity embedding (default d_id = 512; desk configs use 64).
struct IdentityEmbedding {
  std::vector<float> values;
  int dim() const { return int(values.size()); }
};

struct NoiseVector {
  std::vector<float> z;
  static NoiseVector sample(Rng& rng, int d_z) {
    NoiseVector n;
    n.z = nn::randn_vec(rng, d_z, 1.0f);
    return n;
  }
};

/// Small convolutional embedder standing in for a pretrained recognition
/// model. Trained with a cosine-margin classifier over the synthetic
/// identity pool, then frozen.
struct EmbedderState {
  int resolution = 0;
  int d_id = 0;
  bool frozen = false;
  std::vector<nn::Conv2dLayer> convs;
  nn::LinearLayer fc1, fc2;

  void init(Rng& rng, int resolution, int d_id);
  /// [N,3,R,R] -> unit-norm [N,d_id]
  nn::Ten forward(const nn::Ten& images) const;
  /// Mid-layer activations (after convs 1 and 2), the perceptual features.
  std::vector<nn::Ten> forward_features(const nn::Ten& images) const;
  void collect(nn::ParamMap& out, const std::string& prefix) const;
  void freeze();
};

/// Two-layer MLP mapping noise to a unit-norm dummy identity embedding.
struct DummyGenState {
  int d_z = 0, d_id = 0, hidden = 256;
  nn::LinearLayer fc1, fc2;

  void init(Rng& rng, int d_z, int d_id, int hidden = 256);
  nn::Ten forward(const nn::Ten& z) const;  // [N,d_z] -> unit-norm [N,d_id]
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

IdentityEmbedding embed_identity(const ImageTensor& image, const EmbedderState& embedder);
IdentityEmbedding generate_dummy_id(const NoiseVector& z, const DummyGenState& gen);
double cosine_similarity(const IdentityEmbedding& a, const IdentityEmbedding& b);

}  // namespace g2::identity
