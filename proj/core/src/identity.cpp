#include "g2/identity.hpp"

#include <cmath>

namespace g2::identity {

void EmbedderState::init(Rng& rng, int resolution_, int d_id_) {
  resolution = resolution_;
  d_id = d_id_;
  frozen = false;
  convs.clear();
  convs.emplace_back(rng, 3, 16, 3, 2, 1);
  convs.emplace_back(rng, 16, 32, 3, 2, 1);
  convs.emplace_back(rng, 32, 64, 3, 2, 1);
  convs.emplace_back(rng, 64, 96, 3, 2, 1);
  fc1 = nn::LinearLayer::he(rng, 96, 128);
  fc2 = nn::LinearLayer(rng, 128, d_id, 0.1f);
}

nn::Ten EmbedderState::forward(const nn::Ten& images) const {
  require(images->shape.size() == 4 && images->shape[1] == 3 &&
              images->shape[2] == resolution && images->shape[3] == resolution,
          "embedder: image shape mismatch");
  nn::Ten h = images;
  for (const auto& c : convs) h = nn::silu(c.forward(h));
  h = nn::global_avg_pool(h);
  h = nn::silu(fc1.forward(h));
  return nn::l2_normalize_rows(fc2.forward(h));
}

std::vector<nn::Ten> EmbedderState::forward_features(const nn::Ten& images) const {
  require(images->shape.size() == 4 && images->shape[1] == 3 &&
              images->shape[2] == resolution && images->shape[3] == resolution,
          "embedder: image shape mismatch");
  std::vector<nn::Ten> feats;
  nn::Ten h = images;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = nn::silu(convs[i].forward(h));
    if (i == 1 || i == 2) feats.push_back(h);
  }
  return feats;
}

void EmbedderState::collect(nn::ParamMap& out, const std::string& prefix) const {
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].collect(out, prefix + ".conv" + std::to_string(i));
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

void EmbedderState::freeze() {
  frozen = true;
  nn::ParamMap params;
  collect(params, "efr");
  for (auto& [name, p] : params) nn::set_trainable(p, false);
}

void DummyGenState::init(Rng& rng, int d_z_, int d_id_, int hidden_) {
  d_z = d_z_;
  d_id = d_id_;
  hidden = hidden_;
  fc1 = nn::LinearLayer::he(rng, d_z, hidden);
  fc2 = nn::LinearLayer(rng, hidden, d_id, 0.2f);
}

nn::Ten DummyGenState::forward(const nn::Ten& z) const {
  require(z->shape.size() == 2 && z->shape[1] == d_z, "dummy generator: z dims");
  return nn::l2_normalize_rows(fc2.forward(nn::silu(fc1.forward(z))));
}

void DummyGenState::collect(nn::ParamMap& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

IdentityEmbedding embed_identity(const ImageTensor& image, const EmbedderState& embedder) {
  require(embedder.frozen, "embed_identity: embedder must be frozen");
  auto out = embedder.forward(nn::batch_images({image}));
  return {out->val};
}

IdentityEmbedding generate_dummy_id(const NoiseVector& z, const DummyGenState& gen) {
  auto zt = nn::constant({1, int(z.z.size())}, z.z);
  auto out = gen.forward(zt);
  return {out->val};
}

double cosine_similarity(const IdentityEmbedding& a, const IdentityEmbedding& b) {
  require(a.dim() == b.dim() && a.dim() > 0, "cosine_similarity: dim mismatch");
  double dot = 0, na = 0, nb = 0;
  for (int i = 0; i < a.dim(); ++i) {
    dot += double(a.values[i]) * b.values[i];
    na += double(a.values[i]) * a.values[i];
    nb += double(b.values[i]) * b.values[i];
  }
  require(na > 0 && nb > 0, "cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace g2::identity
