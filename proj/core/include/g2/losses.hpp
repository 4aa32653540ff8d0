#pragma once

#include <map>
#include <string>
#include <vector>

#include "g2/dpim.hpp"

namespace g2::losses {

struct LossWeights {
  float lambda_div = 1.0f;
  float lambda_rec = 1.0f;
  float lambda_adv = 1.0f;
  float lambda_id = 1.0f;
  float lambda_geo = 1.0f;
  float lambda_hide = 10.0f;
  float lambda_lm = 0.01f;
};

struct LossReport {
  std::string stage;  // "anonymization" or "recovery"
  std::map<std::string, double> parts;
  double total = 0.0;
};

using nn::Ten;

/// L1 + perceptual term over the frozen embedder's mid-layer features.
Ten reconstruction_loss(const Ten& x_out, const Ten& x,
                        const identity::EmbedderState& embedder);

/// mean softplus(-D(x_out))
Ten adversarial_loss_g(const Ten& x_out, const dpim::DiscriminatorState& d);

struct AdvDOptions {
  bool apply_r1 = false;
  float r1_gamma = 10.0f;
};

/// Logistic discriminator loss over one real batch and one or more fake
/// batches, optionally with the R1 penalty (gamma/2 * ||grad_x D||^2).
Ten adversarial_loss_d(const Ten& x_real, const std::vector<Ten>& x_fakes,
                       const dpim::DiscriminatorState& d, const AdvDOptions& opts = {});

/// (1 - cos(e_dummy, E_fr(Y))) + max(0, cos(e_id, E_fr(Y))), batch mean.
Ten identity_loss_anon(const Ten& y, const Ten& e_id, const Ten& e_dummy,
                       const identity::EmbedderState& embedder);

/// 1 - cos(e_id, E_fr(X_hat)), batch mean.
Ten identity_loss_rec(const Ten& x_hat, const Ten& e_id,
                      const identity::EmbedderState& embedder);

/// Mean clamped off-diagonal cosine over a batch of dummy embeddings.
Ten diversity_loss(const Ten& dummies);

/// Batch mean of (1/V) * sum_v ||a_v - b_v||^2 over flattened [N,3V] rows.
Ten mean_per_vertex_sq(const Ten& a, const Ten& b, int num_vertices);
/// Batch mean of (1/L) * sum_l ||a_l - b_l||^2 over [N,2L] landmark rows.
Ten landmark_mse(const Ten& a, const Ten& b, int n_landmarks);

/// Mean-per-vertex shape + SH-color consistency between the 3D estimates
/// of the two images.
Ten mesh_loss(const Ten& x, const Ten& x_out, const geometry::ToyMorphableModel& model,
              const geometry::GeometryEstimatorState& estimator);

/// Mean squared distance over the 68 projected landmarks.
Ten landmark_loss(const Ten& x, const Ten& x_out,
                  const geometry::ToyMorphableModel& model,
                  const geometry::GeometryEstimatorState& estimator);

Ten geometry_loss(const Ten& x, const Ten& x_out,
                  const geometry::ToyMorphableModel& model,
                  const geometry::GeometryEstimatorState& estimator, float lambda_lm);

/// BCE between extractor logits on (x_out + eps) and the embedded bits.
Ten hiding_loss(const Ten& x_out, const std::vector<password::PasswordBits>& bits,
                const password::ExtractorState& extractor, float eps_sigma, Rng& rng);

struct AnonParts {
  Ten div, adv, id, geo, hide;
};
struct RecParts {
  Ten rec, adv, id, geo, hide;
};

struct TotalResult {
  Ten total;
  LossReport report;
};

TotalResult total_anon(const AnonParts& parts, const LossWeights& w);
TotalResult total_rec(const RecParts& parts, const LossWeights& w);

}  // namespace g2::losses
