#pragma once

#include <array>
#include <string>
#include <vector>

#include "g2/geometry.hpp"
#include "g2/image.hpp"
#include "g2/rng.hpp"

namespace g2::synth {

/// Sampling bounds for the generator. Each coefficient group draws from a
/// clamped Gaussian with the sigma recorded here.
struct SynthConfig {
  int identity_latent_dim = 12;
  float sigma_shape = 2.0f;
  float sigma_expr = 1.5f;
  float sigma_rot_xy = 0.18f;     // out-of-plane tilt
  float sigma_rot_z = 0.25f;      // in-plane roll
  float sigma_trans = 0.05f;
  float sigma_logscale = 0.07f;
  float clamp_sigmas = 2.5f;      // clamp at this many sigmas
  float gamma_dc_mean = 2.6f;
  float gamma_dc_sigma = 0.35f;
  float gamma_lin_sigma = 0.45f;
  float gamma_quad_sigma = 0.15f;
};

struct Nuisance {
  std::array<float, 3> background_color{};  // in [0,1]
  std::array<float, 4> hair_band_params{};  // cy, inner radius, thickness, gray
};

struct SyntheticSpec {
  std::vector<float> identity_latent;
  geometry::GeometryCoefficients geom;
  geometry::IlluminationCoefficients gamma;
  Nuisance nuisance;
  int identity_id = -1;
};

struct SyntheticSample {
  ImageTensor image;
  SyntheticSpec spec;
  int identity_id = -1;
};

struct Dataset {
  int pool = 0;
  int resolution = 0;
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 0;
  int d_s = 0, d_e = 0, num_vertices = 0;
  std::vector<SyntheticSample> samples;
  std::vector<std::pair<int, int>> positive_pairs;
  std::vector<std::pair<int, int>> negative_pairs;
};

/// Fixed per-identity codebook: latents depend only on the identity index,
/// so identity k means the same appearance in every dataset.
std::vector<float> identity_latent(int identity_id, int dim = 12);

/// Per-vertex albedo pattern keyed by the identity latent.
std::vector<float> albedo_from_latent(const std::vector<float>& latent,
                                      const geometry::ToyMorphableModel& model);

SyntheticSpec sample_spec(Rng& rng, int identity_pool_size,
                          const SynthConfig& cfg = {});

ImageTensor render(const SyntheticSpec& spec, const geometry::ToyMorphableModel& model,
                   int resolution);
/// Same as render but also reports which pixels the face mesh covered.
ImageTensor render_with_mask(const SyntheticSpec& spec,
                             const geometry::ToyMorphableModel& model, int resolution,
                             std::vector<std::uint8_t>* face_mask);

Dataset make_dataset(int n, std::uint64_t seed, int pool, int resolution,
                     const geometry::ToyMorphableModel& model, int n_pairs,
                     const SynthConfig& cfg = {});

/// Persist images (PNG) + manifest.json + model.g2mm under dir.
void write_dataset(const Dataset& ds, const geometry::ToyMorphableModel& model,
                   const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::uint64_t manifest_digest(const std::string& dir);

}  // namespace g2::synth
