#pragma once

#include <cstdint>
#include <string>

#include "g2/losses.hpp"

namespace g2::train {

/// Flat training configuration. Serializes to `key=value` lines; unknown
/// keys are rejected by name.
struct TrainConfig {
  int batch_size = 8;
  float lr_backbone = 1e-4f;
  float lr_other = 1e-3f;
  float beta1 = 0.90f;
  float beta2 = 0.99f;
  int steps = 2000;
  std::uint64_t seed = 1;
  int resolution = 64;
  int d_id = 64;
  int d_w = 512;
  int d_z = 64;
  int d_s = 16;
  int d_e = 8;
  bool genp = true;
  bool geop = true;
  bool iff = true;
  bool mask_per_channel = false;
  bool noise_injection = false;
  losses::LossWeights weights;
  float eps_sigma = 0.01f;
  int checkpoint_every = 500;
  int r1_every = 16;
  float r1_gamma = 10.0f;

  // auxiliary pretraining budgets
  int embedder_steps = 1500;
  int estimator_steps = 2500;
  int prior_steps = 600;
  int aux_batch = 16;

  // data
  std::uint64_t model_seed = 7;
  int model_vertices = 642;
  int pool = 50;
  std::string data_dir;
  std::string out_dir = "runs/default";

  dpim::NetConfig net() const;
  std::string serialize() const;                  // canonical key=value text
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
  std::uint64_t hash() const;
};

}  // namespace g2::train
