#pragma once

#include <memory>
#include <ostream>

#include "g2/checkpoint.hpp"
#include "g2/config.hpp"
#include "g2/dpim.hpp"
#include "g2/losses.hpp"
#include "g2/synth.hpp"

namespace g2::train {

struct AuxMetrics {
  double same_id_cos = 0.0;   // embedder validation, positive pairs
  double cross_id_cos = 0.0;  // embedder validation, negative pairs
  double coeff_err = 0.0;     // estimator: mean sigma-normalized coefficient L2
};

/// Deterministic train/validation split over a dataset.
struct DataView {
  const synth::Dataset* data = nullptr;
  std::vector<int> train_idx, val_idx;

  static DataView split(const synth::Dataset& ds, double val_fraction = 0.15);
};

struct TrainState {
  TrainConfig config;
  dpim::SystemState system;
  std::unique_ptr<nn::Adam> opt_gen, opt_disc;
  Rng rng;
  int step = 0;

  void init(const TrainConfig& cfg);
};

/// Two Adam groups on the generator side (backbone lr vs the rest) plus a
/// separate discriminator optimizer. Every trainable parameter lands in
/// exactly one group.
void configure_optimizers(TrainState& st);

/// Train the identity embedder (cosine-margin classification) and the
/// geometry estimator (sigma-normalized regression), then freeze both.
AuxMetrics pretrain_auxiliaries(TrainState& st, const DataView& data,
                                std::ostream* log = nullptr);

/// Reconstruction-driven decoder pretraining: the desk-scale generative
/// prior the main run fine-tunes when GENP is on.
void pretrain_generator_prior(TrainState& st, const DataView& data,
                              std::ostream* log = nullptr);

/// One iteration of the two-stage schedule: anonymization losses, recovery
/// losses, one combined generator-side update, then one discriminator
/// update (skipped when lambda_adv is zero).
std::pair<losses::LossReport, losses::LossReport> train_step(
    const std::vector<const synth::SyntheticSample*>& batch, TrainState& st);

CheckpointContainer snapshot(const TrainState& st);
void restore(TrainState& st, const CheckpointContainer& ck);

/// Full pipeline: dataset, auxiliaries, prior (GENP), main loop with
/// periodic checkpoints and a JSON-lines metrics log under out_dir.
CheckpointContainer train(const TrainConfig& config, std::ostream* log = nullptr,
                          const std::string& resume_path = "");

/// Rebuild a system from a checkpoint (weights + frozen auxiliaries).
void load_system(dpim::SystemState& system, const CheckpointContainer& ck);

}  // namespace g2::train
