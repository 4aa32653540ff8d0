#pragma once

#include <optional>
#include <string>
#include <vector>

#include "g2/dpim.hpp"
#include "g2/synth.hpp"

namespace g2::eval {

/// Metric bundle produced by the evaluation harness. `ber` and
/// `float_mse` are NaN-free: when a metric is not applicable (folder
/// comparisons without a bit audit) it is reported as -1 and flagged.
struct EvalReport {
  double anon_cosine_mean = 0.0, anon_cosine_std = 0.0;
  double rec_cosine_mean = 0.0;
  double ber = -1.0;
  double float_mse = -1.0;
  double landmark_dist = 0.0;
  double shape_dist = 0.0;
  double expr_dist = 0.0;
  double pose_dist = 0.0;
  double recovery_l1 = 0.0;
  double recovery_psnr = 0.0;
  double diversity_offdiag_mean = 0.0;
  double tar_at_fpr_001 = 0.0;
  int n_images = 0;
  int n_pos_pairs = 0, n_neg_pairs = 0;
  bool ber_skipped = false;

  std::string to_json() const;
  std::string to_csv() const;  // schema v1: header + one row
};

struct EvalOptions {
  std::uint64_t seed = 1234;
  int dummies_per_image = 8;  // diversity matrix size per image
  int max_images = 0;         // 0: all
};

/// Full-pipeline evaluation over a dataset: anonymize + recover each
/// sample, then identity, steganography, geometry, reconstruction,
/// diversity, and TAR metrics.
EvalReport evaluate(const dpim::SystemState& system, const synth::Dataset& ds,
                    const EvalOptions& opts = {});

/// Folder-comparison mode: recovery-side metrics between paired images
/// (same filenames). BER/float-MSE are skipped.
EvalReport evaluate_folders(const dpim::SystemState& system,
                            const std::vector<ImageTensor>& inputs,
                            const std::vector<ImageTensor>& recovered);

/// Max TPR subject to FPR <= fpr, over all score thresholds. Equivalent
/// to the exhaustive threshold sweep.
double tar_at_fpr(const std::vector<double>& positive_scores,
                  const std::vector<double>& negative_scores, double fpr);

/// Row-major grid of images (missing cells render mid-gray).
ImageTensor grid_image(const std::vector<std::vector<std::optional<ImageTensor>>>& rows,
                       int cell_res);

}  // namespace g2::eval
