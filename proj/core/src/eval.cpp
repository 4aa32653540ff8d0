#include "g2/eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "g2/losses.hpp"

namespace g2::eval {

using identity::IdentityEmbedding;

double tar_at_fpr(const std::vector<double>& pos, const std::vector<double>& neg,
                  double fpr) {
  require(!pos.empty() && !neg.empty(), "tar_at_fpr: empty score lists");
  const int allowed_fp = int(std::floor(fpr * double(neg.size())));
  std::vector<double> neg_sorted = neg;
  std::sort(neg_sorted.begin(), neg_sorted.end(), std::greater<>());
  // lowest threshold that keeps false positives within budget; accepting
  // at scores >= threshold mirrors the exhaustive sweep
  double threshold;
  if (allowed_fp >= int(neg_sorted.size()))
    threshold = -std::numeric_limits<double>::infinity();
  else
    threshold = std::nextafter(neg_sorted[allowed_fp],
                               std::numeric_limits<double>::infinity());
  int tp = 0;
  for (double s : pos) tp += s >= threshold;
  return double(tp) / double(pos.size());
}

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

double l2(const float* a, const float* b, int n) {
  double acc = 0;
  for (int i = 0; i < n; ++i) acc += double(a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

}  // namespace

EvalReport evaluate(const dpim::SystemState& system, const synth::Dataset& ds,
                    const EvalOptions& opts) {
  EvalReport rep;
  Rng rng(opts.seed);
  const int n = opts.max_images > 0
                    ? std::min<int>(opts.max_images, int(ds.samples.size()))
                    : int(ds.samples.size());
  require(n > 0, "evaluate: empty dataset");

  std::vector<IdentityEmbedding> emb_x(n), emb_y(n);
  std::vector<double> anon_cos(n);
  double rec_cos_sum = 0, ber_sum = 0, fmse_sum = 0;
  double lm_sum = 0, shape_sum = 0, expr_sum = 0, pose_sum = 0;
  double l1_sum = 0, mse_sum = 0, div_sum = 0;

  for (int i = 0; i < n; ++i) {
    const auto& x = ds.samples[i].image;
    auto z = identity::NoiseVector::sample(rng, system.cfg.d_z);
    auto an = dpim::anonymize(x, z, system);
    auto re = dpim::recover(an.y, system);

    emb_x[i] = identity::embed_identity(x, system.embedder);
    emb_y[i] = identity::embed_identity(an.y, system.embedder);
    auto emb_r = identity::embed_identity(re.x_hat, system.embedder);
    anon_cos[i] = identity::cosine_similarity(emb_x[i], emb_y[i]);
    rec_cos_sum += identity::cosine_similarity(emb_x[i], emb_r);

    auto ext = password::extract_password(an.y, system.extractor);
    ber_sum += password::bit_error_rate(ext.bits, an.bits_embedded);
    auto dec = password::decode_bits_to_identity(ext.bits);
    double fm = 0;
    for (int k = 0; k < system.cfg.d_id; ++k) {
      double d = double(dec.embedding.values[k]) - emb_x[i].values[k];
      fm += d * d;
    }
    fmse_sum += fm / system.cfg.d_id;

    auto gx = geometry::estimate_geometry(x, system.estimator);
    auto gy = geometry::estimate_geometry(an.y, system.estimator);
    auto sx = geometry::compute_shape(system.model, gx.coeffs);
    auto sy = geometry::compute_shape(system.model, gy.coeffs);
    auto lx = geometry::project_landmarks(system.model, sx, gx.coeffs.c_pose);
    auto ly = geometry::project_landmarks(system.model, sy, gy.coeffs.c_pose);
    double lm = 0;
    for (size_t k = 0; k < lx.size() / 2; ++k)
      lm += l2(&lx[2 * k], &ly[2 * k], 2);
    lm_sum += lm / double(lx.size() / 2);
    shape_sum += l2(gx.coeffs.c_s.data(), gy.coeffs.c_s.data(), int(gx.coeffs.c_s.size()));
    expr_sum +=
        l2(gx.coeffs.c_exp.data(), gy.coeffs.c_exp.data(), int(gx.coeffs.c_exp.size()));
    pose_sum += l2(gx.coeffs.c_pose.data(), gy.coeffs.c_pose.data(), 6);

    double l1 = 0, mse = 0;
    for (size_t k = 0; k < x.pixels.size(); ++k) {
      double d = double(re.x_hat.pixels[k]) - x.pixels[k];
      l1 += std::fabs(d);
      mse += d * d;
    }
    l1_sum += l1 / double(x.pixels.size());
    mse_sum += mse / double(x.pixels.size());

    // per-image dummy set for the diversity matrix
    std::vector<IdentityEmbedding> dummies;
    for (int k = 0; k < opts.dummies_per_image; ++k)
      dummies.push_back(identity::generate_dummy_id(
          identity::NoiseVector::sample(rng, system.cfg.d_z), system.dummy));
    double acc = 0;
    int cnt = 0;
    for (size_t a = 0; a < dummies.size(); ++a)
      for (size_t b = 0; b < dummies.size(); ++b)
        if (a != b) {
          acc += std::max(0.0, identity::cosine_similarity(dummies[a], dummies[b]));
          ++cnt;
        }
    div_sum += acc / cnt;
  }

  rep.n_images = n;
  double mean = 0;
  for (double c : anon_cos) mean += c;
  mean /= n;
  double var = 0;
  for (double c : anon_cos) var += (c - mean) * (c - mean);
  rep.anon_cosine_mean = mean;
  rep.anon_cosine_std = std::sqrt(var / n);
  rep.rec_cosine_mean = rec_cos_sum / n;
  rep.ber = ber_sum / n;
  rep.float_mse = fmse_sum / n;
  rep.landmark_dist = lm_sum / n;
  rep.shape_dist = shape_sum / n;
  rep.expr_dist = expr_sum / n;
  rep.pose_dist = pose_sum / n;
  rep.recovery_l1 = l1_sum / n;
  rep.recovery_psnr = 10.0 * std::log10(4.0 / std::max(mse_sum / n, 1e-12));
  rep.diversity_offdiag_mean = div_sum / n;

  // TAR: threshold at FPR 0.001 on original negative pairs, TPR on
  // positives whose second image is anonymized
  std::vector<double> pos_scores, neg_scores;
  for (auto [a, b] : ds.positive_pairs) {
    if (a >= n || b >= n) continue;
    pos_scores.push_back(cosine(emb_x[a].values, emb_y[b].values));
  }
  for (auto [a, b] : ds.negative_pairs) {
    if (a >= n || b >= n) continue;
    neg_scores.push_back(cosine(emb_x[a].values, emb_x[b].values));
  }
  rep.n_pos_pairs = int(pos_scores.size());
  rep.n_neg_pairs = int(neg_scores.size());
  if (!pos_scores.empty() && !neg_scores.empty())
    rep.tar_at_fpr_001 = tar_at_fpr(pos_scores, neg_scores, 0.001);
  return rep;
}

EvalReport evaluate_folders(const dpim::SystemState& system,
                            const std::vector<ImageTensor>& inputs,
                            const std::vector<ImageTensor>& recovered) {
  require(inputs.size() == recovered.size() && !inputs.empty(),
          "evaluate_folders: paired image lists required");
  EvalReport rep;
  rep.ber_skipped = true;
  const int n = int(inputs.size());
  double rec_cos = 0, l1_sum = 0, mse_sum = 0, lm_sum = 0, shape_sum = 0,
         expr_sum = 0, pose_sum = 0;
  for (int i = 0; i < n; ++i) {
    auto ex = identity::embed_identity(inputs[i], system.embedder);
    auto er = identity::embed_identity(recovered[i], system.embedder);
    rec_cos += identity::cosine_similarity(ex, er);
    double l1 = 0, mse = 0;
    for (size_t k = 0; k < inputs[i].pixels.size(); ++k) {
      double d = double(recovered[i].pixels[k]) - inputs[i].pixels[k];
      l1 += std::fabs(d);
      mse += d * d;
    }
    l1_sum += l1 / double(inputs[i].pixels.size());
    mse_sum += mse / double(inputs[i].pixels.size());

    auto gx = geometry::estimate_geometry(inputs[i], system.estimator);
    auto gr = geometry::estimate_geometry(recovered[i], system.estimator);
    auto sx = geometry::compute_shape(system.model, gx.coeffs);
    auto sr = geometry::compute_shape(system.model, gr.coeffs);
    auto lx = geometry::project_landmarks(system.model, sx, gx.coeffs.c_pose);
    auto lr = geometry::project_landmarks(system.model, sr, gr.coeffs.c_pose);
    double lm = 0;
    for (size_t k = 0; k < lx.size() / 2; ++k) lm += l2(&lx[2 * k], &lr[2 * k], 2);
    lm_sum += lm / double(lx.size() / 2);
    shape_sum += l2(gx.coeffs.c_s.data(), gr.coeffs.c_s.data(), int(gx.coeffs.c_s.size()));
    expr_sum +=
        l2(gx.coeffs.c_exp.data(), gr.coeffs.c_exp.data(), int(gx.coeffs.c_exp.size()));
    pose_sum += l2(gx.coeffs.c_pose.data(), gr.coeffs.c_pose.data(), 6);
  }
  rep.n_images = n;
  rep.rec_cosine_mean = rec_cos / n;
  rep.recovery_l1 = l1_sum / n;
  rep.recovery_psnr = 10.0 * std::log10(4.0 / std::max(mse_sum / n, 1e-12));
  rep.landmark_dist = lm_sum / n;
  rep.shape_dist = shape_sum / n;
  rep.expr_dist = expr_sum / n;
  rep.pose_dist = pose_sum / n;
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["anon_cosine_mean"] = anon_cosine_mean;
  j["anon_cosine_std"] = anon_cosine_std;
  j["rec_cosine_mean"] = rec_cosine_mean;
  if (ber_skipped) {
    j["ber"] = nullptr;
    j["float_mse"] = nullptr;
  } else {
    j["ber"] = ber;
    j["float_mse"] = float_mse;
  }
  j["landmark_dist"] = landmark_dist;
  j["shape_dist"] = shape_dist;
  j["expr_dist"] = expr_dist;
  j["pose_dist"] = pose_dist;
  j["recovery_l1"] = recovery_l1;
  j["recovery_psnr"] = recovery_psnr;
  j["diversity_offdiag_mean"] = diversity_offdiag_mean;
  j["tar_at_fpr_001"] = tar_at_fpr_001;
  j["n_images"] = n_images;
  j["n_pos_pairs"] = n_pos_pairs;
  j["n_neg_pairs"] = n_neg_pairs;
  return j.dump(1);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "schema_version,anon_cosine_mean,anon_cosine_std,rec_cosine_mean,ber,"
        "float_mse,landmark_dist,shape_dist,expr_dist,pose_dist,recovery_l1,"
        "recovery_psnr,diversity_offdiag_mean,tar_at_fpr_001,n_images,"
        "n_pos_pairs,n_neg_pairs\n";
  os << 1 << "," << anon_cosine_mean << "," << anon_cosine_std << ","
     << rec_cosine_mean << ",";
  if (ber_skipped)
    os << ",";
  else
    os << ber << ",";
  if (ber_skipped)
    os << ",";
  else
    os << float_mse << ",";
  os << landmark_dist << "," << shape_dist << "," << expr_dist << "," << pose_dist
     << "," << recovery_l1 << "," << recovery_psnr << "," << diversity_offdiag_mean
     << "," << tar_at_fpr_001 << "," << n_images << "," << n_pos_pairs << ","
     << n_neg_pairs << "\n";
  return os.str();
}

ImageTensor grid_image(const std::vector<std::vector<std::optional<ImageTensor>>>& rows,
                       int cell_res) {
  require(!rows.empty(), "grid_image: empty grid");
  size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  require(cols > 0, "grid_image: empty rows");
  const int pad = 2;
  const int cell = cell_res + pad;
  ImageTensor out(int(rows.size()) * cell + pad);
  // the canvas is square only when rows == cols; use the max extent
  int h = int(rows.size()) * cell + pad;
  int w_px = int(cols) * cell + pad;
  int side = std::max(h, w_px);
  out = ImageTensor(side, 1.0f);  // white background
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) {
      int oy = int(r) * cell + pad;
      int ox = int(c) * cell + pad;
      const auto& cell_img = rows[r][c];
      for (int y = 0; y < cell_res; ++y)
        for (int x = 0; x < cell_res; ++x)
          for (int ch = 0; ch < 3; ++ch)
            out.at(ch, oy + y, ox + x) =
                cell_img ? cell_img->at(ch, y, x) : 0.0f;  // blank: mid-gray
    }
  return out;
}

}  // namespace g2::eval
