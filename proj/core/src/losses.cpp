#include "g2/losses.hpp"

#include <cmath>

namespace g2::losses {

using nn::Ten;

Ten reconstruction_loss(const Ten& x_out, const Ten& x,
                        const identity::EmbedderState& embedder) {
  require(x_out->shape == x->shape, "reconstruction_loss: shape mismatch");
  Ten l1 = nn::mean_abs_diff(x_out, x);
  auto fa = embedder.forward_features(x_out);
  auto fb = embedder.forward_features(x);
  Ten perceptual = nn::mean_abs_diff(fa[0], fb[0]);
  for (size_t i = 1; i < fa.size(); ++i)
    perceptual = nn::add(perceptual, nn::mean_abs_diff(fa[i], fb[i]));
  return nn::add(l1, perceptual);
}

Ten adversarial_loss_g(const Ten& x_out, const dpim::DiscriminatorState& d) {
  return nn::mean_all(nn::softplus(nn::neg(d.forward(x_out))));
}

Ten adversarial_loss_d(const Ten& x_real, const std::vector<Ten>& x_fakes,
                       const dpim::DiscriminatorState& d, const AdvDOptions& opts) {
  require(!x_fakes.empty(), "adversarial_loss_d: need at least one fake batch");
  Ten loss = nn::mean_all(nn::softplus(nn::neg(d.forward(x_real))));
  const float fake_w = 1.0f / float(x_fakes.size());
  for (const auto& f : x_fakes)
    loss = nn::add(loss, nn::mul_scalar(nn::mean_all(nn::softplus(d.forward(f))), fake_w));
  if (opts.apply_r1) {
    Ten g = d.input_gradient(x_real);
    const int n = x_real->shape[0];
    // gamma/2 * mean over the batch of the squared gradient norm
    Ten r1 = nn::mul_scalar(nn::sum_all(nn::square(g)),
                            opts.r1_gamma * 0.5f / float(n));
    loss = nn::add(loss, r1);
  }
  return loss;
}

Ten identity_loss_anon(const Ten& y, const Ten& e_id, const Ten& e_dummy,
                       const identity::EmbedderState& embedder) {
  Ten e_y = embedder.forward(y);
  Ten align = nn::mean_all(
      nn::sub(nn::constant({y->shape[0], 1}, std::vector<float>(y->shape[0], 1.0f)),
              nn::rows_cosine(e_dummy, e_y)));
  Ten repel = nn::mean_all(nn::relu(nn::rows_cosine(e_id, e_y)));
  return nn::add(align, repel);
}

Ten identity_loss_rec(const Ten& x_hat, const Ten& e_id,
                      const identity::EmbedderState& embedder) {
  Ten e_x = embedder.forward(x_hat);
  return nn::mean_all(nn::sub(
      nn::constant({x_hat->shape[0], 1}, std::vector<float>(x_hat->shape[0], 1.0f)),
      nn::rows_cosine(e_id, e_x)));
}

Ten diversity_loss(const Ten& dummies) {
  require(dummies->shape.size() == 2 && dummies->shape[0] >= 2,
          "diversity_loss: need at least two embeddings");
  const int n = dummies->shape[0];
  Ten e = nn::l2_normalize_rows(dummies);
  Ten gram = nn::matmul(e, e, /*transpose_b=*/true);  // [n,n]
  Ten clamped = nn::relu(gram);
  // zero the diagonal, average the n(n-1) off-diagonal entries
  std::vector<float> off(std::size_t(n) * n, 1.0f);
  for (int i = 0; i < n; ++i) off[std::size_t(i) * n + i] = 0.0f;
  Ten masked = nn::mul(clamped, nn::constant({n, n}, std::move(off)));
  return nn::mul_scalar(nn::sum_all(masked), 1.0f / float(n) / float(n - 1));
}

namespace {

struct GeoEstimate {
  Ten c_s, c_exp, pose, gamma;  // column slices of the estimator head
};

GeoEstimate estimate(const Ten& images, const geometry::GeometryEstimatorState& est) {
  Ten out = est.forward(images);
  GeoEstimate g;
  int a = est.d_s, b = est.d_s + est.d_e;
  g.c_s = nn::slice_cols(out, 0, a);
  g.c_exp = nn::slice_cols(out, a, b);
  g.pose = nn::slice_cols(out, b, b + 6);
  g.gamma = nn::slice_cols(out, b + 6, b + 6 + 27);
  return g;
}

}  // namespace

Ten mean_per_vertex_sq(const Ten& a, const Ten& b, int num_vertices) {
  require(a->shape == b->shape && a->shape.size() == 2 &&
              a->shape[1] == num_vertices * 3,
          "mean_per_vertex_sq: [N,3V] rows required");
  return nn::mul_scalar(nn::mean_all(nn::row_sum(nn::square(nn::sub(a, b)))),
                        1.0f / float(num_vertices));
}

Ten landmark_mse(const Ten& a, const Ten& b, int n_landmarks) {
  require(a->shape == b->shape && a->shape.size() == 2 &&
              a->shape[1] == n_landmarks * 2,
          "landmark_mse: [N,2L] rows required");
  return nn::mul_scalar(nn::mean_all(nn::row_sum(nn::square(nn::sub(a, b)))),
                        1.0f / float(n_landmarks));
}

Ten mesh_loss(const Ten& x, const Ten& x_out, const geometry::ToyMorphableModel& model,
              const geometry::GeometryEstimatorState& estimator) {
  auto ga = estimate(x, estimator);
  auto gb = estimate(x_out, estimator);
  Ten sa = geometry::ops::shape_from_coeffs(model, ga.c_s, ga.c_exp);
  Ten sb = geometry::ops::shape_from_coeffs(model, gb.c_s, gb.c_exp);
  Ten shape_term = mean_per_vertex_sq(sa, sb, model.num_vertices);

  Ten na = geometry::ops::vertex_normals(model, sa);
  Ten nb = geometry::ops::vertex_normals(model, sb);
  Ten ca = geometry::ops::sh_colors(na, ga.gamma);
  Ten cb = geometry::ops::sh_colors(nb, gb.gamma);
  Ten color_term = mean_per_vertex_sq(ca, cb, model.num_vertices);
  return nn::add(shape_term, color_term);
}

Ten landmark_loss(const Ten& x, const Ten& x_out,
                  const geometry::ToyMorphableModel& model,
                  const geometry::GeometryEstimatorState& estimator) {
  auto ga = estimate(x, estimator);
  auto gb = estimate(x_out, estimator);
  Ten sa = geometry::ops::shape_from_coeffs(model, ga.c_s, ga.c_exp);
  Ten sb = geometry::ops::shape_from_coeffs(model, gb.c_s, gb.c_exp);
  Ten la = geometry::ops::project_landmarks(model, sa, ga.pose);
  Ten lb = geometry::ops::project_landmarks(model, sb, gb.pose);
  return landmark_mse(la, lb, int(model.landmark_indices.size()));
}

Ten geometry_loss(const Ten& x, const Ten& x_out,
                  const geometry::ToyMorphableModel& model,
                  const geometry::GeometryEstimatorState& estimator, float lambda_lm) {
  Ten mesh = mesh_loss(x, x_out, model, estimator);
  if (lambda_lm == 0.0f) return mesh;
  return nn::add(mesh,
                 nn::mul_scalar(landmark_loss(x, x_out, model, estimator), lambda_lm));
}

Ten hiding_loss(const Ten& x_out, const std::vector<password::PasswordBits>& bits,
                const password::ExtractorState& extractor, float eps_sigma, Rng& rng) {
  require(eps_sigma >= 0.0f, "hiding_loss: eps_sigma must be >= 0");
  require(int(bits.size()) == x_out->shape[0], "hiding_loss: bits batch mismatch");
  Ten input = x_out;
  if (eps_sigma > 0.0f) {
    Ten eps = nn::constant(x_out->shape, nn::randn_vec(rng, x_out->size(), eps_sigma));
    input = nn::add(x_out, eps);
  }
  Ten logits = extractor.forward(input);
  std::vector<float> target;
  target.reserve(std::size_t(bits.size()) * bits[0].size());
  for (const auto& b : bits)
    for (auto v : b.bits) target.push_back(float(v));
  return nn::bce_with_logits(logits,
                             nn::constant({int(bits.size()), bits[0].size()},
                                          std::move(target)));
}

namespace {

TotalResult weighted_total(const char* stage,
                           std::vector<std::pair<std::string, std::pair<float, Ten>>> terms) {
  TotalResult r;
  r.report.stage = stage;
  Ten total;
  double check = 0.0;
  for (auto& [name, wt] : terms) {
    auto& [w, t] = wt;
    double v = nn::item(t);
    r.report.parts[name] = v;
    check += double(w) * v;
    Ten scaled = nn::mul_scalar(t, w);
    total = total ? nn::add(total, scaled) : scaled;
  }
  r.total = total;
  r.report.total = nn::item(total);
  if (std::fabs(r.report.total - check) > 1e-5 * std::max(1.0, std::fabs(check)))
    throw std::runtime_error("loss total does not match weighted recomputation");
  return r;
}

}  // namespace

TotalResult total_anon(const AnonParts& p, const LossWeights& w) {
  return weighted_total("anonymization",
                        {{"div", {w.lambda_div, p.div}},
                         {"adv", {w.lambda_adv, p.adv}},
                         {"id", {w.lambda_id, p.id}},
                         {"geo", {w.lambda_geo, p.geo}},
                         {"hide", {w.lambda_hide, p.hide}}});
}

TotalResult total_rec(const RecParts& p, const LossWeights& w) {
  return weighted_total("recovery", {{"rec", {w.lambda_rec, p.rec}},
                                     {"adv", {w.lambda_adv, p.adv}},
                                     {"id", {w.lambda_id, p.id}},
                                     {"geo", {w.lambda_geo, p.geo}},
                                     {"hide", {w.lambda_hide, p.hide}}});
}

}  // namespace g2::losses
