#include "g2/dpim.hpp"

#include <cassert>
#include <cmath>

namespace g2::dpim {

using nn::Ten;

// ---- style conv ----

void StyleConv::init(Rng& rng, int ci, int co, int d_w, bool upsample_) {
  w = nn::param_randn(rng, {co, ci, 3, 3}, std::sqrt(2.0f / float(ci * 9)));
  bias = nn::param_zeros({co});
  affine.w = nn::param_randn(rng, {ci, d_w}, std::sqrt(1.0f / float(d_w)));
  affine.b = nn::param_fill({ci}, 1.0f);  // modulation starts near identity
  noise_strength = nn::param_zeros({1});
  upsample = upsample_;
}

void StyleConv::collect(nn::ParamMap& out, const std::string& prefix) const {
  nn::collect_param(out, prefix + ".w", w);
  nn::collect_param(out, prefix + ".bias", bias);
  affine.collect(out, prefix + ".affine");
  nn::collect_param(out, prefix + ".noise", noise_strength);
}

StyleConvOut style_block_forward(const Ten& f_gen, const Ten& w_latent,
                                 const StyleConv& block, const Ten* /*noise*/) {
  require(f_gen->shape.size() == 4, "style_block_forward: features must be [N,C,H,W]");
  require(w_latent->shape.size() == 2 && w_latent->shape[1] == block.affine.w->shape[1],
          "style_block_forward: latent dim mismatch");
  require(f_gen->shape[1] == block.w->shape[1],
          "style_block_forward: channel mismatch " + shape_str(f_gen->shape));

  Ten x = block.upsample ? nn::upsample2(f_gen) : f_gen;
  Ten s = block.affine.forward(w_latent);  // [N,Ci]

  // conv(x*s, w) == conv(x, w*s); demodulate by rsqrt(sum_taps (w*s)^2)
  Ten xs = nn::chan_scale(x, s);
  Ten y = nn::conv2d(xs, block.w, 1, 1);

  const int co = block.w->shape[0], ci = block.w->shape[1];
  Ten w2 = nn::reshape(nn::square(block.w), {co * ci, 9});
  Ten ones9 = nn::constant({9, 1}, std::vector<float>(9, 1.0f));
  Ten a = nn::reshape(nn::matmul(w2, ones9), {co, ci});
  Ten d = nn::rsqrt_(nn::add_scalar(
      nn::matmul(nn::square(s), a, /*transpose_b=*/true), 1e-8f));  // [N,Co]
  y = nn::chan_scale(y, d);
  y = nn::add_bias_chan(y, block.bias);

  StyleConvOut out;
  out.preact = y;
  out.out = nn::silu(y);
  return out;
}

// ---- IFF ----

void IFFState::init(Rng& rng, int feat_channels, bool per_channel_) {
  per_channel = per_channel_;
  int out_ch = per_channel ? feat_channels : 1;
  mask_conv = nn::Conv2dLayer(rng, 3 * feat_channels, out_ch, 1, 1, 0);
  // start near M = 0.5
  for (auto& v : mask_conv.w->val) v *= 0.2f;
}

void IFFState::collect(nn::ParamMap& out, const std::string& prefix) const {
  mask_conv.collect(out, prefix + ".mask");
}

IFFResult iff_fuse(const Ten& f_face, const Ten& f_inter, const Ten& f_hide,
                   const IFFState& iff, MaskOverride override_mask) {
  require(f_face->shape == f_inter->shape,
          "iff_fuse: F_face and F_inter must share shape");
  require(f_hide->shape == f_inter->shape, "iff_fuse: F_hide shape mismatch");

  IFFResult r;
  const Shape mask_shape = {f_face->shape[0], 1, f_face->shape[2], f_face->shape[3]};
  if (override_mask == MaskOverride::ForceOne) {
    r.mask = nn::constant(mask_shape, std::vector<float>(numel(mask_shape), 1.0f));
    r.f_blend = nn::add(f_face, f_hide);
    return r;
  }
  if (override_mask == MaskOverride::ForceZero) {
    r.mask = nn::constant(mask_shape, std::vector<float>(numel(mask_shape), 0.0f));
    r.f_blend = nn::add(f_inter, f_hide);
    return r;
  }

  Ten m = nn::sigmoid(iff.mask_conv.forward(nn::concat_axis1({f_face, f_inter, f_hide})));
#ifndef NDEBUG
  for (float v : m->val) assert(v > 0.0f && v < 1.0f && "fusion mask left (0,1)");
#endif
  r.mask = m;
  Ten one_minus = nn::sub(nn::constant_like(m, 1.0f), m);
  if (iff.per_channel)
    r.f_blend = nn::add(nn::add(nn::mul(f_face, m), nn::mul(f_inter, one_minus)), f_hide);
  else
    r.f_blend = nn::add(
        nn::add(nn::mask_scale(f_face, m), nn::mask_scale(f_inter, one_minus)), f_hide);
  return r;
}

// ---- mappers ----

namespace {

std::vector<nn::LinearLayer> make_mlp(Rng& rng, int d_in, int d_w) {
  std::vector<nn::LinearLayer> mlp;
  mlp.push_back(nn::LinearLayer::he(rng, d_in, d_w));
  mlp.push_back(nn::LinearLayer::he(rng, d_w, d_w));
  mlp.push_back(nn::LinearLayer::he(rng, d_w, d_w));
  mlp.push_back(nn::LinearLayer(rng, d_w, d_w, std::sqrt(1.0f / float(d_w))));
  return mlp;
}

Ten run_mlp(const std::vector<nn::LinearLayer>& mlp, const Ten& x) {
  Ten h = x;
  for (size_t i = 0; i < mlp.size(); ++i) {
    h = mlp[i].forward(h);
    if (i + 1 < mlp.size()) h = nn::silu(h);
  }
  return h;
}

}  // namespace

void MapperState::init(Rng& rng, int e_g_dim, int d_w_) {
  d_in = e_g_dim;
  d_w = d_w_;
  low = make_mlp(rng, e_g_dim, d_w);
  middle = make_mlp(rng, e_g_dim, d_w);
  high = make_mlp(rng, e_g_dim, d_w);
}

void MapperState::collect(nn::ParamMap& out, const std::string& prefix) const {
  auto one = [&](const std::vector<nn::LinearLayer>& mlp, const std::string& name) {
    for (size_t i = 0; i < mlp.size(); ++i)
      mlp[i].collect(out, prefix + "." + name + std::to_string(i));
  };
  one(low, "low");
  one(middle, "mid");
  one(high, "high");
}

StyleLatentsT map_latents(const MapperState& mappers, const Ten& e_g) {
  require(e_g->shape.size() == 2 && e_g->shape[1] == mappers.d_in,
          "map_latents: e_g dim mismatch " + shape_str(e_g->shape));
  return {run_mlp(mappers.low, e_g), run_mlp(mappers.middle, e_g),
          run_mlp(mappers.high, e_g)};
}

// ---- encoder ----

void EncoderState::init(Rng& rng, const NetConfig& cfg) {
  resolution = cfg.resolution;
  trunk.clear();
  lateral.clear();
  level_res.clear();
  int prev = 3;
  for (int r = cfg.resolution; r >= 8; r /= 2) {
    int c = cfg.channels(r);
    trunk.emplace_back(rng, prev, c, 3, r == cfg.resolution ? 1 : 2, 1);
    prev = c;
  }
  for (int r = 8; r <= cfg.resolution; r *= 2) {
    level_res.push_back(r);
    lateral.emplace_back(rng, cfg.channels(r), cfg.channels(r), 3, 1, 1);
  }
}

std::map<int, Ten> EncoderState::forward(const Ten& images) const {
  require(images->shape.size() == 4 && images->shape[1] == 3 &&
              images->shape[2] == resolution && images->shape[3] == resolution,
          "encode_face: resolution mismatch " + shape_str(images->shape));
  std::map<int, Ten> trunk_feats;
  Ten h = images;
  for (const auto& conv : trunk) {
    h = nn::silu(conv.forward(h));
    trunk_feats[h->shape[2]] = h;
  }
  std::map<int, Ten> out;
  for (size_t i = 0; i < level_res.size(); ++i) {
    int res = level_res[i];
    out[res] = nn::silu(lateral[i].forward(trunk_feats.at(res)));
  }
  return out;
}

void EncoderState::collect(nn::ParamMap& out, const std::string& prefix) const {
  for (size_t i = 0; i < trunk.size(); ++i)
    trunk[i].collect(out, prefix + ".trunk" + std::to_string(i));
  for (size_t i = 0; i < lateral.size(); ++i)
    lateral[i].collect(out, prefix + ".lat" + std::to_string(i));
}

// ---- generator ----

void GeneratorState::init(Rng& rng, const NetConfig& cfg_) {
  cfg = cfg_;
  const auto levels = cfg.level_resolutions();
  const_input = nn::param_randn(rng, {cfg.channels(4) * 4 * 4}, 1.0f);
  convs.clear();
  iff_blocks.clear();
  hide_projs.clear();
  for (size_t li = 0; li < levels.size(); ++li) {
    int r = levels[li];
    int ci = li == 0 ? cfg.channels(4) : cfg.channels(levels[li - 1]);
    StyleConv c1, c2;
    c1.init(rng, ci, cfg.channels(r), cfg.d_w, /*upsample=*/li != 0);
    c2.init(rng, cfg.channels(r), cfg.channels(r), cfg.d_w, false);
    convs.push_back(std::move(c1));
    convs.push_back(std::move(c2));
    if (r >= 8) {
      IFFState iff;
      iff.init(rng, cfg.channels(r), cfg.mask_per_channel);
      iff_blocks.push_back(std::move(iff));
      int depth = (cfg.n_bits() + r * r - 1) / (r * r);
      password::ProjectionState proj;
      proj.init(rng, depth, cfg.channels(r));
      // hiding enters at low amplitude so early images stay face-like
      for (auto& v : proj.w->val) v *= 0.1f;
      hide_projs.push_back(std::move(proj));
    }
  }
  to_rgb = nn::Conv2dLayer(rng, cfg.channels(cfg.resolution), 3, 1, 1, 0);
}

void GeneratorState::collect_trunk(nn::ParamMap& out, const std::string& prefix) const {
  nn::collect_param(out, prefix + ".const", const_input);
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].collect(out, prefix + ".style" + std::to_string(i));
  to_rgb.collect(out, prefix + ".to_rgb");
}

void GeneratorState::collect_rest(nn::ParamMap& out, const std::string& prefix) const {
  for (size_t i = 0; i < iff_blocks.size(); ++i)
    iff_blocks[i].collect(out, prefix + ".iff" + std::to_string(i));
  for (size_t i = 0; i < hide_projs.size(); ++i)
    hide_projs[i].collect(out, prefix + ".hide" + std::to_string(i));
}

void GeneratorState::collect(nn::ParamMap& out, const std::string& prefix) const {
  collect_trunk(out, prefix);
  collect_rest(out, prefix);
}

Ten generate(const GeneratorState& g, const std::map<int, Ten>& pyramid,
             const StyleLatentsT& latents,
             const std::vector<password::PasswordBits>& bits,
             const GenerateOptions& opts) {
  const auto& cfg = g.cfg;
  const int n = latents.low->shape[0];
  require(int(bits.size()) == n, "generate: bits batch mismatch");
  for (const auto& b : bits)
    require(b.size() == cfg.n_bits(), "generate: password length mismatch");

  // tile the learned constant across the batch
  int c4 = cfg.channels(4);
  Ten ones = nn::constant({n, 1}, std::vector<float>(n, 1.0f));
  Ten x = nn::reshape(nn::matmul(ones, nn::reshape(g.const_input, {1, c4 * 16})),
                      {n, c4, 4, 4});

  auto latent_for = [&](int layer) {
    switch (cfg.latent_band(layer)) {
      case 0: return latents.low;
      case 1: return latents.middle;
      default: return latents.high;
    }
  };

  auto add_noise = [&](Ten h, const StyleConv& sc, int r) {
    if (!cfg.noise_injection) return h;
    require(opts.noise_rng != nullptr, "generate: noise rng required");
    Ten noise = nn::constant(
        {n, 1, r, r}, nn::randn_vec(*opts.noise_rng, std::int64_t(n) * r * r, 1.0f));
    Ten spatial = nn::mask_scale(nn::constant_like(h, 1.0f), noise);
    Ten tiled = nn::matmul(ones, nn::reshape(sc.noise_strength, {1, 1}));  // [N,1]
    Ten per_chan = nn::matmul(
        tiled, nn::constant({1, h->shape[1]}, std::vector<float>(h->shape[1], 1.0f)));
    return nn::add(h, nn::chan_scale(spatial, per_chan));
  };

  const auto levels = cfg.level_resolutions();
  int layer = 0;
  int fuse_idx = 0;
  for (size_t li = 0; li < levels.size(); ++li) {
    int r = levels[li];
    Ten f_inter = style_block_forward(x, latent_for(layer), g.convs[layer]).out;
    f_inter = add_noise(f_inter, g.convs[layer], r);
    ++layer;

    Ten f_blend = f_inter;
    if (r >= 8) {
      Ten v = password::batch_password_tensor(bits, r, r);
      Ten f_hide = g.hide_projs[fuse_idx].forward(v);
      if (cfg.iff) {
        auto it = pyramid.find(r);
        require(it != pyramid.end(),
                "generate: pyramid missing level " + std::to_string(r));
        f_blend = iff_fuse(it->second, f_inter, f_hide, g.iff_blocks[fuse_idx],
                           opts.mask_override)
                      .f_blend;
      } else {
        f_blend = nn::add(f_inter, f_hide);
      }
      ++fuse_idx;
    }

    x = style_block_forward(f_blend, latent_for(layer), g.convs[layer]).out;
    x = add_noise(x, g.convs[layer], r);
    ++layer;
  }
  return nn::tanh_(g.to_rgb.forward(x));
}

// ---- discriminator ----

void DiscriminatorState::init(Rng& rng, int resolution_) {
  resolution = resolution_;
  convs.clear();
  convs.emplace_back(rng, 3, 16, 3, 2, 1);
  convs.emplace_back(rng, 16, 32, 3, 2, 1);
  convs.emplace_back(rng, 32, 48, 3, 2, 1);
  convs.emplace_back(rng, 48, 64, 3, 2, 1);
  fc1 = nn::LinearLayer::he(rng, 64, 64);
  fc2 = nn::LinearLayer(rng, 64, 1, 0.1f);
}

Ten DiscriminatorState::forward(const Ten& images) const {
  require(images->shape.size() == 4 && images->shape[1] == 3 &&
              images->shape[2] == resolution && images->shape[3] == resolution,
          "discriminator: image shape mismatch");
  Ten h = images;
  for (const auto& c : convs) h = nn::silu(c.forward(h));
  h = nn::global_avg_pool(h);
  h = nn::silu(fc1.forward(h));
  return fc2.forward(h);
}

namespace {

Ten dsilu(const Ten& z) {
  Ten s = nn::sigmoid(z);
  return nn::mul(
      s, nn::add_scalar(nn::mul(z, nn::sub(nn::constant_like(s, 1.0f), s)), 1.0f));
}

}  // namespace

Ten DiscriminatorState::input_gradient(const Ten& images) const {
  const int n = images->shape[0];
  std::vector<Ten> pre;
  std::vector<Shape> in_shapes;
  Ten h = images;
  for (const auto& c : convs) {
    in_shapes.push_back(h->shape);
    Ten z = c.forward(h);
    pre.push_back(z);
    h = nn::silu(z);
  }
  Shape pooled_shape = h->shape;
  Ten p = nn::global_avg_pool(h);
  Ten z5 = fc1.forward(p);

  // reverse chain built from differentiable primitives, so a penalty on
  // the result can be differentiated w.r.t. the parameters
  Ten ones = nn::constant({n, 1}, std::vector<float>(n, 1.0f));
  Ten g = nn::matmul(ones, fc2.w);  // [N, C5]
  g = nn::mul(g, dsilu(z5));
  g = nn::matmul(g, fc1.w);         // [N, C4]

  float inv_hw = 1.0f / float(pooled_shape[2] * pooled_shape[3]);
  Ten g4 = nn::mul_scalar(
      nn::chan_scale(
          nn::constant(pooled_shape, std::vector<float>(numel(pooled_shape), 1.0f)), g),
      inv_hw);
  for (int i = int(convs.size()) - 1; i >= 0; --i) {
    Ten gz = nn::mul(g4, dsilu(pre[i]));
    g4 = nn::conv2d_transpose(gz, convs[i].w, convs[i].stride, convs[i].pad,
                              in_shapes[i][2], in_shapes[i][3]);
  }
  return g4;
}

void DiscriminatorState::collect(nn::ParamMap& out, const std::string& prefix) const {
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].collect(out, prefix + ".conv" + std::to_string(i));
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

// ---- system ----

void SystemState::init(Rng& rng, const NetConfig& cfg_, std::uint64_t model_seed,
                       int model_vertices) {
  cfg = cfg_;
  model = geometry::build_toy_3dmm(model_seed, model_vertices, cfg.d_s, cfg.d_e);
  embedder.init(rng, cfg.resolution, cfg.d_id);
  estimator.init(rng, cfg.resolution, cfg.d_s, cfg.d_e);
  dummy.init(rng, cfg.d_z, cfg.d_id);
  encoder.init(rng, cfg);
  mappers.init(rng, cfg.e_g_dim(), cfg.d_w);
  generator.init(rng, cfg);
  extractor.init(rng, cfg.resolution, cfg.n_bits());
  discriminator.init(rng, cfg.resolution);
}

void SystemState::collect_all(nn::ParamMap& out) const {
  embedder.collect(out, "embedder");
  estimator.collect(out, "estimator");
  dummy.collect(out, "dummy");
  encoder.collect(out, "encoder");
  mappers.collect(out, "mappers");
  generator.collect(out, "generator");
  extractor.collect(out, "extractor");
  discriminator.collect(out, "discriminator");
}

void SystemState::collect_trainable(nn::ParamMap& out) const {
  nn::ParamMap all;
  collect_all(all);
  for (auto& [name, p] : all)
    if (p->trainable) out.emplace_back(name, p);
}

std::vector<float> SystemState::make_e_g(
    const std::vector<float>& e_id, const geometry::GeometryCoefficients& coeffs) const {
  require(int(e_id.size()) == cfg.d_id, "make_e_g: identity dim mismatch");
  geometry::GeometryCoefficients used = coeffs;
  if (!cfg.geop) {
    std::fill(used.c_s.begin(), used.c_s.end(), 0.0f);
    std::fill(used.c_exp.begin(), used.c_exp.end(), 0.0f);
    used.c_pose.fill(0.0f);
  }
  return geometry::assemble_geometry_embedding(e_id, used).e_g;
}

// ---- plain wrappers ----

FeaturePyramid encode_face(const ImageTensor& x, const EncoderState& enc) {
  auto levels = enc.forward(nn::batch_images({x}));
  FeaturePyramid out;
  for (auto& [r, t] : levels) {
    out.levels[r] = t->val;
    out.shapes[r] = t->shape;
  }
  return out;
}

StyleLatents map_latents(const geometry::GeometryAwareEmbedding& e_g,
                         const MapperState& mappers) {
  auto t = map_latents(mappers, nn::constant({1, int(e_g.e_g.size())}, e_g.e_g));
  return {t.low->val, t.middle->val, t.high->val};
}

AnonymizeResult anonymize(const ImageTensor& x, const identity::NoiseVector& z,
                          const SystemState& system) {
  require(x.res == system.cfg.resolution, "anonymize: resolution mismatch");
  AnonymizeResult r;
  auto e_id = identity::embed_identity(x, system.embedder);
  r.bits_embedded = password::encode_identity_to_bits(e_id);
  auto coeffs = geometry::estimate_coefficients(x, system.estimator);
  r.e_dummy = identity::generate_dummy_id(z, system.dummy);

  auto e_g = system.make_e_g(r.e_dummy.values, coeffs);
  auto lat = map_latents(system.mappers, nn::constant({1, int(e_g.size())}, e_g));
  auto pyramid = system.encoder.forward(nn::batch_images({x}));
  auto y = generate(system.generator, pyramid, lat, {r.bits_embedded});
  r.y = nn::image_from_tensor(y, 0);
  return r;
}

RecoverResult recover(const ImageTensor& y, const SystemState& system) {
  require(y.res == system.cfg.resolution, "recover: resolution mismatch");
  RecoverResult r;
  auto ext = password::extract_password(y, system.extractor);
  auto dec = password::decode_bits_to_identity(ext.bits);
  r.corruption_warning = dec.corrupted;
  r.corrupted_floats = dec.corrupted_count;

  auto coeffs = geometry::estimate_coefficients(y, system.estimator);
  auto e_g = system.make_e_g(dec.embedding.values, coeffs);
  auto lat = map_latents(system.mappers, nn::constant({1, int(e_g.size())}, e_g));
  auto pyramid = system.encoder.forward(nn::batch_images({y}));
  // extracted bits double as the password input; recovery quality is
  // contractually independent of their content
  auto xh = generate(system.generator, pyramid, lat, {ext.bits});
  r.x_hat = nn::image_from_tensor(xh, 0);
  return r;
}

}  // namespace g2::dpim
